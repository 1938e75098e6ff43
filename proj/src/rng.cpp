#include "msconv/rng.hpp"

#include <cmath>
#include <numbers>

namespace msconv {

void fill_normal(std::span<double> out, std::uint64_t seed, double stddev) {
    SplitMix64 rng(seed);
    std::size_t i = 0;
    while (i < out.size()) {
        // Box-Muller; u1 in (0,1] keeps the log finite.
        const double u1 = rng.next_unit();
        const double u2 = rng.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        out[i++] = stddev * (r * std::cos(a));
        if (i < out.size()) out[i++] = stddev * (r * std::sin(a));
    }
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace msconv
