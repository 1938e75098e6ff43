#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace msconv {

/// SplitMix64. Self-contained so that a (seed, shape, std) triple maps to the
/// same bits on every standard library.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in (0, 1].
    double next_unit() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

/// Fills `out` with N(0, stddev^2) draws via Box-Muller on a SplitMix64 stream.
void fill_normal(std::span<double> out, std::uint64_t seed, double stddev);

/// FNV-1a, used to derive per-parameter sub-seeds from parameter names.
std::uint64_t fnv1a(std::string_view s);

/// Mixes a master seed with a parameter name into an independent sub-seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
    return SplitMix64(master ^ fnv1a(name)).next();
}

} // namespace msconv
