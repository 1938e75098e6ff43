#include "msconv/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace msconv {

int configured_threads() {
    const char* env = std::getenv("MSCONV_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0') return 1;
    return static_cast<int>(std::clamp(v, 1L, 64L));
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int threads = std::min<std::int64_t>(configured_threads(), n);
    if (threads <= 1 || n < 4) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

} // namespace msconv
