#pragma once

#include <cstdint>
#include <functional>

namespace msconv {

/// Worker count from MSCONV_THREADS (clamped to [1, 64]); 1 when unset or invalid.
/// Read per call so tests can vary the environment within one process.
int configured_threads();

/// Runs fn over [0, n) split into contiguous chunks across configured_threads()
/// workers. Callers must write disjoint outputs only; there is no cross-thread
/// reduction, so results are bit-identical for every thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace msconv
