#pragma once

#include <cstdint>
#include <functional>

namespace ad {

// Number of worker threads: AD_THREADS if set (>=1), else hardware concurrency.
int worker_count();

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one chunk per
// worker. Callers must write results into disjoint preallocated slots keyed by
// index so the output is identical no matter how chunks are scheduled.
// Serial fallback when n is small or one worker is configured.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ad
