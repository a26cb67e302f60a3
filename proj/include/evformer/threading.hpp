#pragma once

#include <cstdint>
#include <functional>

namespace evf {

// Worker cap: hardware concurrency, clamped by the EVFORMER_THREADS
// environment variable and by `requested` when positive.
int worker_count(int requested = 0);

// Runs fn(i) for i in [0, n) on `threads` workers (resolved via
// worker_count) with static chunking. The first exception is rethrown on
// the caller after all workers join.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace evf
