#pragma once

#include <cstddef>
#include <functional>

namespace mrreparam {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs exactly
/// once; callers write results by index so the outcome is schedule-independent.
/// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Worker count from MRREPARAM_WORKERS, or `fallback` when unset or invalid.
int default_workers(int fallback = 1);

}  // namespace mrreparam
