#pragma once

#include <cstddef>
#include <functional>

namespace depthref {

/// Process-wide bound on worker threads. 0 means "use hardware concurrency".
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(i) for i in [0, n). Work is split into contiguous static chunks so
/// each index is always handled by exactly one call; results written to
/// per-index slots are therefore independent of the thread count.
/// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace depthref
