#pragma once

// Work sharing over std::thread. Each index is processed exactly once and
// results are written by index, so output never depends on scheduling.

#include <cstddef>
#include <functional>

namespace gradpaint {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace gradpaint
