#pragma once

#include <cstddef>
#include <functional>

namespace psim {

/// Logical core count (at least 1).
int default_jobs();

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown by any call is rethrown after all threads finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace psim
