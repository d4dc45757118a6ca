#pragma once

#include <cstddef>
#include <functional>

namespace probekit {

/// Worker count: PROBEKIT_THREADS when set (>= 1), otherwise the hardware
/// concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over contiguous chunks. Callers write results
/// into per-index slots and reduce afterwards, so results never depend on the
/// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace probekit
