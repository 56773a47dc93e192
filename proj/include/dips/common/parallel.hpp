#pragma once

#include <cstddef>
#include <functional>

namespace dips {

// Worker count: DIPS_THREADS when set, otherwise the hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; the first
// exception thrown by any worker is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dips
