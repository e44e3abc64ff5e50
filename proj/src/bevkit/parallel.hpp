#pragma once

#include <cstddef>
#include <functional>

namespace bevkit {

// Worker count used by parallel_for. BEVKIT_THREADS in the environment
// overrides whatever was set programmatically.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs body(i) for i in [0, n) over contiguous chunks. Callers must write to
// disjoint locations only; results are then schedule-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bevkit
