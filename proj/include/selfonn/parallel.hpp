#pragma once

#include <cstddef>
#include <functional>

namespace selfonn {

// Upper bound on worker threads used by the kernels. 0 means hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Runs body(i) for i in [0, count). Iterations are independent; callers that
// reduce across iterations must do so afterwards in index order.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace selfonn
