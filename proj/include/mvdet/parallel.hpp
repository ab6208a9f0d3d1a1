#pragma once

#include <cstddef>
#include <functional>

namespace mvdet {

// Worker count used by parallel_for. 0 selects hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; the
// result is then independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace mvdet
