// threading.hpp — deterministic parallel map over an index range.
// Results must not depend on the worker count; callers write disjoint slots.

#pragma once

#include <cstddef>
#include <functional>

namespace fstomo {

/// Worker count: --threads if set, else FSTOMO_THREADS, else hardware.
int thread_count();
void set_thread_count(int n);  // n <= 0 restores the default

/// Invoke fn(i) for i in [0, n), distributed over thread_count() workers.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace fstomo
