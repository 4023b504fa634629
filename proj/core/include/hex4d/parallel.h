#pragma once

#include <cstdint>
#include <utility>

namespace hex4d {

// Worker count for parallel_for. Resolution order: set_threads() >
// HEX4D_THREADS env var > hardware concurrency.
int num_threads();
void set_threads(int n);

namespace detail {
void parallel_run(int64_t n, void* ctx, void (*fn)(void*, int64_t, int64_t, int));
}

// Statically partitions [0, n) into num_threads() contiguous slices and runs
// f(begin, end, thread_index) on each. The partition depends only on n and the
// thread count, so results that are written to disjoint slices (or reduced in
// slice order) are bitwise reproducible.
template <class F>
void parallel_for(int64_t n, F&& f) {
  auto thunk = [](void* ctx, int64_t b, int64_t e, int tid) {
    (*static_cast<F*>(ctx))(b, e, tid);
  };
  detail::parallel_run(n, &f, thunk);
}

}  // namespace hex4d
