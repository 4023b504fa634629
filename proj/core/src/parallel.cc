#include "hex4d/parallel.h"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace hex4d {

namespace {
std::atomic<int> g_threads{0};

int default_threads() {
  if (const char* env = std::getenv("HEX4D_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}
}  // namespace

int num_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n <= 0) {
    n = default_threads();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_threads(int n) { g_threads.store(std::max(1, n), std::memory_order_relaxed); }

namespace detail {

void parallel_run(int64_t n, void* ctx, void (*fn)(void*, int64_t, int64_t, int)) {
  if (n <= 0) return;
  int nt = std::min<int64_t>(num_threads(), n);
  if (nt <= 1) {
    fn(ctx, 0, n, 0);
    return;
  }
  int64_t chunk = (n + nt - 1) / nt;
#pragma omp parallel num_threads(nt)
  {
    int tid = omp_get_thread_num();
    int64_t b = tid * chunk;
    int64_t e = std::min(n, b + chunk);
    if (b < e) fn(ctx, b, e, tid);
  }
}

}  // namespace detail
}  // namespace hex4d
