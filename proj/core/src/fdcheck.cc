#include "hex4d/fdcheck.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hex4d/rng.h"

namespace hex4d {

template <class S>
FdReport finite_diff_check(ParamStore<S>& ps, const std::function<double()>& loss,
                           const std::function<void()>& backward, const FdOptions& opt) {
  const double l0 = loss();
  const double l0b = loss();
  H4D_CHECK(l0 == l0b,
            "objective is not deterministic (", l0, " vs ", l0b,
            "); pin all sampling before gradient checking");
  H4D_CHECK(std::isfinite(l0), "objective is not finite at the checked point");

  ps.zero_grads();
  backward();

  // Snapshot analytic grads; FD probes reuse the store values in place.
  std::vector<Tensor<S>> analytic;
  analytic.reserve(static_cast<size_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) analytic.push_back(ps.entry(i).grad);

  FdReport rep;
  Rng rng(opt.seed);
  const double h = opt.h;
  for (int i = 0; i < ps.size(); ++i) {
    auto& e = ps.entry(i);
    const int64_t n = e.value.size();
    std::vector<int64_t> idx;
    if (n <= opt.max_per_param) {
      idx.resize(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k) idx[static_cast<size_t>(k)] = k;
    } else {
      // Sample without replacement via partial Fisher-Yates over an index pool.
      std::vector<int64_t> pool(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k) pool[static_cast<size_t>(k)] = k;
      for (int64_t k = 0; k < opt.max_per_param; ++k) {
        const int64_t j = rng.uniform_int(k, n - 1);
        std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
      }
      idx.assign(pool.begin(), pool.begin() + static_cast<long>(opt.max_per_param));
    }

    for (int64_t k : idx) {
      const S saved = e.value[k];
      e.value[k] = static_cast<S>(static_cast<double>(saved) + h);
      const double lp = loss();
      e.value[k] = static_cast<S>(static_cast<double>(saved) - h);
      const double lm = loss();
      e.value[k] = saved;
      // One-sided slopes disagree at a kink (even for piecewise-linear
      // objectives, where two central differences at different steps would
      // agree); skip such probes instead of flagging the analytic gradient.
      const double f_fwd = (lp - l0) / h;
      const double f_bwd = (l0 - lm) / h;
      const double mag = std::max({std::abs(f_fwd), std::abs(f_bwd), opt.abs_floor});
      if (std::abs(f_fwd - f_bwd) > opt.kink_tol * mag) {
        ++rep.excluded;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double an = static_cast<double>(analytic[static_cast<size_t>(i)][k]);
      const double denom = std::max({std::abs(an), std::abs(fd), opt.abs_floor});
      const double rel = std::abs(an - fd) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = e.name;
        rep.worst_index = k;
        rep.worst_analytic = an;
        rep.worst_numeric = fd;
      }
    }
  }
  return rep;
}

template FdReport finite_diff_check(ParamStore<float>&, const std::function<double()>&,
                                    const std::function<void()>&, const FdOptions&);
template FdReport finite_diff_check(ParamStore<double>&, const std::function<double()>&,
                                    const std::function<void()>&, const FdOptions&);

}  // namespace hex4d
