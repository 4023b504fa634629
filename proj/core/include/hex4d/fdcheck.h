#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "hex4d/param_store.h"

namespace hex4d {

struct FdOptions {
  double h = 1e-4;              // central-difference step
  double abs_floor = 1e-6;      // denominators below this count as "both tiny"
  int64_t max_per_param = 64;   // subsample cap per parameter tensor
  uint64_t seed = 1234;         // subsampling seed
  double kink_tol = 0.25;       // one-sided slope disagreement that flags a kink
};

struct FdReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t excluded = 0;  // entries skipped as non-smooth at the probe point
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference verification of reverse-mode gradients.
//
// `loss` evaluates the objective from the store's current values without side
// effects; `backward` zeroes nothing itself — the checker zeroes grads, calls
// it once, and expects the store grads to hold d(loss)/d(param).
//
// The checker first evaluates `loss` twice and demands bitwise-equal results
// (a gradient check against a nondeterministic objective is meaningless);
// otherwise it raises ContractError. For each probed entry the forward and
// backward one-sided slopes are compared: if they disagree by more than
// kink_tol relative, the probe straddles a nondifferentiable kink and is
// excluded rather than reported as a gradient error.
template <class S>
FdReport finite_diff_check(ParamStore<S>& ps, const std::function<double()>& loss,
                           const std::function<void()>& backward, const FdOptions& opt = {});

extern template FdReport finite_diff_check(ParamStore<float>&, const std::function<double()>&,
                                           const std::function<void()>&, const FdOptions&);
extern template FdReport finite_diff_check(ParamStore<double>&, const std::function<double()>&,
                                           const std::function<void()>&, const FdOptions&);

}  // namespace hex4d
