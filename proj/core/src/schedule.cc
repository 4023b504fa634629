#include "hex4d/schedule.h"

#include <cmath>

#include "hex4d/common.h"

namespace hex4d {

NoiseSchedule NoiseSchedule::linear_beta(int T, double beta_start, double beta_end) {
  H4D_CHECK(T >= 1, "schedule needs T >= 1");
  H4D_CHECK(beta_start > 0 && beta_end < 1 && beta_start <= beta_end, "bad beta ramp ",
            beta_start, "..", beta_end);
  NoiseSchedule ns;
  ns.T = T;
  ns.abar_.resize(size_t(T) + 1);
  ns.abar_[0] = 1.0;
  double acc = 1.0;
  for (int i = 1; i <= T; ++i) {
    double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (i - 1) / (T - 1);
    acc *= 1.0 - beta;
    ns.abar_[size_t(i)] = acc;
  }
  ns.validate();
  return ns;
}

double NoiseSchedule::abar(int tau) const {
  H4D_CHECK(tau >= 1 && tau <= T, "timestep ", tau, " outside [1,", T, "]");
  return abar_[size_t(tau)];
}

double NoiseSchedule::omega(int tau) const {
  switch (omega_tag) {
    case Omega::one_minus_abar: return 1.0 - abar(tau);
    case Omega::constant: return (void)abar(tau), 1.0;  // still bounds-checks tau
  }
  return 1.0;
}

void NoiseSchedule::validate() const {
  H4D_CHECK(static_cast<int>(abar_.size()) == T + 1, "schedule table size mismatch");
  H4D_CHECK(abar_[0] == 1.0, "abar_0 must be 1");
  for (int i = 1; i <= T; ++i) {
    H4D_CHECK(abar_[size_t(i)] > 0.0 && abar_[size_t(i)] < abar_[size_t(i) - 1],
              "abar must be strictly decreasing in (0,1)");
  }
}

int sample_timestep(Rng& rng, const NoiseSchedule& ns, double lo, double hi) {
  H4D_CHECK(lo >= 0.0 && lo <= hi && hi <= 1.0, "bad tau range [", lo, ",", hi, "]");
  int a = std::max(1, static_cast<int>(std::ceil(lo * ns.T)));
  int b = std::min(ns.T, static_cast<int>(std::floor(hi * ns.T)));
  H4D_CHECK(a <= b, "empty tau range [", lo, ",", hi, "] for T=", ns.T);
  return rng.uniform_int(a, b);
}

TauRange tau_range_at(double progress) {
  H4D_CHECK(progress >= 0.0 && progress <= 1.0, "progress ", progress, " outside [0,1]");
  TauRange r;
  r.hi = 0.98 + (0.5 - 0.98) * progress;
  return r;
}

}  // namespace hex4d
