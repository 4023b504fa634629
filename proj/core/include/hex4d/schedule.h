#pragma once

#include <vector>

#include "hex4d/rng.h"

namespace hex4d {

// DDPM-style noise schedule: cumulative signal fractions abar_tau from a
// linear beta ramp, plus the SDS weighting omega(tau).
struct NoiseSchedule {
  enum class Omega { one_minus_abar, constant };

  int T = 1000;
  std::vector<double> abar_;  // index 0..T, abar_[0] = 1
  Omega omega_tag = Omega::one_minus_abar;

  static NoiseSchedule linear_beta(int T = 1000, double beta_start = 1e-4,
                                   double beta_end = 2e-2);

  double abar(int tau) const;  // tau in [1, T]
  double omega(int tau) const;
  void validate() const;  // strictly decreasing, abar_0 = 1, all in (0,1]
};

// Uniform integer timestep in [ceil(lo*T), floor(hi*T)], clipped to [1, T].
int sample_timestep(Rng& rng, const NoiseSchedule& ns, double lo, double hi);

// Annealed upper fraction for the tau range: 0.98 at progress 0 shrinking
// linearly to 0.5 at progress 1. The lower fraction stays at 0.02.
struct TauRange {
  double lo = 0.02, hi = 0.98;
};
TauRange tau_range_at(double progress);

}  // namespace hex4d
