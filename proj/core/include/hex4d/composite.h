#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hex4d/common.h"

namespace hex4d {

// Sample layout for a batch of rays that intersect the scene bounds. Rays are
// contiguous: ray r owns sample rows [offsets[r], offsets[r+1]). Samples along
// a ray use one constant bin width delta[r] = (far - near) / nsamples, so a
// homogeneous medium of density sigma over length L composites to opacity
// exactly 1 - exp(-sigma * L).
template <class S>
struct CompositePlan {
  int nrays = 0;
  std::vector<int64_t> offsets;  // nrays + 1
  std::vector<S> tvals;          // per sample, distance along the ray
  std::vector<S> delta;          // per ray
  std::array<S, 3> bg = {S(1), S(1), S(1)};
  S weight_floor = S(1e-6);      // depth normalizer floor

  int64_t nsamples() const { return offsets.empty() ? 0 : offsets.back(); }

  void validate() const {
    H4D_CHECK(static_cast<int>(offsets.size()) == nrays + 1,
              "composite plan offsets size ", offsets.size(), " for ", nrays, " rays");
    H4D_CHECK(static_cast<int>(delta.size()) == nrays, "composite plan delta size mismatch");
    H4D_CHECK(static_cast<int64_t>(tvals.size()) == nsamples(), "composite plan tvals size mismatch");
    for (int r = 0; r < nrays; ++r)
      H4D_CHECK(offsets[r + 1] > offsets[r], "composite plan has empty ray ", r);
  }
};

// Emission-absorption compositing of one ray. sigma/rgb point at the ray's
// first sample (sigma stride 1, rgb stride 3). Outputs premultiplied radiance
// over the background, total opacity, and opacity-normalized expected depth.
// If weights != nullptr the per-sample weights w_i = alpha_i * T_i are stored.
template <class S>
inline void composite_ray(const S* sigma, const S* rgb, const S* tvals, int64_t n, S delta,
                          const S bg[3], S weight_floor, S out_rgb[3], S* out_opacity,
                          S* out_depth, S* weights = nullptr) {
  S T = S(1);
  S acc[3] = {S(0), S(0), S(0)};
  S acc_w = S(0);
  S acc_d = S(0);
  for (int64_t i = 0; i < n; ++i) {
    const S alpha = S(1) - std::exp(-sigma[i] * delta);
    const S w = alpha * T;
    acc[0] += w * rgb[3 * i + 0];
    acc[1] += w * rgb[3 * i + 1];
    acc[2] += w * rgb[3 * i + 2];
    acc_w += w;
    acc_d += w * tvals[i];
    if (weights) weights[i] = w;
    T *= S(1) - alpha;
  }
  for (int c = 0; c < 3; ++c) out_rgb[c] = acc[c] + T * bg[c];
  *out_opacity = acc_w;
  *out_depth = acc_d / std::max(acc_w, weight_floor);
}

// Reverse-mode kernel for composite_ray. g_* are the adjoints of the five ray
// outputs; gradients are accumulated into d_sigma / d_rgb. Derivation: with
// A_i = dL/dw_i = g_rgb . (c_i - bg_contribution) + g_op + g_depth-term,
// dL/dsigma_i = delta * (T_{i+1} * A_i - sum_{j>i} w_j A_j).
template <class S>
inline void composite_ray_backward(const S* sigma, const S* rgb, const S* tvals, int64_t n,
                                   S delta, const S bg[3], S weight_floor, const S g_rgb[3],
                                   S g_opacity, S g_depth, S* d_sigma, S* d_rgb) {
  // Recompute the forward pass quantities.
  S T = S(1);
  S acc_w = S(0);
  S acc_d = S(0);
  std::vector<S> wbuf(static_cast<size_t>(n));
  std::vector<S> Tafter(static_cast<size_t>(n));  // T_{i+1}
  for (int64_t i = 0; i < n; ++i) {
    const S alpha = S(1) - std::exp(-sigma[i] * delta);
    const S w = alpha * T;
    wbuf[static_cast<size_t>(i)] = w;
    acc_w += w;
    acc_d += w * tvals[i];
    T *= S(1) - alpha;
    Tafter[static_cast<size_t>(i)] = T;
  }
  const S denom = std::max(acc_w, weight_floor);
  const S depth = acc_d / denom;
  const S gb = g_rgb[0] * bg[0] + g_rgb[1] * bg[1] + g_rgb[2] * bg[2];

  // dL/dw_i. Since sum_i w_i + T_final == 1 identically (telescoping), the
  // forward pass equals sum_i w_i * (c_i - bg) + bg, so the background simply
  // contributes -g.bg per unit weight.
  std::vector<S> A(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    S a = g_rgb[0] * rgb[3 * i + 0] + g_rgb[1] * rgb[3 * i + 1] + g_rgb[2] * rgb[3 * i + 2];
    a += g_opacity;
    a -= gb;  // background displaced by this sample's opacity
    if (acc_w > weight_floor) {
      a += g_depth * (tvals[i] - depth) / denom;
    } else {
      a += g_depth * tvals[i] / denom;
    }
    A[static_cast<size_t>(i)] = a;
  }

  S suffix = S(0);  // sum_{j>i} w_j A_j
  for (int64_t i = n - 1; i >= 0; --i) {
    d_sigma[i] += delta * (Tafter[static_cast<size_t>(i)] * A[static_cast<size_t>(i)] - suffix);
    const S w = wbuf[static_cast<size_t>(i)];
    d_rgb[3 * i + 0] += w * g_rgb[0];
    d_rgb[3 * i + 1] += w * g_rgb[1];
    d_rgb[3 * i + 2] += w * g_rgb[2];
    suffix += w * A[static_cast<size_t>(i)];
  }
}

}  // namespace hex4d
