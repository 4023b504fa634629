#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hex4d/render.h"
#include "hex4d/rng.h"
#include "hex4d/tensor.h"

namespace hex4d {

// Weighted-total coefficients. The orientation weight ramps linearly from
// orient_lo to orient_hi over the first orient_ramp_iters iterations and
// stays flat afterwards.
struct LossWeights {
  double sds = 0.1;
  double icl = 2500.0;
  double recon = 500.0;
  double mask = 50.0;
  double normal_smooth = 2.0;
  double orient_lo = 1.0;
  double orient_hi = 20.0;
  int orient_ramp_iters = 5000;

  double orientation_at(int iteration) const;
  void validate() const;
};

struct LossComponents {
  double sds = 0.0;
  double icl = 0.0;
  double recon = 0.0;
  double mask = 0.0;
  double normal_smooth = 0.0;
  double orientation = 0.0;
};

// Weighted sum of the per-step components. A non-finite component raises a
// NumericError naming it.
double total_loss(const LossComponents& c, const LossWeights& w, int iteration);

// Masked reconstruction against a dataset frame: the ground truth is the
// frame inside its mask composited over the training background outside it,
// the distance is a mean over all elements (MSE, or L1 behind the flag).
// Optional closed-form gradient with respect to the render.
template <class S>
S recon_loss(const Tensor<S>& render, const Tensor<S>& frame, const Tensor<S>& mask,
             const std::array<double, 3>& bg, bool l1 = false, Tensor<S>* grad = nullptr);

// Mean squared (or absolute) error between rendered opacity and the mask.
template <class S>
S mask_loss(const Tensor<S>& opacity, const Tensor<S>& mask, bool l1 = false,
            Tensor<S>* grad = nullptr);

// Ref-NeRF orientation penalty sum_i w_i * max(0, n_i . d_i)^2 for samples
// with unit view directions d_i. Weights are constants here (no gradient);
// rows flagged invalid contribute nothing. grad_normals, when requested, is
// dL/dn (N,3).
template <class S>
S orientation_loss(const Tensor<S>& weights, const Tensor<S>& normals,
                   const std::vector<uint8_t>& valid, const Tensor<S>& dirs,
                   Tensor<S>* grad_normals = nullptr);

// Mean ||n_a - n_b||^2 over rows where both normals are valid; pairs with an
// invalid member are skipped. Gradients are with respect to each normal set.
template <class S>
S normal_pair_loss(const Tensor<S>& na, const Tensor<S>& nb, const std::vector<uint8_t>& va,
                   const std::vector<uint8_t>& vb, Tensor<S>* grad_a = nullptr,
                   Tensor<S>* grad_b = nullptr);

// Normal smoothness of a density source: normals at (N,3) spatial points vs
// normals at the same points offset by one random unit direction of length h
// (one offset per point), at fixed time t.
template <class S>
S normal_smooth_loss(const FieldFn<S>& fn, const Tensor<S>& points, double t, double h, Rng& rng);

// Central-difference probe machinery for backpropagating normal-based losses
// into a density field. Probe row layout: [i*6 + axis*2 + side] with side 0
// the +h probe and side 1 the -h probe of point i along `axis`.
template <class S>
Tensor<S> normal_probe_points(const Tensor<S>& points, double h);  // (N,4) -> (6N,4)

// g_a = (sigma_plus - sigma_minus) / (2h), n = -g/|g|; rows with |g| < floor
// are invalid and zeroed. grads_out (the raw g) feeds the backward pass.
template <class S>
void normals_from_probe_sigma(const Tensor<S>& sigma, double h, Tensor<S>* normals,
                              std::vector<uint8_t>* valid, Tensor<S>* grads_out = nullptr,
                              double floor = 1e-8);

// Chain dL/dn back to the 6N probe densities through n = -g/|g|.
template <class S>
void normal_probe_backward(const Tensor<S>& grads, const std::vector<uint8_t>& valid,
                           const Tensor<S>& grad_normals, double h, Tensor<S>* grad_sigma);

extern template float recon_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                 const std::array<double, 3>&, bool, Tensor<float>*);
extern template double recon_loss(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&, const std::array<double, 3>&, bool,
                                  Tensor<double>*);
extern template float mask_loss(const Tensor<float>&, const Tensor<float>&, bool, Tensor<float>*);
extern template double mask_loss(const Tensor<double>&, const Tensor<double>&, bool,
                                 Tensor<double>*);
extern template float orientation_loss(const Tensor<float>&, const Tensor<float>&,
                                       const std::vector<uint8_t>&, const Tensor<float>&,
                                       Tensor<float>*);
extern template double orientation_loss(const Tensor<double>&, const Tensor<double>&,
                                        const std::vector<uint8_t>&, const Tensor<double>&,
                                        Tensor<double>*);
extern template float normal_pair_loss(const Tensor<float>&, const Tensor<float>&,
                                       const std::vector<uint8_t>&, const std::vector<uint8_t>&,
                                       Tensor<float>*, Tensor<float>*);
extern template double normal_pair_loss(const Tensor<double>&, const Tensor<double>&,
                                        const std::vector<uint8_t>&, const std::vector<uint8_t>&,
                                        Tensor<double>*, Tensor<double>*);
extern template float normal_smooth_loss(const FieldFn<float>&, const Tensor<float>&, double,
                                         double, Rng&);
extern template double normal_smooth_loss(const FieldFn<double>&, const Tensor<double>&, double,
                                          double, Rng&);
extern template Tensor<float> normal_probe_points(const Tensor<float>&, double);
extern template Tensor<double> normal_probe_points(const Tensor<double>&, double);
extern template void normals_from_probe_sigma(const Tensor<float>&, double, Tensor<float>*,
                                              std::vector<uint8_t>*, Tensor<float>*, double);
extern template void normals_from_probe_sigma(const Tensor<double>&, double, Tensor<double>*,
                                              std::vector<uint8_t>*, Tensor<double>*, double);
extern template void normal_probe_backward(const Tensor<float>&, const std::vector<uint8_t>&,
                                           const Tensor<float>&, double, Tensor<float>*);
extern template void normal_probe_backward(const Tensor<double>&, const std::vector<uint8_t>&,
                                           const Tensor<double>&, double, Tensor<double>*);

}  // namespace hex4d
