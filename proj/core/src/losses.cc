#include "hex4d/losses.h"

#include <cmath>

namespace hex4d {

double LossWeights::orientation_at(int iteration) const {
  H4D_CHECK(iteration >= 0, "negative iteration");
  if (iteration >= orient_ramp_iters) return orient_hi;
  return orient_lo + (orient_hi - orient_lo) * double(iteration) / double(orient_ramp_iters);
}

void LossWeights::validate() const {
  H4D_CHECK(sds >= 0 && icl >= 0 && recon >= 0 && mask >= 0 && normal_smooth >= 0 &&
                orient_lo >= 0 && orient_hi >= 0,
            "loss weights must be nonnegative");
  H4D_CHECK(orient_hi >= orient_lo, "orientation ramp must be nondecreasing");
  H4D_CHECK(orient_ramp_iters > 0, "orientation ramp length must be positive");
}

double total_loss(const LossComponents& c, const LossWeights& w, int iteration) {
  struct Named {
    const char* name;
    double value;
  };
  const Named parts[] = {{"sds", c.sds},
                         {"icl", c.icl},
                         {"recon", c.recon},
                         {"mask", c.mask},
                         {"normal_smooth", c.normal_smooth},
                         {"orientation", c.orientation}};
  for (const auto& p : parts) {
    if (!std::isfinite(p.value))
      throw NumericError(detail::concat("loss component '", p.name, "' is not finite"));
  }
  return w.sds * c.sds + w.icl * c.icl + w.recon * c.recon + w.mask * c.mask +
         w.normal_smooth * c.normal_smooth + w.orientation_at(iteration) * c.orientation;
}

template <class S>
S recon_loss(const Tensor<S>& render, const Tensor<S>& frame, const Tensor<S>& mask,
             const std::array<double, 3>& bg, bool l1, Tensor<S>* grad) {
  H4D_CHECK(render.shape == frame.shape, "render/frame shape mismatch");
  H4D_CHECK(render.size() % 3 == 0, "rgb image expected");
  const int64_t npix = render.size() / 3;
  H4D_CHECK(mask.size() == npix, "mask size does not match the image");
  if (grad) *grad = Tensor<S>(render.shape);

  const double inv_n = 1.0 / double(render.size());
  double acc = 0.0;
  for (int64_t p = 0; p < npix; ++p) {
    double m = double(mask.v[size_t(p)]);
    for (int c = 0; c < 3; ++c) {
      int64_t i = p * 3 + c;
      double gt = m * double(frame.v[size_t(i)]) + (1.0 - m) * bg[size_t(c)];
      double d = double(render.v[size_t(i)]) - gt;
      if (l1) {
        acc += std::abs(d);
        if (grad) grad->v[size_t(i)] = S((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n);
      } else {
        acc += d * d;
        if (grad) grad->v[size_t(i)] = S(2.0 * d * inv_n);
      }
    }
  }
  return S(acc * inv_n);
}

template <class S>
S mask_loss(const Tensor<S>& opacity, const Tensor<S>& mask, bool l1, Tensor<S>* grad) {
  H4D_CHECK(opacity.size() == mask.size(), "opacity/mask size mismatch");
  H4D_CHECK(opacity.size() > 0, "empty mask loss");
  if (grad) *grad = Tensor<S>(opacity.shape);
  const double inv_n = 1.0 / double(opacity.size());
  double acc = 0.0;
  for (int64_t i = 0; i < opacity.size(); ++i) {
    double d = double(opacity.v[size_t(i)]) - double(mask.v[size_t(i)]);
    if (l1) {
      acc += std::abs(d);
      if (grad) grad->v[size_t(i)] = S((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n);
    } else {
      acc += d * d;
      if (grad) grad->v[size_t(i)] = S(2.0 * d * inv_n);
    }
  }
  return S(acc * inv_n);
}

template <class S>
S orientation_loss(const Tensor<S>& weights, const Tensor<S>& normals,
                   const std::vector<uint8_t>& valid, const Tensor<S>& dirs,
                   Tensor<S>* grad_normals) {
  const int64_t n = weights.size();
  H4D_CHECK(normals.size() == n * 3 && dirs.size() == n * 3, "orientation inputs need (N,3) rows");
  H4D_CHECK(valid.size() == size_t(n), "valid flag count mismatch");
  if (grad_normals) *grad_normals = Tensor<S>(normals.shape);

  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double w = double(weights.v[size_t(i)]);
    H4D_CHECK(w >= 0.0 && w <= 1.0 + 1e-6, "sample weight ", w, " outside [0,1]");
    if (!valid[size_t(i)] || w == 0.0) continue;
    const S* nr = normals.data() + i * 3;
    const S* dr = dirs.data() + i * 3;
    double dn = std::sqrt(double(dr[0]) * dr[0] + double(dr[1]) * dr[1] + double(dr[2]) * dr[2]);
    H4D_CHECK(std::abs(dn - 1.0) < 1e-3, "view direction must be unit length, got |d|=", dn);
    double dot = double(nr[0]) * dr[0] + double(nr[1]) * dr[1] + double(nr[2]) * dr[2];
    if (dot <= 0.0) continue;
    acc += w * dot * dot;
    if (grad_normals) {
      S* g = grad_normals->data() + i * 3;
      for (int a = 0; a < 3; ++a) g[a] = S(2.0 * w * dot * double(dr[a]));
    }
  }
  return S(acc);
}

template <class S>
S normal_pair_loss(const Tensor<S>& na, const Tensor<S>& nb, const std::vector<uint8_t>& va,
                   const std::vector<uint8_t>& vb, Tensor<S>* grad_a, Tensor<S>* grad_b) {
  H4D_CHECK(na.shape == nb.shape && na.size() % 3 == 0, "normal sets need matching (N,3) shapes");
  const int64_t n = na.size() / 3;
  H4D_CHECK(va.size() == size_t(n) && vb.size() == size_t(n), "valid flag count mismatch");
  if (grad_a) *grad_a = Tensor<S>(na.shape);
  if (grad_b) *grad_b = Tensor<S>(nb.shape);

  int64_t used = 0;
  for (int64_t i = 0; i < n; ++i)
    if (va[size_t(i)] && vb[size_t(i)]) ++used;
  if (used == 0) return S(0);

  double acc = 0.0;
  const double inv_m = 1.0 / double(used);
  for (int64_t i = 0; i < n; ++i) {
    if (!va[size_t(i)] || !vb[size_t(i)]) continue;
    for (int a = 0; a < 3; ++a) {
      int64_t k = i * 3 + a;
      double d = double(na.v[size_t(k)]) - double(nb.v[size_t(k)]);
      acc += d * d;
      if (grad_a) grad_a->v[size_t(k)] = S(2.0 * d * inv_m);
      if (grad_b) grad_b->v[size_t(k)] = S(-2.0 * d * inv_m);
    }
  }
  return S(acc * inv_m);
}

template <class S>
Tensor<S> normal_probe_points(const Tensor<S>& points, double h) {
  H4D_CHECK(points.ndim() == 2 && points.dim(1) == 4, "points must be (N,4)");
  H4D_CHECK(h > 0, "probe step must be positive");
  const int64_t n = points.rows();
  Tensor<S> out({int(n * 6), 4});
  for (int64_t i = 0; i < n; ++i) {
    const S* p = points.data() + i * 4;
    for (int a = 0; a < 3; ++a) {
      for (int side = 0; side < 2; ++side) {
        S* row = out.data() + (i * 6 + a * 2 + side) * 4;
        for (int k = 0; k < 4; ++k) row[k] = p[k];
        row[a] += S(side == 0 ? h : -h);
      }
    }
  }
  return out;
}

template <class S>
void normals_from_probe_sigma(const Tensor<S>& sigma, double h, Tensor<S>* normals,
                              std::vector<uint8_t>* valid, Tensor<S>* grads_out, double floor) {
  H4D_CHECK(sigma.size() % 6 == 0, "probe sigma count must be a multiple of 6");
  H4D_CHECK(h > 0, "probe step must be positive");
  const int64_t n = sigma.size() / 6;
  *normals = Tensor<S>({int(n), 3});
  valid->assign(size_t(n), 0);
  if (grads_out) *grads_out = Tensor<S>({int(n), 3});

  for (int64_t i = 0; i < n; ++i) {
    double g[3];
    for (int a = 0; a < 3; ++a) {
      double plus = double(sigma.v[size_t(i * 6 + a * 2)]);
      double minus = double(sigma.v[size_t(i * 6 + a * 2 + 1)]);
      g[a] = (plus - minus) / (2.0 * h);
      if (grads_out) grads_out->v[size_t(i * 3 + a)] = S(g[a]);
    }
    double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (norm < floor) continue;
    (*valid)[size_t(i)] = 1;
    for (int a = 0; a < 3; ++a) normals->v[size_t(i * 3 + a)] = S(-g[a] / norm);
  }
}

template <class S>
void normal_probe_backward(const Tensor<S>& grads, const std::vector<uint8_t>& valid,
                           const Tensor<S>& grad_normals, double h, Tensor<S>* grad_sigma) {
  H4D_CHECK(grads.shape == grad_normals.shape && grads.size() % 3 == 0,
            "gradient shapes must match (N,3)");
  const int64_t n = grads.size() / 3;
  H4D_CHECK(valid.size() == size_t(n), "valid flag count mismatch");
  *grad_sigma = Tensor<S>({int(n * 6)});

  for (int64_t i = 0; i < n; ++i) {
    if (!valid[size_t(i)]) continue;
    const S* g = grads.data() + i * 3;
    const S* up = grad_normals.data() + i * 3;
    double norm = std::sqrt(double(g[0]) * g[0] + double(g[1]) * g[1] + double(g[2]) * g[2]);
    double nh[3] = {double(g[0]) / norm, double(g[1]) / norm, double(g[2]) / norm};
    double dot = nh[0] * up[0] + nh[1] * up[1] + nh[2] * up[2];
    for (int a = 0; a < 3; ++a) {
      // d n / d g = -(I - nh nh^T) / |g|, symmetric.
      double dg = -(double(up[a]) - nh[a] * dot) / norm;
      grad_sigma->v[size_t(i * 6 + a * 2)] += S(dg / (2.0 * h));
      grad_sigma->v[size_t(i * 6 + a * 2 + 1)] -= S(dg / (2.0 * h));
    }
  }
}

template <class S>
S normal_smooth_loss(const FieldFn<S>& fn, const Tensor<S>& points, double t, double h, Rng& rng) {
  H4D_CHECK(points.ndim() == 2 && points.dim(1) == 3, "points must be (N,3)");
  H4D_CHECK(h > 0, "perturbation must be positive");
  const int64_t n = points.rows();
  if (n == 0) return S(0);

  Tensor<S> all({int(n * 2), 4});
  for (int64_t i = 0; i < n; ++i) {
    double d[3] = {rng.normal(), rng.normal(), rng.normal()};
    double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (dn < 1e-12) {
      d[0] = 1.0;
      dn = 1.0;
    }
    for (int a = 0; a < 3; ++a) {
      all.v[size_t(i * 4 + a)] = points.v[size_t(i * 3 + a)];
      all.v[size_t((n + i) * 4 + a)] = S(double(points.v[size_t(i * 3 + a)]) + h * d[a] / dn);
    }
    all.v[size_t(i * 4 + 3)] = S(t);
    all.v[size_t((n + i) * 4 + 3)] = S(t);
  }

  Tensor<S> normals;
  std::vector<uint8_t> valid;
  compute_normals_fn(fn, all, h * 0.5, &normals, &valid);

  Tensor<S> na({int(n), 3}), nb({int(n), 3});
  std::vector<uint8_t> va(static_cast<size_t>(n)), vb(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    va[size_t(i)] = valid[size_t(i)];
    vb[size_t(i)] = valid[size_t(n + i)];
    for (int a = 0; a < 3; ++a) {
      na.v[size_t(i * 3 + a)] = normals.v[size_t(i * 3 + a)];
      nb.v[size_t(i * 3 + a)] = normals.v[size_t((n + i) * 3 + a)];
    }
  }
  return normal_pair_loss<S>(na, nb, va, vb, nullptr, nullptr);
}

template float recon_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                          const std::array<double, 3>&, bool, Tensor<float>*);
template double recon_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                           const std::array<double, 3>&, bool, Tensor<double>*);
template float mask_loss(const Tensor<float>&, const Tensor<float>&, bool, Tensor<float>*);
template double mask_loss(const Tensor<double>&, const Tensor<double>&, bool, Tensor<double>*);
template float orientation_loss(const Tensor<float>&, const Tensor<float>&,
                                const std::vector<uint8_t>&, const Tensor<float>&, Tensor<float>*);
template double orientation_loss(const Tensor<double>&, const Tensor<double>&,
                                 const std::vector<uint8_t>&, const Tensor<double>&,
                                 Tensor<double>*);
template float normal_pair_loss(const Tensor<float>&, const Tensor<float>&,
                                const std::vector<uint8_t>&, const std::vector<uint8_t>&,
                                Tensor<float>*, Tensor<float>*);
template double normal_pair_loss(const Tensor<double>&, const Tensor<double>&,
                                 const std::vector<uint8_t>&, const std::vector<uint8_t>&,
                                 Tensor<double>*, Tensor<double>*);
template float normal_smooth_loss(const FieldFn<float>&, const Tensor<float>&, double, double,
                                  Rng&);
template double normal_smooth_loss(const FieldFn<double>&, const Tensor<double>&, double, double,
                                   Rng&);
template Tensor<float> normal_probe_points(const Tensor<float>&, double);
template Tensor<double> normal_probe_points(const Tensor<double>&, double);
template void normals_from_probe_sigma(const Tensor<float>&, double, Tensor<float>*,
                                       std::vector<uint8_t>*, Tensor<float>*, double);
template void normals_from_probe_sigma(const Tensor<double>&, double, Tensor<double>*,
                                       std::vector<uint8_t>*, Tensor<double>*, double);
template void normal_probe_backward(const Tensor<float>&, const std::vector<uint8_t>&,
                                    const Tensor<float>&, double, Tensor<float>*);
template void normal_probe_backward(const Tensor<double>&, const std::vector<uint8_t>&,
                                    const Tensor<double>&, double, Tensor<double>*);

}  // namespace hex4d
