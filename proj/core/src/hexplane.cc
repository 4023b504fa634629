#include "hex4d/hexplane.h"

#include <algorithm>
#include <cmath>

#include "hex4d/image.h"

namespace hex4d {

const char* plane_name(PlaneId id) {
  static const char* names[kNumPlanes] = {"xy", "yz", "xz", "xt", "yt", "zt"};
  int i = static_cast<int>(id);
  H4D_CHECK(i >= 0 && i < kNumPlanes, "bad plane id ", i);
  return names[i];
}

double project_axis(double value, int axis, int m) {
  H4D_CHECK(m >= 2, "grid resolution must be >= 2, got ", m);
  if (axis == 3) return value * (m - 1);          // t in [0,1]
  return (value + 1.0) * 0.5 * (m - 1);           // x,y,z in [-1,1]
}

namespace {

double clamp_coord(double u, int m, int64_t* clamped) {
  if (u < 0.0 || u > m - 1) {
    if (clamped) ++*clamped;
    return std::min(std::max(u, 0.0), double(m - 1));
  }
  return u;
}

}  // namespace

std::pair<double, double> project(const std::array<double, 4>& p, PlaneId id,
                                  const HexPlaneConfig& cfg, int64_t* clamped) {
  auto [a0, a1] = kPlaneAxes[static_cast<size_t>(id)];
  int m0 = cfg.res_for_axis(a0), m1 = cfg.res_for_axis(a1);
  double u = clamp_coord(project_axis(p[a0], a0, m0), m0, clamped);
  double v = clamp_coord(project_axis(p[a1], a1, m1), m1, clamped);
  return {u, v};
}

template <class S>
void sample_plane(const Tensor<S>& grid, double u, double v, S* out) {
  H4D_CHECK(grid.ndim() == 3, "plane grid must be {U,V,F}");
  int U = grid.dim(0), V = grid.dim(1), F = grid.dim(2);
  H4D_CHECK(u >= 0 && u <= U - 1 && v >= 0 && v <= V - 1, "sample (", u, ",", v,
            ") outside grid ", U, "x", V);
  int i0 = std::min(int(std::floor(u)), U - 2);
  int j0 = std::min(int(std::floor(v)), V - 2);
  S fu = S(u - i0), fv = S(v - j0);
  const S* g = grid.data();
  const S* p00 = g + (size_t(i0) * V + j0) * F;
  const S* p01 = p00 + F;
  const S* p10 = p00 + size_t(V) * F;
  const S* p11 = p10 + F;
  S w00 = (S(1) - fu) * (S(1) - fv), w01 = (S(1) - fu) * fv;
  S w10 = fu * (S(1) - fv), w11 = fu * fv;
  for (int f = 0; f < F; ++f) out[f] = w00 * p00[f] + w01 * p01[f] + w10 * p10[f] + w11 * p11[f];
}

template <class S>
void fuse(const std::array<const S*, kNumPlanes>& feats, int f, S* out) {
  for (int i = 0; i < f; ++i) {
    S acc = feats[0][i];
    for (int k = 1; k < kNumPlanes; ++k) acc *= feats[k][i];
    out[i] = acc;
  }
}

template <class S>
std::shared_ptr<BilinearTaps<S>> make_taps(const Tensor<S>& points, PlaneId id,
                                           const HexPlaneConfig& cfg, int64_t* clamped) {
  H4D_CHECK(points.ndim() == 2 && points.dim(1) == 4, "points must be (N,4)");
  cfg.validate();
  int64_t n = points.dim(0);
  auto [a0, a1] = kPlaneAxes[static_cast<size_t>(id)];
  int U = cfg.res_for_axis(a0), V = cfg.res_for_axis(a1);
  auto taps = std::make_shared<BilinearTaps<S>>();
  taps->npoints = n;
  taps->idx.resize(size_t(n) * 4);
  taps->w.resize(size_t(n) * 4);
  const S* p = points.data();
  for (int64_t i = 0; i < n; ++i) {
    std::array<double, 4> pt = {double(p[i * 4]), double(p[i * 4 + 1]), double(p[i * 4 + 2]),
                                double(p[i * 4 + 3])};
    auto [u, v] = project(pt, id, cfg, clamped);
    int i0 = std::min(int(std::floor(u)), U - 2);
    int j0 = std::min(int(std::floor(v)), V - 2);
    S fu = S(u - i0), fv = S(v - j0);
    int base = i0 * V + j0;
    int32_t* ix = taps->idx.data() + i * 4;
    S* w = taps->w.data() + i * 4;
    ix[0] = base;
    ix[1] = base + 1;
    ix[2] = base + V;
    ix[3] = base + V + 1;
    w[0] = (S(1) - fu) * (S(1) - fv);
    w[1] = (S(1) - fu) * fv;
    w[2] = fu * (S(1) - fv);
    w[3] = fu * fv;
  }
  return taps;
}

std::string plane_param_name(const std::string& prefix, PlaneId id) {
  return prefix + "/plane_" + plane_name(id);
}

template <class S>
void add_hexplane_params(ParamStore<S>& ps, const std::string& prefix, const HexPlaneConfig& cfg,
                         Rng& rng) {
  cfg.validate();
  for (int i = 0; i < kNumPlanes; ++i) {
    PlaneId id = static_cast<PlaneId>(i);
    auto [a0, a1] = kPlaneAxes[size_t(i)];
    Tensor<S> grid({cfg.res_for_axis(a0), cfg.res_for_axis(a1), cfg.features});
    for (auto& v : grid.v) v = S(rng.uniform(0.9, 1.1));
    ps.add(plane_param_name(prefix, id), std::move(grid), LrGroup::grids);
  }
}

template <class S>
void write_plane_png(const std::string& path, const Tensor<S>& grid) {
  H4D_CHECK(grid.ndim() == 3, "plane grid must be {U,V,F}");
  int U = grid.dim(0), V = grid.dim(1), F = grid.dim(2);
  Tensorf img({U, V, 1});
  float lo = 1e30f, hi = -1e30f;
  for (int i = 0; i < U * V; ++i) {
    double m = 0;
    for (int f = 0; f < F; ++f) m += double(grid.data()[size_t(i) * F + f]);
    img.v[size_t(i)] = float(m / F);
    lo = std::min(lo, img.v[size_t(i)]);
    hi = std::max(hi, img.v[size_t(i)]);
  }
  float span = hi - lo > 1e-12f ? hi - lo : 1.0f;
  for (auto& v : img.v) v = (v - lo) / span;
  write_png8(path, img);
}

template void sample_plane(const Tensor<float>&, double, double, float*);
template void sample_plane(const Tensor<double>&, double, double, double*);
template void fuse(const std::array<const float*, kNumPlanes>&, int, float*);
template void fuse(const std::array<const double*, kNumPlanes>&, int, double*);
template std::shared_ptr<BilinearTaps<float>> make_taps(const Tensor<float>&, PlaneId,
                                                        const HexPlaneConfig&, int64_t*);
template std::shared_ptr<BilinearTaps<double>> make_taps(const Tensor<double>&, PlaneId,
                                                         const HexPlaneConfig&, int64_t*);
template void add_hexplane_params(ParamStore<float>&, const std::string&, const HexPlaneConfig&,
                                  Rng&);
template void add_hexplane_params(ParamStore<double>&, const std::string&, const HexPlaneConfig&,
                                  Rng&);
template void write_plane_png(const std::string&, const Tensor<float>&);
template void write_plane_png(const std::string&, const Tensor<double>&);

}  // namespace hex4d
