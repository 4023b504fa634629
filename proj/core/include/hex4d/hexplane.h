#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>

#include "hex4d/param_store.h"
#include "hex4d/rng.h"
#include "hex4d/tape.h"
#include "hex4d/tensor.h"

namespace hex4d {

// The six axis-pair planes factorizing (x,y,z,t). Spatial coordinates live in
// [-1,1] (unit bounding sphere), time in [0,1].
enum class PlaneId : int { xy = 0, yz = 1, xz = 2, xt = 3, yt = 4, zt = 5 };

constexpr int kNumPlanes = 6;

// (first axis, second axis) with x=0, y=1, z=2, t=3.
constexpr std::array<std::pair<int, int>, kNumPlanes> kPlaneAxes = {
    {{0, 1}, {1, 2}, {0, 2}, {0, 3}, {1, 3}, {2, 3}}};

const char* plane_name(PlaneId id);
inline bool plane_has_time(PlaneId id) {
  return kPlaneAxes[static_cast<size_t>(id)].second == 3;
}

// One scale of the factorization: three {S,S,F} spatial planes and three
// {S,T,F} spatio-temporal planes.
struct HexPlaneConfig {
  int spatial_res = 50;
  int time_res = 8;
  int features = 16;

  void validate() const {
    H4D_CHECK(spatial_res >= 2 && time_res >= 2, "plane resolutions must be >= 2, got ",
              spatial_res, "/", time_res);
    H4D_CHECK(features >= 1, "feature dim must be >= 1");
  }

  int res_for_axis(int axis) const { return axis == 3 ? time_res : spatial_res; }
};

// Affine map of one coordinate onto [0, m-1]: spatial axes from [-1,1], time
// from [0,1]. Strictly monotone; endpoints map to grid endpoints. No clamping.
double project_axis(double value, int axis, int m);

// Projects a 4D point onto a plane's (u,v) grid coordinates, clamping to the
// grid and counting clamped axes in *clamped (diagnostic, may be null).
std::pair<double, double> project(const std::array<double, 4>& p, PlaneId id,
                                  const HexPlaneConfig& cfg, int64_t* clamped = nullptr);

// Bilinear sample of a {U,V,F} grid at continuous (u,v); u/v must already be
// inside [0, U-1] x [0, V-1].
template <class S>
void sample_plane(const Tensor<S>& grid, double u, double v, S* out);

// Element-wise product of the six per-plane feature vectors.
template <class S>
void fuse(const std::array<const S*, kNumPlanes>& feats, int f, S* out);

// Builds the bilinear lookup table for a batch of points (N,4) into one
// plane. Out-of-domain points clamp to the border; *clamped counts them.
template <class S>
std::shared_ptr<BilinearTaps<S>> make_taps(const Tensor<S>& points, PlaneId id,
                                           const HexPlaneConfig& cfg, int64_t* clamped = nullptr);

// Registers the six plane grids for one scale under "<prefix>/<plane>",
// initialized uniformly in [0.9, 1.1] (near the Hadamard identity).
template <class S>
void add_hexplane_params(ParamStore<S>& ps, const std::string& prefix, const HexPlaneConfig& cfg,
                         Rng& rng);

std::string plane_param_name(const std::string& prefix, PlaneId id);

// Debug visualization: per-texel mean feature, min/max normalized to [0,1].
template <class S>
void write_plane_png(const std::string& path, const Tensor<S>& grid);

extern template void sample_plane(const Tensor<float>&, double, double, float*);
extern template void sample_plane(const Tensor<double>&, double, double, double*);
extern template void fuse(const std::array<const float*, kNumPlanes>&, int, float*);
extern template void fuse(const std::array<const double*, kNumPlanes>&, int, double*);
extern template std::shared_ptr<BilinearTaps<float>> make_taps(const Tensor<float>&, PlaneId,
                                                               const HexPlaneConfig&, int64_t*);
extern template std::shared_ptr<BilinearTaps<double>> make_taps(const Tensor<double>&, PlaneId,
                                                                const HexPlaneConfig&, int64_t*);
extern template void add_hexplane_params(ParamStore<float>&, const std::string&,
                                         const HexPlaneConfig&, Rng&);
extern template void add_hexplane_params(ParamStore<double>&, const std::string&,
                                         const HexPlaneConfig&, Rng&);
extern template void write_plane_png(const std::string&, const Tensor<float>&);
extern template void write_plane_png(const std::string&, const Tensor<double>&);

}  // namespace hex4d
