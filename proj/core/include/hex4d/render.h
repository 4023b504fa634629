#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hex4d/camera.h"
#include "hex4d/composite.h"
#include "hex4d/field.h"
#include "hex4d/rng.h"

namespace hex4d {

struct RenderOptions {
  int n_samples = 64;
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  int scale = 0;                 // cascade scale; 0 = finest
  bool normals = false;          // also estimate surface normals at the depth point
  double normal_step = 1e-2;     // central-difference step for normals
  double bounding_radius = 1.0;  // scene bounding sphere
  int chunk_rays = 1024;         // field evaluation batching
};

template <class S>
struct RenderOutput {
  Tensor<S> rgb;             // {H,W,3}
  Tensor<S> opacity;         // {H,W}
  Tensor<S> depth;           // {H,W}, 0 where the ray misses the bounds
  Tensor<S> normal;          // {H,W,3}, zero rows where invalid; empty unless requested
  std::vector<uint8_t> hit;  // H*W flags: ray intersected the bounding sphere
  int64_t clamped = 0;       // out-of-domain plane lookups (field renders only)
  int width = 0, height = 0;
};

// Stratified samples + composite plan for a subset of rays. Rays that miss
// the bounding sphere are dropped; hit_rays maps plan rays back to input ids.
template <class S>
struct RayPlan {
  std::shared_ptr<CompositePlan<S>> plan;
  Tensor<S> points;               // (total_samples, 4): x,y,z,time
  std::vector<int64_t> hit_rays;  // row ids into the origins/dirs batch
};

// Builds per-ray samples at a fixed scene time. With rng, bin offsets are
// jittered uniformly (training); without, fixed bin midpoints (evaluation).
template <class S>
RayPlan<S> plan_rays(const Tensor<S>& origins, const Tensor<S>& dirs,
                     const std::vector<int64_t>& ids, double time, const RenderOptions& opt,
                     Rng* rng = nullptr);

// Point-sampled radiance source: fills sigma (N,1) and rgb (N,3) for (N,4)
// points. sigma_only may leave rgb untouched when the pointer is null.
template <class S>
using FieldFn = std::function<void(const Tensor<S>& points, Tensor<S>* sigma, Tensor<S>* rgb)>;

// Renders a full image by emission-absorption compositing of fn along each
// ray. Misses show the background with zero opacity and depth.
template <class S>
RenderOutput<S> render_fn(const FieldFn<S>& fn, const CameraPose& cam, double time, int width,
                          int height, const RenderOptions& opt, Rng* rng = nullptr);

// Same, sampling a trained cascade field at opt.scale.
template <class S>
RenderOutput<S> render_image(const CascadeField<S>& field, ParamStore<S>& ps,
                             const CameraPose& cam, double time, int width, int height,
                             const RenderOptions& opt, Rng* rng = nullptr);

// Central-difference surface normals n = -grad sigma / |grad sigma| of an
// arbitrary density source at (N,4) points. Rows with |grad| below `floor`
// are flagged invalid and zeroed.
template <class S>
void compute_normals_fn(const FieldFn<S>& fn, const Tensor<S>& points, double h, Tensor<S>* normals,
                        std::vector<uint8_t>* valid, double floor = 1e-8);

template <class S>
void compute_normals(const CascadeField<S>& field, ParamStore<S>& ps, const Tensor<S>& points,
                     int scale, double h, Tensor<S>* normals, std::vector<uint8_t>* valid,
                     int64_t* clamped = nullptr);

// Chunked plain forward of the field as a FieldFn (shared by render/normals).
template <class S>
FieldFn<S> field_fn(const CascadeField<S>& field, ParamStore<S>& ps, int scale,
                    int64_t* clamped = nullptr);

// 8-bit RGBA export: color over background, alpha = opacity.
template <class S>
void write_render_rgba(const std::string& path, const RenderOutput<S>& out);

// 16-bit grayscale depth mapped linearly from [near, far] to [0,1].
template <class S>
void write_depth_png16(const std::string& path, const RenderOutput<S>& out, double near,
                       double far);

extern template struct RenderOutput<float>;
extern template struct RenderOutput<double>;
extern template RayPlan<float> plan_rays(const Tensor<float>&, const Tensor<float>&,
                                         const std::vector<int64_t>&, double,
                                         const RenderOptions&, Rng*);
extern template RayPlan<double> plan_rays(const Tensor<double>&, const Tensor<double>&,
                                          const std::vector<int64_t>&, double,
                                          const RenderOptions&, Rng*);
extern template RenderOutput<float> render_fn(const FieldFn<float>&, const CameraPose&, double,
                                              int, int, const RenderOptions&, Rng*);
extern template RenderOutput<double> render_fn(const FieldFn<double>&, const CameraPose&, double,
                                               int, int, const RenderOptions&, Rng*);
extern template RenderOutput<float> render_image(const CascadeField<float>&, ParamStore<float>&,
                                                 const CameraPose&, double, int, int,
                                                 const RenderOptions&, Rng*);
extern template RenderOutput<double> render_image(const CascadeField<double>&,
                                                  ParamStore<double>&, const CameraPose&, double,
                                                  int, int, const RenderOptions&, Rng*);
extern template void compute_normals_fn(const FieldFn<float>&, const Tensor<float>&, double,
                                        Tensor<float>*, std::vector<uint8_t>*, double);
extern template void compute_normals_fn(const FieldFn<double>&, const Tensor<double>&, double,
                                        Tensor<double>*, std::vector<uint8_t>*, double);
extern template void compute_normals(const CascadeField<float>&, ParamStore<float>&,
                                     const Tensor<float>&, int, double, Tensor<float>*,
                                     std::vector<uint8_t>*, int64_t*);
extern template void compute_normals(const CascadeField<double>&, ParamStore<double>&,
                                     const Tensor<double>&, int, double, Tensor<double>*,
                                     std::vector<uint8_t>*, int64_t*);
extern template FieldFn<float> field_fn(const CascadeField<float>&, ParamStore<float>&, int,
                                        int64_t*);
extern template FieldFn<double> field_fn(const CascadeField<double>&, ParamStore<double>&, int,
                                         int64_t*);
extern template void write_render_rgba(const std::string&, const RenderOutput<float>&);
extern template void write_render_rgba(const std::string&, const RenderOutput<double>&);
extern template void write_depth_png16(const std::string&, const RenderOutput<float>&, double,
                                       double);
extern template void write_depth_png16(const std::string&, const RenderOutput<double>&, double,
                                       double);

}  // namespace hex4d
