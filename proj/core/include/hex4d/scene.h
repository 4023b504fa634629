#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hex4d/camera.h"
#include "hex4d/render.h"
#include "hex4d/tensor.h"

namespace hex4d {

// Animated analytic primitive. The center traces a circular arc around the
// z-axis plus a linear drift; the size pulses sinusoidally over t in [0,1].
struct Primitive {
  enum class Kind { sphere, box, ellipsoid };
  Kind kind = Kind::sphere;

  std::array<double, 3> base = {0, 0, 0};
  double orbit_radius = 0.0;
  double orbit_start_deg = 0.0;
  double orbit_sweep_deg = 0.0;
  std::array<double, 3> linear_vel = {0, 0, 0};

  double radius = 0.3;  // base size; r(t) = radius * (1 + pulse * sin(2 pi t))
  double pulse = 0.0;
  std::array<double, 3> half_axes = {1, 1, 1};  // per-axis size multipliers

  std::array<double, 3> color = {0.8, 0.8, 0.8};
  std::array<double, 3> color2 = {0.8, 0.8, 0.8};  // gradient endpoint along local z
  double density = 20.0;                           // peak density inside
  double edge = 0.05;                              // smoothstep half-width

  std::array<double, 3> center(double t) const;
  double size(double t) const;
  // Signed distance to the primitive surface at scene time t (<0 inside).
  double sdf(const std::array<double, 3>& p, double t) const;
  // Color at a point (gradient between color and color2 along local z).
  std::array<double, 3> shade(const std::array<double, 3>& p, double t) const;
};

struct SyntheticScene {
  std::vector<Primitive> prims;

  // Every primitive stays inside the unit bounding sphere over t in [0,1];
  // colors/densities/edges are sane.
  void validate() const;

  // Rigid rotation of all motion paths about the z axis (test symmetry probe;
  // only meaningful for sphere primitives).
  SyntheticScene rotated_z(double deg) const;
};

// Analytic density/color at one 4D point: smooth-max (4-norm) of per-primitive
// soft indicators, colors blended by density weight.
void scene_sample(const SyntheticScene& scene, const std::array<double, 4>& p, double* density,
                  std::array<double, 3>* color);

// The scene as a point-sampled field for the shared volume renderer.
template <class S>
FieldFn<S> scene_fn(const SyntheticScene& scene);

// Ground-truth render: same compositing path as the learned field, 256
// samples/ray, white background.
RenderOutput<double> render_gt(const SyntheticScene& scene, const CameraPose& cam, double t,
                               int width, int height, int n_samples = 256);

// The canonical animated test scene: a color-gradient sphere on a circular
// arc with a pulsing radius.
SyntheticScene make_orbiter_scene();

// JSON (de)serialization of scene specs, plus a stable content hash.
SyntheticScene scene_from_json(const std::string& text);
std::string scene_to_json(const SyntheticScene& scene);
uint64_t scene_hash(const SyntheticScene& scene);

// A frame-sequence dataset: input-view frames, foreground masks, timestamps.
struct Dataset {
  CameraPose camera;
  int width = 0, height = 0;
  std::vector<Tensorf> frames;  // {H,W,3} in [0,1] on the 8-bit lattice
  std::vector<Tensorf> masks;   // {H,W,1} binary
  std::vector<double> times;    // k / (N-1)
  uint64_t scene_hash = 0;

  int num_frames() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

// Renders N uniformly spaced frames (t = k/(N-1)) plus opacity>0.5 masks.
// Frames are quantized to the 8-bit lattice so disk round trips are exact.
Dataset make_dataset(const SyntheticScene& scene, const CameraPose& cam, int n_frames, int width,
                     int height, int n_samples = 256);

// Directory layout: frame_%04d.png, mask_%04d.png, manifest.json.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

extern template FieldFn<float> scene_fn(const SyntheticScene&);
extern template FieldFn<double> scene_fn(const SyntheticScene&);

}  // namespace hex4d
