#pragma once

#include <array>

#include "hex4d/tensor.h"

namespace hex4d {

// Orbit camera looking at a target point (default the origin) from a given
// azimuth/elevation/radius, z-up, with a vertical field of view.
struct CameraPose {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = 2.5;
  double fov_deg = 40.0;
  std::array<double, 3> look_at = {0.0, 0.0, 0.0};

  // The camera must sit outside the scene bound and use a sane frustum.
  void validate(double bounding_radius = 1.0) const;

  std::array<double, 3> position() const;
};

template <class S>
struct RayBatch {
  Tensor<S> origins;  // (H*W, 3), row-major by (y, x)
  Tensor<S> dirs;     // (H*W, 3), unit length
  int width = 0;
  int height = 0;
};

// Rays through pixel centers: pixel (x,y) maps to NDC offsets scaled by
// tan(fov/2) (vertical) and the aspect ratio (horizontal); y=0 is the top row.
template <class S>
RayBatch<S> generate_rays(const CameraPose& cam, int width, int height);

// Intersects a ray with the origin-centered sphere of radius r. Returns false
// on a miss; on a hit, [*t_near, *t_far] is the in-sphere segment clipped to
// t >= 0.
bool intersect_sphere(const std::array<double, 3>& origin, const std::array<double, 3>& dir,
                      double r, double* t_near, double* t_far);

extern template RayBatch<float> generate_rays(const CameraPose&, int, int);
extern template RayBatch<double> generate_rays(const CameraPose&, int, int);

}  // namespace hex4d
