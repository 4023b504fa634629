#include "hex4d/camera.h"

#include <cmath>

#include "hex4d/common.h"

namespace hex4d {

void CameraPose::validate(double bounding_radius) const {
  H4D_CHECK(radius > bounding_radius, "camera radius ", radius, " must exceed the scene bound ",
            bounding_radius);
  H4D_CHECK(fov_deg > 0.0 && fov_deg < 120.0, "fov ", fov_deg, " outside (0, 120)");
  H4D_CHECK(std::isfinite(azimuth_deg) && std::isfinite(elevation_deg), "non-finite camera angle");
}

std::array<double, 3> CameraPose::position() const {
  double a = deg_to_rad(azimuth_deg), e = deg_to_rad(elevation_deg);
  return {look_at[0] + radius * std::cos(e) * std::cos(a),
          look_at[1] + radius * std::cos(e) * std::sin(a), look_at[2] + radius * std::sin(e)};
}

namespace {

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const std::array<double, 3>& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

std::array<double, 3> normalized(const std::array<double, 3>& a) {
  double n = norm(a);
  H4D_CHECK(n > 1e-12, "cannot normalize near-zero vector");
  return {a[0] / n, a[1] / n, a[2] / n};
}

}  // namespace

template <class S>
RayBatch<S> generate_rays(const CameraPose& cam, int width, int height) {
  H4D_CHECK(width >= 1 && height >= 1, "image size must be positive, got ", width, "x", height);
  cam.validate();

  auto pos = cam.position();
  std::array<double, 3> fwd = normalized(
      {cam.look_at[0] - pos[0], cam.look_at[1] - pos[1], cam.look_at[2] - pos[2]});
  std::array<double, 3> world_up = {0, 0, 1};
  auto side = cross(fwd, world_up);
  if (norm(side) < 1e-9) side = cross(fwd, {1, 0, 0});  // looking straight up/down
  auto right = normalized(side);
  auto up = cross(right, fwd);

  double tan_half = std::tan(deg_to_rad(cam.fov_deg) * 0.5);
  double aspect = double(width) / double(height);

  RayBatch<S> rb;
  rb.width = width;
  rb.height = height;
  rb.origins = Tensor<S>({height * width, 3});
  rb.dirs = Tensor<S>({height * width, 3});
  for (int y = 0; y < height; ++y) {
    double cy = (1.0 - 2.0 * (y + 0.5) / height) * tan_half;
    for (int x = 0; x < width; ++x) {
      double cx = (2.0 * (x + 0.5) / width - 1.0) * tan_half * aspect;
      std::array<double, 3> d = normalized({fwd[0] + cx * right[0] + cy * up[0],
                                            fwd[1] + cx * right[1] + cy * up[1],
                                            fwd[2] + cx * right[2] + cy * up[2]});
      int64_t i = int64_t(y) * width + x;
      for (int k = 0; k < 3; ++k) {
        rb.origins.data()[i * 3 + k] = S(pos[size_t(k)]);
        rb.dirs.data()[i * 3 + k] = S(d[size_t(k)]);
      }
    }
  }
  return rb;
}

bool intersect_sphere(const std::array<double, 3>& origin, const std::array<double, 3>& dir,
                      double r, double* t_near, double* t_far) {
  double b = origin[0] * dir[0] + origin[1] * dir[1] + origin[2] * dir[2];
  double c = origin[0] * origin[0] + origin[1] * origin[1] + origin[2] * origin[2] - r * r;
  double disc = b * b - c;
  if (disc <= 0.0) return false;
  double s = std::sqrt(disc);
  double tn = -b - s, tf = -b + s;
  if (tf <= 0.0) return false;  // sphere entirely behind the origin
  *t_near = tn > 0.0 ? tn : 0.0;
  *t_far = tf;
  return true;
}

template RayBatch<float> generate_rays(const CameraPose&, int, int);
template RayBatch<double> generate_rays(const CameraPose&, int, int);

}  // namespace hex4d
