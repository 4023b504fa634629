#include "hex4d/scene.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hex4d/image.h"

namespace hex4d {

using nlohmann::json;

std::array<double, 3> Primitive::center(double t) const {
  double a = deg_to_rad(orbit_start_deg + orbit_sweep_deg * t);
  return {base[0] + orbit_radius * std::cos(a) + linear_vel[0] * t,
          base[1] + orbit_radius * std::sin(a) + linear_vel[1] * t,
          base[2] + linear_vel[2] * t};
}

double Primitive::size(double t) const { return radius * (1.0 + pulse * std::sin(2.0 * kPi * t)); }

double Primitive::sdf(const std::array<double, 3>& p, double t) const {
  auto c = center(t);
  double r = size(t);
  std::array<double, 3> q = {p[0] - c[0], p[1] - c[1], p[2] - c[2]};
  switch (kind) {
    case Kind::sphere:
      return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) - r;
    case Kind::box: {
      double b[3] = {r * half_axes[0], r * half_axes[1], r * half_axes[2]};
      double d[3] = {std::abs(q[0]) - b[0], std::abs(q[1]) - b[1], std::abs(q[2]) - b[2]};
      double outside = std::sqrt(std::max(d[0], 0.0) * std::max(d[0], 0.0) +
                                 std::max(d[1], 0.0) * std::max(d[1], 0.0) +
                                 std::max(d[2], 0.0) * std::max(d[2], 0.0));
      double inside = std::min(std::max({d[0], d[1], d[2]}), 0.0);
      return outside + inside;
    }
    case Kind::ellipsoid: {
      // Scaled-space approximation (exact sign, near-exact distance).
      double a[3] = {r * half_axes[0], r * half_axes[1], r * half_axes[2]};
      double k0 = std::sqrt(q[0] * q[0] / (a[0] * a[0]) + q[1] * q[1] / (a[1] * a[1]) +
                            q[2] * q[2] / (a[2] * a[2]));
      double k1 = std::sqrt(q[0] * q[0] / (a[0] * a[0] * a[0] * a[0]) +
                            q[1] * q[1] / (a[1] * a[1] * a[1] * a[1]) +
                            q[2] * q[2] / (a[2] * a[2] * a[2] * a[2]));
      if (k1 < 1e-12) return -*std::min_element(a, a + 3);  // at the center
      return k0 * (k0 - 1.0) / k1;
    }
  }
  return 0.0;
}

std::array<double, 3> Primitive::shade(const std::array<double, 3>& p, double t) const {
  auto c = center(t);
  double r = size(t);
  double w = std::clamp(0.5 + 0.5 * (p[2] - c[2]) / std::max(r, 1e-9), 0.0, 1.0);
  return {color[0] + (color2[0] - color[0]) * w, color[1] + (color2[1] - color[1]) * w,
          color[2] + (color2[2] - color[2]) * w};
}

namespace {

double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// 1 deep inside (d <= -edge), 0 outside (d >= edge), 1/2 at the surface.
double soft_indicator(double d, double edge) { return 1.0 - smoothstep01((d + edge) / (2 * edge)); }

}  // namespace

void scene_sample(const SyntheticScene& scene, const std::array<double, 4>& p, double* density,
                  std::array<double, 3>* color) {
  std::array<double, 3> xyz = {p[0], p[1], p[2]};
  double t = p[3];
  double sum4 = 0.0;  // 4-norm smooth maximum of per-primitive densities
  double wsum = 0.0;
  std::array<double, 3> cacc = {0, 0, 0};
  for (const auto& prim : scene.prims) {
    double sig = prim.density * soft_indicator(prim.sdf(xyz, t), prim.edge);
    sum4 += sig * sig * sig * sig;
    if (sig > 0.0) {
      auto c = prim.shade(xyz, t);
      wsum += sig;
      for (int k = 0; k < 3; ++k) cacc[size_t(k)] += sig * c[size_t(k)];
    }
  }
  *density = std::sqrt(std::sqrt(sum4));
  if (color) {
    if (wsum > 1e-12)
      for (int k = 0; k < 3; ++k) (*color)[size_t(k)] = cacc[size_t(k)] / wsum;
    else
      *color = {1, 1, 1};
  }
}

template <class S>
FieldFn<S> scene_fn(const SyntheticScene& scene) {
  return [scene](const Tensor<S>& pts, Tensor<S>* sigma, Tensor<S>* rgb) {
    int n = pts.dim(0);
    if (sigma) *sigma = Tensor<S>({n, 1});
    if (rgb) *rgb = Tensor<S>({n, 3});
    for (int i = 0; i < n; ++i) {
      const S* q = pts.data() + int64_t(i) * 4;
      std::array<double, 4> p = {double(q[0]), double(q[1]), double(q[2]), double(q[3])};
      double d;
      std::array<double, 3> c;
      scene_sample(scene, p, &d, rgb ? &c : nullptr);
      if (sigma) sigma->data()[i] = S(d);
      if (rgb)
        for (int k = 0; k < 3; ++k) rgb->data()[int64_t(i) * 3 + k] = S(c[size_t(k)]);
    }
  };
}

void SyntheticScene::validate() const {
  for (size_t i = 0; i < prims.size(); ++i) {
    const auto& p = prims[i];
    H4D_CHECK(p.radius > 0.0 && p.density > 0.0 && p.edge > 0.0,
              "primitive ", i, " needs positive radius/density/edge");
    for (int k = 0; k < 3; ++k) {
      H4D_CHECK(p.color[size_t(k)] >= 0 && p.color[size_t(k)] <= 1 && p.color2[size_t(k)] >= 0 &&
                    p.color2[size_t(k)] <= 1,
                "primitive ", i, " colors must be in [0,1]");
      H4D_CHECK(p.half_axes[size_t(k)] > 0, "primitive ", i, " half_axes must be positive");
    }
    double amax = *std::max_element(p.half_axes.begin(), p.half_axes.end());
    for (int s = 0; s <= 64; ++s) {
      double t = s / 64.0;
      auto c = p.center(t);
      double reach = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) +
                     std::abs(p.size(t)) * amax + p.edge;
      H4D_CHECK(reach <= 1.0 + 1e-9, "primitive ", i, " leaves the unit sphere at t=", t,
                " (reach ", reach, ")");
    }
  }
}

SyntheticScene SyntheticScene::rotated_z(double deg) const {
  double a = deg_to_rad(deg), ca = std::cos(a), sa = std::sin(a);
  auto rot = [&](const std::array<double, 3>& v) -> std::array<double, 3> {
    return {ca * v[0] - sa * v[1], sa * v[0] + ca * v[1], v[2]};
  };
  SyntheticScene out = *this;
  for (auto& p : out.prims) {
    p.base = rot(p.base);
    p.linear_vel = rot(p.linear_vel);
    p.orbit_start_deg += deg;
  }
  return out;
}

RenderOutput<double> render_gt(const SyntheticScene& scene, const CameraPose& cam, double t,
                               int width, int height, int n_samples) {
  RenderOptions opt;
  opt.n_samples = n_samples;
  opt.background = {1, 1, 1};
  return render_fn<double>(scene_fn<double>(scene), cam, t, width, height, opt);
}

SyntheticScene make_orbiter_scene() {
  Primitive p;
  p.kind = Primitive::Kind::sphere;
  p.base = {0, 0, 0};
  p.orbit_radius = 0.45;
  p.orbit_start_deg = 0.0;
  p.orbit_sweep_deg = 180.0;
  p.radius = 0.3;
  p.pulse = 0.2;
  p.color = {0.85, 0.25, 0.15};
  p.color2 = {0.15, 0.35, 0.9};
  p.density = 20.0;
  p.edge = 0.05;
  SyntheticScene s;
  s.prims.push_back(p);
  s.validate();
  return s;
}

namespace {

json arr3(const std::array<double, 3>& v) { return json::array({v[0], v[1], v[2]}); }

std::array<double, 3> get3(const json& j, const char* key, std::array<double, 3> def) {
  if (!j.contains(key)) return def;
  const auto& a = j.at(key);
  H4D_CHECK(a.is_array() && a.size() == 3, "scene field ", key, " must be a 3-array");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

const char* kind_name(Primitive::Kind k) {
  switch (k) {
    case Primitive::Kind::sphere: return "sphere";
    case Primitive::Kind::box: return "box";
    case Primitive::Kind::ellipsoid: return "ellipsoid";
  }
  return "sphere";
}

Primitive::Kind kind_from(const std::string& s) {
  if (s == "sphere") return Primitive::Kind::sphere;
  if (s == "box") return Primitive::Kind::box;
  if (s == "ellipsoid") return Primitive::Kind::ellipsoid;
  throw ContractError("unknown primitive kind: " + s);
}

}  // namespace

std::string scene_to_json(const SyntheticScene& scene) {
  json j;
  j["primitives"] = json::array();
  for (const auto& p : scene.prims) {
    json q;
    q["kind"] = kind_name(p.kind);
    q["base"] = arr3(p.base);
    q["orbit_radius"] = p.orbit_radius;
    q["orbit_start_deg"] = p.orbit_start_deg;
    q["orbit_sweep_deg"] = p.orbit_sweep_deg;
    q["linear_vel"] = arr3(p.linear_vel);
    q["radius"] = p.radius;
    q["pulse"] = p.pulse;
    q["half_axes"] = arr3(p.half_axes);
    q["color"] = arr3(p.color);
    q["color2"] = arr3(p.color2);
    q["density"] = p.density;
    q["edge"] = p.edge;
    j["primitives"].push_back(q);
  }
  return j.dump(2);
}

SyntheticScene scene_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("scene spec parse failure: ") + e.what());
  }
  SyntheticScene s;
  H4D_CHECK(j.contains("primitives") && j["primitives"].is_array(),
            "scene spec needs a 'primitives' array");
  for (const auto& q : j["primitives"]) {
    Primitive p;
    if (q.contains("kind")) p.kind = kind_from(q["kind"].get<std::string>());
    p.base = get3(q, "base", p.base);
    p.orbit_radius = q.value("orbit_radius", p.orbit_radius);
    p.orbit_start_deg = q.value("orbit_start_deg", p.orbit_start_deg);
    p.orbit_sweep_deg = q.value("orbit_sweep_deg", p.orbit_sweep_deg);
    p.linear_vel = get3(q, "linear_vel", p.linear_vel);
    p.radius = q.value("radius", p.radius);
    p.pulse = q.value("pulse", p.pulse);
    p.half_axes = get3(q, "half_axes", p.half_axes);
    p.color = get3(q, "color", p.color);
    p.color2 = get3(q, "color2", p.color);  // defaults to flat color
    p.density = q.value("density", p.density);
    p.edge = q.value("edge", p.edge);
    s.prims.push_back(p);
  }
  s.validate();
  return s;
}

uint64_t scene_hash(const SyntheticScene& scene) {
  std::string text = scene_to_json(scene);
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void Dataset::validate() const {
  H4D_CHECK(num_frames() >= 2, "dataset needs at least 2 frames, got ", num_frames());
  H4D_CHECK(masks.size() == frames.size() && times.size() == frames.size(),
            "dataset frame/mask/time counts disagree");
  for (int i = 0; i < num_frames(); ++i) {
    H4D_CHECK(frames[size_t(i)].shape == std::vector<int>({height, width, 3}),
              "frame ", i, " has wrong shape");
    H4D_CHECK(masks[size_t(i)].shape == std::vector<int>({height, width, 1}),
              "mask ", i, " has wrong shape");
  }
  camera.validate();
}

namespace {

float quant8(double v) { return float(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

}  // namespace

Dataset make_dataset(const SyntheticScene& scene, const CameraPose& cam, int n_frames, int width,
                     int height, int n_samples) {
  H4D_CHECK(n_frames >= 2, "need at least 2 frames, got ", n_frames);
  scene.validate();
  Dataset ds;
  ds.camera = cam;
  ds.width = width;
  ds.height = height;
  ds.scene_hash = scene_hash(scene);
  for (int k = 0; k < n_frames; ++k) {
    double t = double(k) / (n_frames - 1);
    auto out = render_gt(scene, cam, t, width, height, n_samples);
    Tensorf frame({height, width, 3});
    Tensorf mask({height, width, 1});
    for (int64_t i = 0; i < int64_t(width) * height; ++i) {
      for (int c = 0; c < 3; ++c) frame.data()[i * 3 + c] = quant8(out.rgb.data()[i * 3 + c]);
      mask.data()[i] = out.opacity.data()[i] > 0.5 ? 1.0f : 0.0f;
    }
    ds.frames.push_back(std::move(frame));
    ds.masks.push_back(std::move(mask));
    ds.times.push_back(t);
  }
  ds.validate();
  return ds;
}

namespace {

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.png", i);
  return buf;
}

std::string mask_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mask_%04d.png", i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  for (int i = 0; i < ds.num_frames(); ++i) {
    write_png8(dir + "/" + frame_name(i), ds.frames[size_t(i)]);
    write_png8(dir + "/" + mask_name(i), ds.masks[size_t(i)]);
  }
  json j;
  j["frames"] = ds.num_frames();
  j["width"] = ds.width;
  j["height"] = ds.height;
  j["camera"] = {{"azimuth_deg", ds.camera.azimuth_deg},
                 {"elevation_deg", ds.camera.elevation_deg},
                 {"radius", ds.camera.radius},
                 {"fov_deg", ds.camera.fov_deg}};
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ds.scene_hash));
  j["scene_hash"] = hash;
  std::ofstream f(dir + "/manifest.json");
  H4D_CHECK(f.good(), "cannot write manifest in ", dir);
  f << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f.good()) throw IoError("no manifest.json in " + dir);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest parse failure: ") + e.what());
  }

  Dataset ds;
  int n = j.at("frames").get<int>();
  ds.width = j.at("width").get<int>();
  ds.height = j.at("height").get<int>();
  const auto& c = j.at("camera");
  ds.camera.azimuth_deg = c.at("azimuth_deg").get<double>();
  ds.camera.elevation_deg = c.at("elevation_deg").get<double>();
  ds.camera.radius = c.at("radius").get<double>();
  ds.camera.fov_deg = c.at("fov_deg").get<double>();
  if (j.contains("scene_hash"))
    ds.scene_hash = std::stoull(j["scene_hash"].get<std::string>(), nullptr, 16);

  for (int i = 0; i < n; ++i) {
    std::string fp = dir + "/" + frame_name(i);
    std::string mp = dir + "/" + mask_name(i);
    if (!std::filesystem::exists(fp)) throw IoError("missing frame index " + std::to_string(i));
    if (!std::filesystem::exists(mp)) throw IoError("missing mask index " + std::to_string(i));
    Tensorf frame = read_png(fp);
    Tensorf mask = read_png(mp);
    if (frame.shape != std::vector<int>({ds.height, ds.width, 3}))
      throw IoError("frame " + std::to_string(i) + " size mismatch with manifest");
    if (mask.dim(0) != ds.height || mask.dim(1) != ds.width)
      throw IoError("mask " + std::to_string(i) + " size mismatch with manifest");
    Tensorf m1({ds.height, ds.width, 1});
    for (int64_t k = 0; k < int64_t(ds.height) * ds.width; ++k)
      m1.data()[k] = mask.data()[k * mask.dim(2)] >= 0.5f ? 1.0f : 0.0f;
    ds.frames.push_back(std::move(frame));
    ds.masks.push_back(std::move(m1));
    ds.times.push_back(n > 1 ? double(i) / (n - 1) : 0.0);
  }
  ds.validate();
  return ds;
}

template FieldFn<float> scene_fn(const SyntheticScene&);
template FieldFn<double> scene_fn(const SyntheticScene&);

}  // namespace hex4d
