#include "hex4d/render.h"

#include <algorithm>
#include <cmath>

#include "hex4d/image.h"

namespace hex4d {

template <class S>
RayPlan<S> plan_rays(const Tensor<S>& origins, const Tensor<S>& dirs,
                     const std::vector<int64_t>& ids, double time, const RenderOptions& opt,
                     Rng* rng) {
  H4D_CHECK(origins.ndim() == 2 && origins.dim(1) == 3 && origins.same_shape(dirs),
            "ray batch must be (N,3) origins/dirs");
  H4D_CHECK(opt.n_samples >= 1, "need at least one sample per ray");
  H4D_CHECK(time >= 0.0 && time <= 1.0, "scene time ", time, " outside [0,1]");

  RayPlan<S> rp;
  rp.plan = std::make_shared<CompositePlan<S>>();
  auto& plan = *rp.plan;
  plan.bg = {S(opt.background[0]), S(opt.background[1]), S(opt.background[2])};
  plan.offsets.push_back(0);

  std::vector<S> pts;
  const int n = opt.n_samples;
  for (int64_t id : ids) {
    H4D_CHECK(id >= 0 && id < origins.dim(0), "ray id ", id, " out of range");
    const S* o = origins.data() + id * 3;
    const S* d = dirs.data() + id * 3;
    std::array<double, 3> od = {double(o[0]), double(o[1]), double(o[2])};
    std::array<double, 3> dd = {double(d[0]), double(d[1]), double(d[2])};
    double tn, tf;
    if (!intersect_sphere(od, dd, opt.bounding_radius, &tn, &tf)) continue;
    double delta = (tf - tn) / n;
    if (delta <= 0.0) continue;
    rp.hit_rays.push_back(id);
    plan.delta.push_back(S(delta));
    for (int i = 0; i < n; ++i) {
      double off = rng ? rng->uniform() : 0.5;
      double tv = tn + (i + off) * delta;
      plan.tvals.push_back(S(tv));
      pts.push_back(S(od[0] + tv * dd[0]));
      pts.push_back(S(od[1] + tv * dd[1]));
      pts.push_back(S(od[2] + tv * dd[2]));
      pts.push_back(S(time));
    }
    plan.offsets.push_back(plan.offsets.back() + n);
  }
  plan.nrays = static_cast<int>(rp.hit_rays.size());
  plan.validate();
  rp.points = Tensor<S>({plan.nrays * n, 4});
  std::copy(pts.begin(), pts.end(), rp.points.data());
  return rp;
}

template <class S>
FieldFn<S> field_fn(const CascadeField<S>& field, ParamStore<S>& ps, int scale, int64_t* clamped) {
  return [&field, &ps, scale, clamped](const Tensor<S>& points, Tensor<S>* sigma, Tensor<S>* rgb) {
    const int64_t n = points.dim(0);
    const int64_t block = 1 << 16;
    if (sigma) *sigma = Tensor<S>({int(n), 1});
    if (rgb) *rgb = Tensor<S>({int(n), 3});
    for (int64_t r0 = 0; r0 < n; r0 += block) {
      int64_t r1 = std::min(n, r0 + block);
      Tensor<S> sub({int(r1 - r0), 4});
      std::copy(points.data() + r0 * 4, points.data() + r1 * 4, sub.data());
      Tensor<S> ss, sr;
      field.eval_values(ps, sub, scale, sigma ? &ss : nullptr, rgb ? &sr : nullptr, clamped);
      if (sigma) std::copy(ss.data(), ss.data() + (r1 - r0), sigma->data() + r0);
      if (rgb) std::copy(sr.data(), sr.data() + (r1 - r0) * 3, rgb->data() + r0 * 3);
    }
  };
}

template <class S>
RenderOutput<S> render_fn(const FieldFn<S>& fn, const CameraPose& cam, double time, int width,
                          int height, const RenderOptions& opt, Rng* rng) {
  RayBatch<S> rays = generate_rays<S>(cam, width, height);
  const int64_t npix = int64_t(width) * height;
  std::vector<int64_t> ids(static_cast<size_t>(npix));
  for (int64_t i = 0; i < npix; ++i) ids[size_t(i)] = i;
  RayPlan<S> rp = plan_rays(rays.origins, rays.dirs, ids, time, opt, rng);

  RenderOutput<S> out;
  out.width = width;
  out.height = height;
  out.rgb = Tensor<S>({height, width, 3});
  out.opacity = Tensor<S>({height, width});
  out.depth = Tensor<S>({height, width});
  out.hit.assign(size_t(npix), 0);
  for (int64_t i = 0; i < npix; ++i)
    for (int c = 0; c < 3; ++c) out.rgb.data()[i * 3 + c] = S(opt.background[size_t(c)]);

  Tensor<S> sigma, rgb;
  if (rp.plan->nrays > 0) fn(rp.points, &sigma, &rgb);

  const auto& plan = *rp.plan;
  const S bg[3] = {plan.bg[0], plan.bg[1], plan.bg[2]};
  for (int r = 0; r < plan.nrays; ++r) {
    int64_t off = plan.offsets[size_t(r)];
    int64_t cnt = plan.offsets[size_t(r) + 1] - off;
    int64_t pix = rp.hit_rays[size_t(r)];
    out.hit[size_t(pix)] = 1;
    S prgb[3], pop, pdep;
    composite_ray(sigma.data() + off, rgb.data() + off * 3, plan.tvals.data() + off, cnt,
                  plan.delta[size_t(r)], bg, plan.weight_floor, prgb, &pop, &pdep);
    for (int c = 0; c < 3; ++c) out.rgb.data()[pix * 3 + c] = prgb[c];
    out.opacity.data()[pix] = pop;
    out.depth.data()[pix] = pdep;
  }

  if (opt.normals) out.normal = Tensor<S>({height, width, 3});
  if (opt.normals && plan.nrays > 0) {
    Tensor<S> probe({plan.nrays, 4});
    for (int r = 0; r < plan.nrays; ++r) {
      int64_t pix = rp.hit_rays[size_t(r)];
      S dep = out.depth.data()[pix];
      for (int c = 0; c < 3; ++c)
        probe.data()[r * 4 + c] =
            rays.origins.data()[pix * 3 + c] + dep * rays.dirs.data()[pix * 3 + c];
      probe.data()[r * 4 + 3] = S(time);
    }
    Tensor<S> nrm;
    std::vector<uint8_t> valid;
    compute_normals_fn(fn, probe, opt.normal_step, &nrm, &valid);
    for (int r = 0; r < plan.nrays; ++r) {
      int64_t pix = rp.hit_rays[size_t(r)];
      if (!valid[size_t(r)]) continue;
      for (int c = 0; c < 3; ++c) out.normal.data()[pix * 3 + c] = nrm.data()[r * 3 + c];
    }
  }
  return out;
}

template <class S>
RenderOutput<S> render_image(const CascadeField<S>& field, ParamStore<S>& ps,
                             const CameraPose& cam, double time, int width, int height,
                             const RenderOptions& opt, Rng* rng) {
  int64_t clamped = 0;
  RenderOutput<S> out =
      render_fn<S>(field_fn(field, ps, opt.scale, &clamped), cam, time, width, height, opt, rng);
  out.clamped = clamped;
  return out;
}

template <class S>
void compute_normals_fn(const FieldFn<S>& fn, const Tensor<S>& points, double h,
                        Tensor<S>* normals, std::vector<uint8_t>* valid, double floor) {
  H4D_CHECK(points.ndim() == 2 && points.dim(1) == 4, "points must be (N,4)");
  H4D_CHECK(h > 0.0, "normal step must be positive");
  const int n = points.dim(0);
  Tensor<S> probe({n * 6, 4});
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      for (int s = 0; s < 2; ++s) {
        S* row = probe.data() + (int64_t(i) * 6 + a * 2 + s) * 4;
        for (int c = 0; c < 4; ++c) row[c] = points.data()[i * 4 + c];
        row[a] += S(s == 0 ? h : -h);
      }
    }
  }
  Tensor<S> sig;
  fn(probe, &sig, nullptr);
  *normals = Tensor<S>({n, 3});
  valid->assign(size_t(n), 0);
  for (int i = 0; i < n; ++i) {
    double g[3], nn = 0;
    for (int a = 0; a < 3; ++a) {
      double sp = double(sig.data()[int64_t(i) * 6 + a * 2]);
      double sm = double(sig.data()[int64_t(i) * 6 + a * 2 + 1]);
      g[a] = -(sp - sm) / (2.0 * h);
      nn += g[a] * g[a];
    }
    nn = std::sqrt(nn);
    if (nn < floor) continue;  // flat density: direction undefined
    (*valid)[size_t(i)] = 1;
    for (int a = 0; a < 3; ++a) normals->data()[int64_t(i) * 3 + a] = S(g[a] / nn);
  }
}

template <class S>
void compute_normals(const CascadeField<S>& field, ParamStore<S>& ps, const Tensor<S>& points,
                     int scale, double h, Tensor<S>* normals, std::vector<uint8_t>* valid,
                     int64_t* clamped) {
  compute_normals_fn(field_fn(field, ps, scale, clamped), points, h, normals, valid);
}

template <class S>
void write_render_rgba(const std::string& path, const RenderOutput<S>& out) {
  const int h = out.height, w = out.width;
  Tensorf img({h, w, 4});
  for (int64_t i = 0; i < int64_t(h) * w; ++i) {
    for (int c = 0; c < 3; ++c) img.data()[i * 4 + c] = float(out.rgb.data()[i * 3 + c]);
    img.data()[i * 4 + 3] = float(out.opacity.data()[i]);
  }
  write_png8(path, img);
}

template <class S>
void write_depth_png16(const std::string& path, const RenderOutput<S>& out, double near,
                       double far) {
  H4D_CHECK(far > near, "depth range must have far > near");
  const int h = out.height, w = out.width;
  Tensorf img({h, w, 1});
  for (int64_t i = 0; i < int64_t(h) * w; ++i)
    img.data()[i] = float((double(out.depth.data()[i]) - near) / (far - near));
  write_png16(path, img);
}

template struct RenderOutput<float>;
template struct RenderOutput<double>;
template RayPlan<float> plan_rays(const Tensor<float>&, const Tensor<float>&,
                                  const std::vector<int64_t>&, double, const RenderOptions&,
                                  Rng*);
template RayPlan<double> plan_rays(const Tensor<double>&, const Tensor<double>&,
                                   const std::vector<int64_t>&, double, const RenderOptions&,
                                   Rng*);
template RenderOutput<float> render_fn(const FieldFn<float>&, const CameraPose&, double, int, int,
                                       const RenderOptions&, Rng*);
template RenderOutput<double> render_fn(const FieldFn<double>&, const CameraPose&, double, int,
                                        int, const RenderOptions&, Rng*);
template RenderOutput<float> render_image(const CascadeField<float>&, ParamStore<float>&,
                                          const CameraPose&, double, int, int,
                                          const RenderOptions&, Rng*);
template RenderOutput<double> render_image(const CascadeField<double>&, ParamStore<double>&,
                                           const CameraPose&, double, int, int,
                                           const RenderOptions&, Rng*);
template void compute_normals_fn(const FieldFn<float>&, const Tensor<float>&, double,
                                 Tensor<float>*, std::vector<uint8_t>*, double);
template void compute_normals_fn(const FieldFn<double>&, const Tensor<double>&, double,
                                 Tensor<double>*, std::vector<uint8_t>*, double);
template void compute_normals(const CascadeField<float>&, ParamStore<float>&,
                              const Tensor<float>&, int, double, Tensor<float>*,
                              std::vector<uint8_t>*, int64_t*);
template void compute_normals(const CascadeField<double>&, ParamStore<double>&,
                              const Tensor<double>&, int, double, Tensor<double>*,
                              std::vector<uint8_t>*, int64_t*);
template FieldFn<float> field_fn(const CascadeField<float>&, ParamStore<float>&, int, int64_t*);
template FieldFn<double> field_fn(const CascadeField<double>&, ParamStore<double>&, int, int64_t*);
template void write_render_rgba(const std::string&, const RenderOutput<float>&);
template void write_render_rgba(const std::string&, const RenderOutput<double>&);
template void write_depth_png16(const std::string&, const RenderOutput<float>&, double, double);
template void write_depth_png16(const std::string&, const RenderOutput<double>&, double, double);

}  // namespace hex4d
