#include "hex4d/trainer.h"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "hex4d/checkpoint.h"
#include "hex4d/consistency.h"
#include "hex4d/guidance.h"
#include "hex4d/image.h"
#include "hex4d/metrics.h"
#include "hex4d/schedule.h"

namespace hex4d {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Temporary divergence tracing (HEX4D_TRACE=<iteration>).
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t grads_hash(const ParamStore<float>& ps) {
  uint64_t h = 1469598103934665603ull;
  for (int i = 0; i < ps.size(); ++i) {
    const auto& g = ps.entry(i).grad;
    h = fnv1a(g.data(), size_t(g.size()) * sizeof(float), h);
  }
  return h;
}

uint64_t values_hash(const ParamStore<float>& ps) {
  uint64_t h = 1469598103934665603ull;
  for (int i = 0; i < ps.size(); ++i) {
    const auto& v = ps.entry(i).value;
    h = fnv1a(v.data(), size_t(v.size()) * sizeof(float), h);
  }
  return h;
}

uint64_t tensor_hash(const Tensorf& t) { return fnv1a(t.data(), size_t(t.size()) * sizeof(float)); }

int64_t trace_iteration() {
  const char* e = std::getenv("HEX4D_TRACE");
  return e ? std::atoll(e) : -1;
}

// Integer-factor box average; masks stay soft (fractional coverage).
Tensorf box_downsample(const Tensorf& img, int factor) {
  if (factor == 1) return img;
  const int H = img.dim(0), W = img.dim(1);
  const int C = img.ndim() == 3 ? img.dim(2) : 1;
  const int h = H / factor, w = W / factor;
  Tensorf out({h, w, C});
  const float inv = 1.0f / float(factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.v[size_t(((y * factor + dy) * W + x * factor + dx) * C + c)];
        out.v[size_t((y * w + x) * C + c)] = acc * inv;
      }
  return out;
}

// Runs fn once per ray chunk with a self-contained sub-plan. s0 is the first
// sample row of the chunk in the parent plan.
template <class F>
void for_each_chunk(const RayPlan<float>& plan, int chunk_rays, F&& fn) {
  const CompositePlan<float>& cp = *plan.plan;
  for (int r0 = 0; r0 < cp.nrays; r0 += chunk_rays) {
    const int r1 = std::min(cp.nrays, r0 + chunk_rays);
    auto sub = std::make_shared<CompositePlan<float>>();
    sub->nrays = r1 - r0;
    sub->bg = cp.bg;
    sub->weight_floor = cp.weight_floor;
    const int64_t s0 = cp.offsets[size_t(r0)], s1 = cp.offsets[size_t(r1)];
    sub->offsets.resize(size_t(sub->nrays) + 1);
    for (int r = r0; r <= r1; ++r) sub->offsets[size_t(r - r0)] = cp.offsets[size_t(r)] - s0;
    sub->tvals.assign(cp.tvals.begin() + s0, cp.tvals.begin() + s1);
    sub->delta.assign(cp.delta.begin() + r0, cp.delta.begin() + r1);
    Tensorf pts({int(s1 - s0), 4});
    std::copy(plan.points.data() + 4 * s0, plan.points.data() + 4 * s1, pts.data());
    fn(r0, r1, sub, pts, s0);
  }
}

// Plain forward render of one planned view at one scale: full image over the
// background, opacity, and (optionally) the detached per-sample weights.
void forward_view(const CascadeField<float>& field, ParamStore<float>& ps,
                  const RayPlan<float>& plan, int scale, int W, int H,
                  const std::array<double, 3>& bg, int chunk_rays, Tensorf* rgb_img,
                  Tensorf* op_img, std::vector<float>* weights) {
  *rgb_img = Tensorf({H, W, 3});
  for (int64_t p = 0; p < int64_t(H) * W; ++p)
    for (int c = 0; c < 3; ++c) rgb_img->v[size_t(p * 3 + c)] = float(bg[size_t(c)]);
  *op_img = Tensorf({H, W, 1});
  if (weights) weights->assign(size_t(plan.plan->nsamples()), 0.0f);
  const float bgf[3] = {float(bg[0]), float(bg[1]), float(bg[2])};
  for_each_chunk(plan, chunk_rays,
                 [&](int r0, int, const std::shared_ptr<CompositePlan<float>>& sub,
                     const Tensorf& pts, int64_t s0) {
                   Tensorf sigma, rgb;
                   field.eval_values(ps, pts, scale, &sigma, &rgb);
                   for (int r = 0; r < sub->nrays; ++r) {
                     const int64_t o = sub->offsets[size_t(r)];
                     const int64_t n = sub->offsets[size_t(r) + 1] - o;
                     float orgb[3], op, depth;
                     composite_ray(sigma.data() + o, rgb.data() + 3 * o, sub->tvals.data() + o, n,
                                   sub->delta[size_t(r)], bgf, sub->weight_floor, orgb, &op,
                                   &depth, weights ? weights->data() + s0 + o : nullptr);
                     const int64_t p = plan.hit_rays[size_t(r0 + r)];
                     for (int c = 0; c < 3; ++c) rgb_img->v[size_t(p * 3 + c)] = orgb[c];
                     op_img->v[size_t(p)] = op;
                   }
                 });
}

// Chunked tape re-render with external pixel adjoints: grad_rgb {H,W,3} and
// optionally grad_op {H,W,1} flow into the parameter gradients.
void backward_view(const CascadeField<float>& field, ParamStore<float>& ps,
                   const RayPlan<float>& plan, int scale, const Tensorf& grad_rgb,
                   const Tensorf* grad_op, int chunk_rays) {
  for_each_chunk(plan, chunk_rays,
                 [&](int r0, int r1, const std::shared_ptr<CompositePlan<float>>& sub,
                     const Tensorf& pts, int64_t) {
                   Tensorf g5({r1 - r0, 5});
                   bool any = false;
                   for (int r = r0; r < r1; ++r) {
                     const int64_t p = plan.hit_rays[size_t(r)];
                     float* row = g5.data() + int64_t(r - r0) * 5;
                     for (int c = 0; c < 3; ++c) row[c] = grad_rgb.v[size_t(p * 3 + c)];
                     row[3] = grad_op ? grad_op->v[size_t(p)] : 0.0f;
                     row[4] = 0.0f;
                     any = any || row[0] != 0 || row[1] != 0 || row[2] != 0 || row[3] != 0;
                   }
                   if (!any) return;
                   Tape<float> tape;
                   FieldEval ev = field.eval(tape, ps, pts, scale);
                   const int comp = tape.composite(ev.sigma, ev.rgb, sub);
                   tape.backward(tape.dot_const(comp, std::move(g5)));
                 });
}

// Ref-NeRF orientation penalty on a weighted subsample of the view's samples,
// evaluated at the finest scale (the cascade sum carries gradients to every
// scale's parameters). Returns the raw loss; injects inject_weight * dL/dp.
double orientation_step(const CascadeField<float>& field, ParamStore<float>& ps,
                        const RayPlan<float>& plan, const RayBatch<float>& rays,
                        const std::vector<float>& weights, int max_points, double h,
                        double inject_weight, Rng& rng) {
  std::vector<int64_t> cand;
  std::vector<int> cand_ray;
  const CompositePlan<float>& cp = *plan.plan;
  for (int r = 0; r < cp.nrays; ++r)
    for (int64_t i = cp.offsets[size_t(r)]; i < cp.offsets[size_t(r) + 1]; ++i)
      if (weights[size_t(i)] > 1e-4f) {
        cand.push_back(i);
        cand_ray.push_back(r);
      }
  if (cand.empty() || max_points <= 0) return 0.0;
  const int M = int(std::min<int64_t>(max_points, int64_t(cand.size())));
  if (M < int(cand.size())) {
    for (int i = 0; i < M; ++i) {  // partial Fisher-Yates
      const auto j = rng.uniform_int(i, int64_t(cand.size()) - 1);
      std::swap(cand[size_t(i)], cand[size_t(j)]);
      std::swap(cand_ray[size_t(i)], cand_ray[size_t(j)]);
    }
  }

  Tensorf pts({M, 4}), w({M}), dirs({M, 3});
  for (int i = 0; i < M; ++i) {
    std::copy(plan.points.data() + cand[size_t(i)] * 4, plan.points.data() + cand[size_t(i)] * 4 + 4,
              pts.data() + int64_t(i) * 4);
    w.v[size_t(i)] = weights[size_t(cand[size_t(i)])];
    const int64_t pix = plan.hit_rays[size_t(cand_ray[size_t(i)])];
    std::copy(rays.dirs.data() + pix * 3, rays.dirs.data() + pix * 3 + 3,
              dirs.data() + int64_t(i) * 3);
  }

  Tensorf probes = normal_probe_points(pts, h);
  Tape<float> tape;
  FieldEval ev = field.eval(tape, ps, probes, 0);
  Tensorf normals, graw;
  std::vector<uint8_t> valid;
  normals_from_probe_sigma(tape.val(ev.sigma), h, &normals, &valid, &graw);
  Tensorf gn;
  const float loss = orientation_loss(w, normals, valid, dirs, &gn);

  Tensorf gsig;
  normal_probe_backward(graw, valid, gn, h, &gsig);
  bool any = false;
  for (float g : gsig.v)
    if (g != 0) {
      any = true;
      break;
    }
  if (any) {
    for (float& g : gsig.v) g *= float(inject_weight);
    gsig.shape = tape.val(ev.sigma).shape;
    tape.backward(tape.dot_const(ev.sigma, std::move(gsig)));
  }
  return double(loss);
}

// Normal-field smoothness at random interior points: normals at p vs p + h*u
// for one random unit u per point, probe step h/2, finest scale.
double normal_smooth_step(const CascadeField<float>& field, ParamStore<float>& ps, double t,
                          int n_points, double h, double inject_weight, Rng& rng) {
  if (n_points <= 0) return 0.0;
  const int M = n_points;
  Tensorf pts({2 * M, 4});
  for (int i = 0; i < M; ++i) {
    double d[3] = {rng.normal(), rng.normal(), rng.normal()};
    double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (dn < 1e-12) dn = 1.0;
    const double rad = 0.9 * std::cbrt(rng.uniform());
    double u[3] = {rng.normal(), rng.normal(), rng.normal()};
    double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    if (un < 1e-12) {
      u[0] = 1;
      un = 1;
    }
    for (int a = 0; a < 3; ++a) {
      const float base = float(rad * d[a] / dn);
      pts.v[size_t(i) * 4 + size_t(a)] = base;
      pts.v[size_t(M + i) * 4 + size_t(a)] = base + float(h * u[a] / un);
    }
    pts.v[size_t(i) * 4 + 3] = float(t);
    pts.v[size_t(M + i) * 4 + 3] = float(t);
  }

  const double hp = h * 0.5;
  Tensorf probes = normal_probe_points(pts, hp);
  Tape<float> tape;
  FieldEval ev = field.eval(tape, ps, probes, 0);
  Tensorf normals, graw;
  std::vector<uint8_t> valid;
  normals_from_probe_sigma(tape.val(ev.sigma), hp, &normals, &valid, &graw);

  Tensorf na({M, 3}), nb({M, 3}), ga, gb;
  std::vector<uint8_t> va(valid.begin(), valid.begin() + M);
  std::vector<uint8_t> vb(valid.begin() + M, valid.end());
  std::copy(normals.data(), normals.data() + 3 * M, na.data());
  std::copy(normals.data() + 3 * M, normals.data() + 6 * M, nb.data());
  const float loss = normal_pair_loss(na, nb, va, vb, &ga, &gb);

  Tensorf gn({2 * M, 3});
  std::copy(ga.data(), ga.data() + 3 * M, gn.data());
  std::copy(gb.data(), gb.data() + 3 * M, gn.data() + 3 * M);
  Tensorf gsig;
  normal_probe_backward(graw, valid, gn, hp, &gsig);
  bool any = false;
  for (float g : gsig.v)
    if (g != 0) {
      any = true;
      break;
    }
  if (any) {
    for (float& g : gsig.v) g *= float(inject_weight);
    gsig.shape = tape.val(ev.sigma).shape;
    tape.backward(tape.dot_const(ev.sigma, std::move(gsig)));
  }
  return double(loss);
}

RayPlan<float> plan_full_view(const CameraPose& cam, double t, int res, const RenderOptions& opt,
                              Rng* rng, RayBatch<float>* rays_out) {
  RayBatch<float> rays = generate_rays<float>(cam, res, res);
  std::vector<int64_t> ids(size_t(res) * size_t(res));
  std::iota(ids.begin(), ids.end(), 0);
  RayPlan<float> plan = plan_rays(rays.origins, rays.dirs, ids, t, opt, rng);
  if (rays_out) *rays_out = std::move(rays);
  return plan;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::concat("cannot open '", path, "'"));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TrainReport train(const TrainConfig& cfg, const Dataset& ds, CascadeField<float>& field,
                  ParamStore<float>& ps, const std::string& out_dir, const std::string& resume,
                  const SyntheticScene* scene) {
  cfg.validate();
  ds.validate();
  H4D_CHECK(field.num_scales() == int(cfg.field.spatial_res.size()),
            "field/config scale count mismatch");
  int64_t total = 0;
  for (const auto& s : cfg.stages) {
    total += s.iterations;
    H4D_CHECK(ds.width % s.resolution == 0 && ds.height % s.resolution == 0,
              "stage resolution ", s.resolution, " does not evenly divide the dataset frames (",
              ds.width, "x", ds.height, ")");
  }
  if (cfg.icl.probability > 0 && cfg.icl.temporal)
    H4D_CHECK(ds.num_frames() >= cfg.icl.J, "temporal ICL needs at least J=", cfg.icl.J,
              " dataset frames");

  NoiseSchedule ns = make_schedule(cfg.guidance);

  SyntheticScene scene_storage;
  const SyntheticScene* sc = scene;
  if (!sc && !cfg.scene_json.empty()) {
    scene_storage = scene_from_json(read_text_file(cfg.scene_json));
    sc = &scene_storage;
  }

  std::unique_ptr<ScoreProvider> external_provider;
  std::map<int, std::unique_ptr<OracleViewProvider>> oracle_providers;
  if (cfg.guidance.provider == "external") {
    external_provider = std::make_unique<ExternalScoreProvider>(cfg.guidance.external_cmd, &ns,
                                                                cfg.guidance.timeout_ms);
  } else {
    H4D_CHECK(sc != nullptr, "oracle_view guidance needs a scene (argument or scene_json)");
  }
  auto provider_at = [&](int res) -> ScoreProvider& {
    if (external_provider) return *external_provider;
    auto it = oracle_providers.find(res);
    if (it == oracle_providers.end())
      it = oracle_providers
               .emplace(res, std::make_unique<OracleViewProvider>(
                                 *sc, ds.camera, res, res, &ns, cfg.guidance.gt_samples,
                                 size_t(cfg.guidance.cache_cap), cfg.guidance.orbit))
               .first;
    return *it->second;
  };

  std::unique_ptr<Interpolator> interp;
  if (!cfg.icl.external_cmd.empty())
    interp = std::make_unique<ExternalInterpolator>(cfg.icl.external_cmd, cfg.icl.timeout_ms);
  else
    interp = std::make_unique<LinearInterpolator>();

  Rng rng(cfg.seed);
  AdamState<float> adam;
  adam.hp = cfg.optim;
  uint64_t it0 = 0;
  if (!resume.empty()) {
    std::string ignored;
    load_checkpoint_file(resume, ps, &adam, &rng, &it0, &ignored);
    adam.hp = cfg.optim;
    field.check_params(ps);
    H4D_CHECK(int64_t(it0) <= total, "checkpoint iteration ", it0,
              " is beyond the configured schedule");
  } else {
    field.check_params(ps);
    adam.init(ps);
  }

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir + "/train_log.csv", std::ios::trunc);
    if (!csv) throw IoError(detail::concat("cannot write ", out_dir, "/train_log.csv"));
    csv << "iteration,stage,step,icl_fired,sds,icl,recon,mask,normal_smooth,orientation,total,"
           "wall_ms\n";
  }
  const std::string meta = config_to_json(cfg);

  TrainReport report;
  const auto t_start = Clock::now();

  for (int64_t it = int64_t(it0); it < total; ++it) {
    const auto t_iter = Clock::now();
    int si = 0;
    int64_t acc = 0;
    while (it >= acc + cfg.stages[size_t(si)].iterations) {
      acc += cfg.stages[size_t(si)].iterations;
      ++si;
    }
    const StageConfig& st = cfg.stages[size_t(si)];
    const int R = st.resolution;
    const int B = st.batch;
    const int ds_factor = ds.width / R;
    const double progress = total > 1 ? double(it) / double(total - 1) : 0.0;
    const bool sds_step = (it % 2 == 0);

    RenderOptions opt;
    opt.n_samples = cfg.n_samples;
    opt.background = cfg.background;

    std::vector<int> scales;
    if (field.config().concat_mode)
      scales = {0};
    else
      for (int s = 1; s <= field.num_scales(); ++s) scales.push_back(s);

    ps.zero_grads();
    LossComponents comps;
    bool icl_fired = false;
    double tot = 0.0;

    const bool tracing = it == trace_iteration();
    auto trace = [&](const char* tag, uint64_t extra) {
      if (!tracing) return;
      std::fprintf(stderr, "[trace %lld] %-16s grads %016llx extra %016llx\n",
                   static_cast<long long>(it), tag, static_cast<unsigned long long>(grads_hash(ps)),
                   static_cast<unsigned long long>(extra));
    };
    if (tracing) {
      std::ostringstream rs;
      rng.save(rs);
      trace("start", fnv1a(rs.str().data(), rs.str().size(), values_hash(ps)));
    }

    try {
      // first view's finest-scale render feeds the orientation loss
      RayPlan<float> reg_plan;
      RayBatch<float> reg_rays;
      std::vector<float> reg_weights;
      bool have_reg = false;
      double reg_time = 0.0;

      for (int b = 0; b < B; ++b) {
        const int k = int(rng.uniform_int(0, ds.num_frames() - 1));
        const double t = ds.times[size_t(k)];
        CameraPose cam = ds.camera;
        GuidanceContext ctx;
        if (sds_step) {
          cam.azimuth_deg = rng.uniform(0.0, 360.0);
          cam.elevation_deg = rng.uniform(cfg.elevation_lo, cfg.elevation_hi);
          ctx.d_azimuth_deg = cam.azimuth_deg - ds.camera.azimuth_deg;
          ctx.d_elevation_deg = cam.elevation_deg - ds.camera.elevation_deg;
          ctx.d_radius = 0.0;
          ctx.time = t;
        }
        if (b == 0) reg_time = t;

        RayBatch<float> rays;
        RayPlan<float> plan = plan_full_view(cam, t, R, opt, &rng, &rays);

        int tau = 0;
        if (sds_step) {
          TauRange tr;
          if (cfg.guidance.anneal) tr = tau_range_at(progress);
          else {
            tr.lo = cfg.guidance.tau_lo;
            tr.hi = cfg.guidance.tau_hi;
          }
          tau = sample_timestep(rng, ns, tr.lo, tr.hi);
        }

        Tensorf gt_frame, gt_mask;
        if (!sds_step) {
          gt_frame = box_downsample(ds.frames[size_t(k)], ds_factor);
          gt_mask = box_downsample(ds.masks[size_t(k)], ds_factor);
        }

        for (size_t sidx = 0; sidx < scales.size(); ++sidx) {
          const int s = scales[sidx];
          const bool capture = (b == 0) && (sidx + 1 == scales.size());
          Tensorf rgb, op;
          forward_view(field, ps, plan, s, R, R, cfg.background, opt.chunk_rays, &rgb, &op,
                       capture ? &reg_weights : nullptr);

          if (tracing) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "fwd b%d s%d", b, s);
            trace(tag, fnv1a(op.data(), size_t(op.size()) * sizeof(float), tensor_hash(rgb)));
          }

          if (sds_step) {
            Tensorf eps({R, R, 3});
            for (float& e : eps.v) e = float(rng.normal());
            Tensorf g = sds_grad(rgb, provider_at(R), ctx, tau, ns, eps);
            double ss = 0.0;
            for (float v : g.v) ss += double(v) * v;
            comps.sds += ss / double(g.size()) / B;
            for (float& v : g.v) v *= float(cfg.weights.sds / B);
            if (tracing) trace("sds grad", tensor_hash(g));
            backward_view(field, ps, plan, s, g, nullptr, opt.chunk_rays);
            if (tracing) trace("sds bwd", 0);
          } else {
            Tensorf grad_rgb, grad_op;
            const float lr = recon_loss(rgb, gt_frame, gt_mask, cfg.background, false, &grad_rgb);
            const float lm = mask_loss(op, gt_mask, false, &grad_op);
            comps.recon += double(lr) / B;
            comps.mask += double(lm) / B;
            for (float& v : grad_rgb.v) v *= float(cfg.weights.recon / B);
            for (float& v : grad_op.v) v *= float(cfg.weights.mask / B);
            if (tracing)
              trace("recon grad",
                    fnv1a(grad_op.data(), size_t(grad_op.size()) * sizeof(float),
                          tensor_hash(grad_rgb)));
            backward_view(field, ps, plan, s, grad_rgb, &grad_op, opt.chunk_rays);
            if (tracing) trace("recon bwd", 0);
          }
        }

        if (b == 0) {
          reg_plan = std::move(plan);
          reg_rays = std::move(rays);
          have_reg = true;
        }
      }

      if (si == 0 && cfg.icl.probability > 0 && rng.uniform() < cfg.icl.probability) {
        icl_fired = true;
        bool spatial = cfg.icl.spatial;
        if (cfg.icl.spatial && cfg.icl.temporal) spatial = rng.uniform() < 0.5;
        FrameBatch batch;
        if (spatial) {
          batch.axis = FrameBatch::Axis::spatial;
          CameraPose base = ds.camera;
          base.azimuth_deg = rng.uniform(0.0, 360.0);
          base.elevation_deg = rng.uniform(cfg.elevation_lo, cfg.elevation_hi);
          batch.cameras = sample_spatial_batch(rng, base, cfg.icl.J);
          const double t = ds.times[size_t(rng.uniform_int(0, ds.num_frames() - 1))];
          batch.times.assign(size_t(cfg.icl.J), t);
        } else {
          batch.axis = FrameBatch::Axis::temporal;
          const std::vector<int> idx = sample_temporal_batch(rng, cfg.icl.J, ds.num_frames());
          CameraPose cam = ds.camera;
          cam.azimuth_deg = rng.uniform(0.0, 360.0);
          cam.elevation_deg = rng.uniform(cfg.elevation_lo, cfg.elevation_hi);
          batch.cameras.assign(size_t(cfg.icl.J), cam);
          for (int i : idx) batch.times.push_back(ds.times[size_t(i)]);
        }

        std::vector<RayPlan<float>> plans(size_t(cfg.icl.J));
        for (size_t sidx = 0; sidx < scales.size(); ++sidx) {
          const int s = scales[sidx];
          batch.frames.clear();
          for (int j = 0; j < cfg.icl.J; ++j) {
            if (sidx == 0)
              plans[size_t(j)] = plan_full_view(batch.cameras[size_t(j)], batch.times[size_t(j)],
                                                R, opt, &rng, nullptr);
            Tensorf rgb, op;
            forward_view(field, ps, plans[size_t(j)], s, R, R, cfg.background, opt.chunk_rays,
                         &rgb, &op, nullptr);
            batch.frames.push_back(std::move(rgb));
          }
          IclResult res = icl_loss(batch, *interp, cfg.icl.squared);
          comps.icl += res.loss;
          if (tracing) {
            uint64_t h = 1469598103934665603ull;
            for (const Tensorf& f : batch.frames)
              h = fnv1a(f.data(), size_t(f.size()) * sizeof(float), h);
            for (const Tensorf& g : res.frame_grads)
              h = fnv1a(g.data(), size_t(g.size()) * sizeof(float), h);
            char tag[32];
            std::snprintf(tag, sizeof tag, "icl loss s%d", s);
            trace(tag, h);
          }
          for (int j = 0; j < cfg.icl.J; ++j) {
            Tensorf& g = res.frame_grads[size_t(j)];
            bool any = false;
            for (float v : g.v)
              if (v != 0) {
                any = true;
                break;
              }
            if (!any) continue;
            for (float& v : g.v) v *= float(cfg.weights.icl);
            backward_view(field, ps, plans[size_t(j)], s, g, nullptr, opt.chunk_rays);
            if (tracing) {
              char tag[32];
              std::snprintf(tag, sizeof tag, "icl bwd s%d f%d", s, j);
              trace(tag, 0);
            }
          }
        }
      }

      if (have_reg && cfg.normal_points > 0) {
        comps.orientation +=
            orientation_step(field, ps, reg_plan, reg_rays, reg_weights, cfg.normal_points,
                             cfg.normal_h, cfg.weights.orientation_at(int(it)), rng);
        trace("orientation", 0);
        comps.normal_smooth += normal_smooth_step(field, ps, reg_time, cfg.normal_points,
                                                  cfg.normal_h, cfg.weights.normal_smooth, rng);
        trace("normal_smooth", 0);
      }

      tot = total_loss(comps, cfg.weights, int(it));
      adam_step(ps, adam);
      trace("adam", values_hash(ps));
    } catch (const NumericError& e) {
      if (!out_dir.empty()) {
        const std::string snap = out_dir + "/diagnostic_nan.ckpt";
        save_checkpoint_file(snap, ps, &adam, &rng, uint64_t(it), meta);
        throw NumericError(detail::concat(e.what(), "; state snapshot: ", snap));
      }
      throw;
    }

    IterRow row;
    row.iteration = int(it);
    row.stage = si;
    row.step = sds_step ? 's' : 'r';
    row.icl_fired = icl_fired;
    row.comps = comps;
    row.total = tot;
    row.wall_ms = ms_since(t_iter);
    report.rows.push_back(row);
    if (csv.is_open()) {
      csv << std::setprecision(10) << row.iteration << ',' << row.stage << ',' << row.step << ','
          << (row.icl_fired ? 1 : 0) << ',' << comps.sds << ',' << comps.icl << ',' << comps.recon
          << ',' << comps.mask << ',' << comps.normal_smooth << ',' << comps.orientation << ','
          << row.total << ',' << row.wall_ms << '\n';
      csv.flush();
    }

    const uint64_t done = uint64_t(it) + 1;
    if (!out_dir.empty() &&
        (done % uint64_t(cfg.checkpoint_every) == 0 || int64_t(done) == total)) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06llu.ckpt",
                    static_cast<unsigned long long>(done));
      report.checkpoint_path = out_dir + "/" + name;
      save_checkpoint_file(report.checkpoint_path, ps, &adam, &rng, done, meta);
    }
  }

  report.wall_seconds = ms_since(t_start) / 1000.0;

  if (sc && !cfg.eval_cameras.empty() && !cfg.eval_times.empty()) {
    RenderOptions eopt;
    eopt.n_samples = cfg.n_samples;
    eopt.background = cfg.background;
    for (const CameraPose& cam : cfg.eval_cameras)
      for (double t : cfg.eval_times) {
        RenderOutput<float> pred = render_image(field, ps, cam, t, ds.width, ds.height, eopt);
        RenderOutput<double> gt = render_gt(*sc, cam, t, ds.width, ds.height);
        const Tensord prgb = pred.rgb.cast<double>();
        report.eval.psnr.push_back(psnr(prgb, gt.rgb));
        report.eval.ssim.push_back(ssim(prgb, gt.rgb));
        report.eval_iou.push_back(mask_iou(pred.opacity.cast<double>(), gt.opacity));
      }
    for (double v : report.eval.psnr) report.eval.mean_psnr += v;
    for (double v : report.eval.ssim) report.eval.mean_ssim += v;
    for (double v : report.eval_iou) report.mean_iou += v;
    const double n = double(report.eval.psnr.size());
    report.eval.mean_psnr /= n;
    report.eval.mean_ssim /= n;
    report.mean_iou /= n;
  }
  return report;
}

std::vector<std::string> render_sequence(const std::string& ckpt_path,
                                         const std::vector<CameraPose>& cameras,
                                         const std::vector<double>& timestamps, int width,
                                         int height, const std::string& out_dir) {
  H4D_CHECK(!cameras.empty() && !timestamps.empty(), "need at least one camera and timestamp");
  H4D_CHECK(width >= 1 && height >= 1, "bad render size ", width, "x", height);
  for (double t : timestamps) H4D_CHECK(t >= 0.0 && t <= 1.0, "timestamp ", t, " outside [0,1]");
  for (const CameraPose& cam : cameras) cam.validate();

  ParamStore<float> ps;
  uint64_t iter = 0;
  std::string meta;
  load_checkpoint_file(ckpt_path, ps, static_cast<AdamState<float>*>(nullptr), nullptr, &iter,
                       &meta);
  const TrainConfig cfg = config_from_json(meta);
  CascadeField<float> field(make_field_config(cfg));
  field.check_params(ps);

  std::filesystem::create_directories(out_dir);
  RenderOptions opt;
  opt.n_samples = cfg.n_samples;
  opt.background = cfg.background;

  nlohmann::json manifest;
  manifest["width"] = width;
  manifest["height"] = height;
  manifest["iteration"] = iter;
  manifest["entries"] = nlohmann::json::array();
  std::vector<std::string> paths;
  for (size_t i = 0; i < cameras.size(); ++i)
    for (size_t j = 0; j < timestamps.size(); ++j) {
      RenderOutput<float> out =
          render_image(field, ps, cameras[i], timestamps[j], width, height, opt);
      char name[64];
      std::snprintf(name, sizeof name, "render_c%02zu_t%03zu.png", i, j);
      const std::string path = out_dir + "/" + name;
      write_png8(path, out.rgb);
      manifest["entries"].push_back({{"file", name},
                                     {"azimuth_deg", cameras[i].azimuth_deg},
                                     {"elevation_deg", cameras[i].elevation_deg},
                                     {"radius", cameras[i].radius},
                                     {"fov_deg", cameras[i].fov_deg},
                                     {"time", timestamps[j]}});
      paths.push_back(path);
    }
  std::ofstream mf(out_dir + "/manifest.json");
  if (!mf) throw IoError(detail::concat("cannot write ", out_dir, "/manifest.json"));
  mf << manifest.dump(2) << "\n";
  return paths;
}

EvalReport evaluate(const std::vector<Tensorf>& pred, const std::vector<Tensorf>& gt) {
  H4D_CHECK(pred.size() == gt.size() && !pred.empty(),
            "frame sets must align: ", pred.size(), " vs ", gt.size());
  EvalReport r;
  for (size_t i = 0; i < pred.size(); ++i) {
    H4D_CHECK(pred[i].same_shape(gt[i]), "frame ", i, " shape mismatch");
    r.psnr.push_back(psnr(pred[i], gt[i]));
    r.ssim.push_back(ssim(pred[i], gt[i]));
    r.mean_psnr += r.psnr.back();
    r.mean_ssim += r.ssim.back();
  }
  r.mean_psnr /= double(pred.size());
  r.mean_ssim /= double(pred.size());
  return r;
}

}  // namespace hex4d
