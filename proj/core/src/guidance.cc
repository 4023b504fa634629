#include "hex4d/guidance.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hex4d/image.h"
#include "hex4d/subprocess.h"

namespace hex4d {

Tensorf noise_image(const Tensorf& x, int tau, const NoiseSchedule& ns, const Tensorf& eps) {
  H4D_CHECK(x.same_shape(eps), "noise must match the image shape");
  if (!x.all_finite()) throw NumericError("noise_image: non-finite render");
  double ab = ns.abar(tau);
  float sa = float(std::sqrt(ab)), sn = float(std::sqrt(1.0 - ab));
  Tensorf z(x.shape);
  for (int64_t i = 0; i < x.size(); ++i)
    z.v[size_t(i)] = sa * (2.0f * x.v[size_t(i)] - 1.0f) + sn * eps.v[size_t(i)];
  return z;
}

Tensorf gaussian_eps_hat(const Tensorf& z, int tau, const NoiseSchedule& ns, const Tensorf& mu) {
  H4D_CHECK(z.same_shape(mu), "oracle target must match the noised image shape");
  double ab = ns.abar(tau);
  H4D_CHECK(ab < 1.0, "gaussian oracle undefined at abar = 1");
  float sa = float(std::sqrt(ab)), inv = float(1.0 / std::sqrt(1.0 - ab));
  Tensorf eps(z.shape);
  for (int64_t i = 0; i < z.size(); ++i)
    eps.v[size_t(i)] = (z.v[size_t(i)] - sa * (2.0f * mu.v[size_t(i)] - 1.0f)) * inv;
  return eps;
}

Tensorf sds_grad(const Tensorf& x, ScoreProvider& provider, const GuidanceContext& ctx, int tau,
                 const NoiseSchedule& ns, const Tensorf& eps) {
  Tensorf z = noise_image(x, tau, ns, eps);
  Tensorf eps_hat = provider.predict_noise(z, tau, ctx);
  H4D_CHECK(eps_hat.same_shape(x), "provider output shape ", eps_hat.size(),
            " does not match the render");
  float w = float(ns.omega(tau));
  Tensorf g(x.shape);
  for (int64_t i = 0; i < x.size(); ++i)
    g.v[size_t(i)] = w * (eps_hat.v[size_t(i)] - eps.v[size_t(i)]);
  if (!g.all_finite()) throw NumericError("sds_grad: non-finite gradient from provider");
  return g;
}

GaussianOracleProvider::GaussianOracleProvider(Tensorf mu, const NoiseSchedule* ns)
    : mu_(std::move(mu)), ns_(ns) {
  H4D_CHECK(ns_ != nullptr, "provider needs a schedule");
}

Tensorf GaussianOracleProvider::predict_noise(const Tensorf& z, int tau,
                                              const GuidanceContext&) {
  return gaussian_eps_hat(z, tau, *ns_, mu_);
}

OracleViewProvider::OracleViewProvider(SyntheticScene scene, CameraPose input_view, int width,
                                       int height, const NoiseSchedule* ns, int gt_samples,
                                       size_t cache_cap, OrbitLimits limits)
    : scene_(std::move(scene)),
      input_view_(input_view),
      width_(width),
      height_(height),
      ns_(ns),
      gt_samples_(gt_samples),
      cache_cap_(std::max<size_t>(cache_cap, 1)),
      limits_(limits) {
  H4D_CHECK(ns_ != nullptr, "provider needs a schedule");
  scene_.validate();
  input_view_.validate();
}

Tensorf OracleViewProvider::view(const GuidanceContext& ctx) {
  H4D_CHECK(std::abs(ctx.d_elevation_deg) <= limits_.max_d_elevation_deg,
            "elevation delta ", ctx.d_elevation_deg, " outside the configured orbit");
  H4D_CHECK(std::abs(ctx.d_radius) <= limits_.max_d_radius, "radius delta ", ctx.d_radius,
            " outside the configured orbit");
  H4D_CHECK(ctx.time >= 0.0 && ctx.time <= 1.0, "time ", ctx.time, " outside [0,1]");

  auto q = [](double v) { return int64_t(std::llround(v * 1e6)); };
  std::array<int64_t, 4> key = {q(ctx.d_azimuth_deg), q(ctx.d_elevation_deg), q(ctx.d_radius),
                                q(ctx.time)};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }

  CameraPose cam = input_view_;
  cam.azimuth_deg += ctx.d_azimuth_deg;
  cam.elevation_deg += ctx.d_elevation_deg;
  cam.radius += ctx.d_radius;
  auto out = render_gt(scene_, cam, ctx.time, width_, height_, gt_samples_);
  Tensorf mu = out.rgb.cast<float>();

  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = cache_.emplace(key, std::move(mu));
  if (inserted) {
    order_.push_back(key);
    if (cache_.size() > cache_cap_) {
      cache_.erase(order_.front());
      order_.erase(order_.begin());
    }
  }
  return it->second;
}

size_t OracleViewProvider::cache_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

Tensorf OracleViewProvider::predict_noise(const Tensorf& z, int tau, const GuidanceContext& ctx) {
  return gaussian_eps_hat(z, tau, *ns_, view(ctx));
}

namespace {

// PNG16 carries only [0,1]; real-valued images travel with a declared range.
std::string encode_ranged(const Tensorf& img, double* lo, double* hi) {
  *lo = 1e30;
  *hi = -1e30;
  for (float v : img.v) {
    *lo = std::min(*lo, double(v));
    *hi = std::max(*hi, double(v));
  }
  if (img.size() == 0) *lo = 0, *hi = 1;
  if (*hi - *lo < 1e-6) *hi = *lo + 1e-6;
  Tensorf norm(img.shape);
  for (int64_t i = 0; i < img.size(); ++i)
    norm.v[size_t(i)] = float((img.v[size_t(i)] - *lo) / (*hi - *lo));
  return encode_png16(norm);
}

Tensorf decode_ranged(const std::string& png, double lo, double hi) {
  Tensorf norm = decode_png(png);
  Tensorf out(norm.shape);
  for (int64_t i = 0; i < norm.size(); ++i)
    out.v[size_t(i)] = float(lo + double(norm.v[size_t(i)]) * (hi - lo));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string score_request(const Tensorf& z, int tau, const GuidanceContext& ctx) {
  double lo, hi;
  std::string png = encode_ranged(z, &lo, &hi);
  std::string req = "HEX4D-SCORE 1\n";
  req += "tau " + std::to_string(tau) + "\n";
  req += "pose " + fmt(ctx.d_azimuth_deg) + " " + fmt(ctx.d_elevation_deg) + " " +
         fmt(ctx.d_radius) + "\n";
  req += "time " + fmt(ctx.time) + "\n";
  req += "range " + fmt(lo) + " " + fmt(hi) + "\n";
  wire_put_png(req, png);
  return req;
}

void parse_score_request(const std::string& bytes, Tensorf* z, int* tau, GuidanceContext* ctx) {
  WireReader r(bytes);
  if (r.line() != "HEX4D-SCORE 1") throw IoError("score request: bad magic");
  double lo = 0, hi = 1;
  *ctx = GuidanceContext{};
  for (;;) {
    std::string l = r.line();
    if (l.rfind("tau ", 0) == 0) {
      *tau = std::stoi(l.substr(4));
    } else if (l.rfind("pose ", 0) == 0) {
      if (std::sscanf(l.c_str(), "pose %lf %lf %lf", &ctx->d_azimuth_deg, &ctx->d_elevation_deg,
                      &ctx->d_radius) != 3)
        throw IoError("score request: bad pose line");
    } else if (l.rfind("time ", 0) == 0) {
      ctx->time = std::stod(l.substr(5));
    } else if (l.rfind("range ", 0) == 0) {
      if (std::sscanf(l.c_str(), "range %lf %lf", &lo, &hi) != 2)
        throw IoError("score request: bad range line");
      *z = decode_ranged(r.png(), lo, hi);
      return;
    } else {
      throw IoError("score request: unexpected line '" + l + "'");
    }
  }
}

std::string score_reply(const Tensorf& eps_hat) {
  double lo, hi;
  std::string png = encode_ranged(eps_hat, &lo, &hi);
  std::string rep = "HEX4D-SCORE-R 1\n";
  rep += "range " + fmt(lo) + " " + fmt(hi) + "\n";
  wire_put_png(rep, png);
  return rep;
}

Tensorf parse_score_reply(const std::string& bytes) {
  WireReader r(bytes);
  if (r.line() != "HEX4D-SCORE-R 1") throw IoError("score reply: bad magic");
  std::string rl = r.line();
  double lo, hi;
  if (std::sscanf(rl.c_str(), "range %lf %lf", &lo, &hi) != 2)
    throw IoError("score reply: bad range line");
  return decode_ranged(r.png(), lo, hi);
}

ExternalScoreProvider::ExternalScoreProvider(std::vector<std::string> argv,
                                             const NoiseSchedule* ns, int timeout_ms)
    : argv_(std::move(argv)), ns_(ns), timeout_ms_(timeout_ms) {
  H4D_CHECK(!argv_.empty(), "external provider needs a command line");
  H4D_CHECK(ns_ != nullptr, "provider needs a schedule");
}

Tensorf ExternalScoreProvider::predict_noise(const Tensorf& z, int tau,
                                             const GuidanceContext& ctx) {
  (void)ns_->abar(tau);  // bounds-check before shelling out
  auto res = run_subprocess(argv_, score_request(z, tau, ctx), timeout_ms_);
  if (res.exit_code != 0)
    throw IoError(detail::concat("score provider '", argv_[0], "' exited with ", res.exit_code,
                                 ": ", res.err));
  return parse_score_reply(res.out);
}

}  // namespace hex4d
