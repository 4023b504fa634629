#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "hex4d/common.h"
#include "hex4d/guidance.h"
#include "hex4d/rng.h"
#include "hex4d/scene.h"
#include "hex4d/schedule.h"

using namespace hex4d;

namespace {

Tensorf random_image(Rng& rng, std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
  Tensorf t(std::move(shape));
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensorf normal_image(Rng& rng, std::vector<int> shape) {
  Tensorf t(std::move(shape));
  for (auto& v : t.v) v = static_cast<float>(rng.normal());
  return t;
}

// A schedule with a single hand-picked abar value at tau = 1.
NoiseSchedule fixed_abar(double abar) {
  NoiseSchedule ns;
  ns.T = 1;
  ns.abar_ = {1.0, abar};
  return ns;
}

double max_abs_diff(const Tensorf& a, const Tensorf& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a.v[size_t(i)]) - double(b.v[size_t(i)])));
  return m;
}

class ShapeLiar : public ScoreProvider {
 public:
  Tensorf predict_noise(const Tensorf&, int, const GuidanceContext&) override {
    return Tensorf({1, 1, 1});
  }
};

class NanProvider : public ScoreProvider {
 public:
  Tensorf predict_noise(const Tensorf& z, int, const GuidanceContext&) override {
    Tensorf out = z;
    out.v[0] = std::numeric_limits<float>::quiet_NaN();
    return out;
  }
};

std::string stub(const char* name) { return std::string(H4D_STUB_DIR) + "/" + name; }

}  // namespace

TEST_CASE("schedule: linear beta ramp") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  CHECK(ns.T == 1000);
  CHECK(ns.abar_.size() == 1001);
  CHECK(ns.abar_[0] == 1.0);
  // First step removes exactly beta_start of the signal.
  CHECK(ns.abar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));
  // Strictly decreasing all the way down.
  for (int t = 1; t <= 1000; ++t) CHECK(ns.abar(t) < ns.abar_[size_t(t - 1)]);
  // Late-schedule signal fraction is almost gone but still positive.
  CHECK(ns.abar(1000) > 0.0);
  CHECK(ns.abar(1000) < 1e-3);
  CHECK_NOTHROW(ns.validate());

  CHECK_THROWS_AS(ns.abar(0), ContractError);
  CHECK_THROWS_AS(ns.abar(1001), ContractError);

  NoiseSchedule bad = ns;
  bad.abar_[5] = bad.abar_[4];  // break monotonicity
  CHECK_THROWS_AS(bad.validate(), ContractError);
  NoiseSchedule bad2 = ns;
  bad2.abar_[0] = 0.5;
  CHECK_THROWS_AS(bad2.validate(), ContractError);
}

TEST_CASE("schedule: omega weighting") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  CHECK(ns.omega(1) == doctest::Approx(1.0 - ns.abar(1)));
  CHECK(ns.omega(900) == doctest::Approx(1.0 - ns.abar(900)));
  ns.omega_tag = NoiseSchedule::Omega::constant;
  CHECK(ns.omega(1) == 1.0);
  CHECK(ns.omega(900) == 1.0);
}

TEST_CASE("noise_image: closed-form points") {
  // abar = 0.25, x = 1, eps = 0: z = 0.5 * (2*1 - 1) = 0.5.
  NoiseSchedule ns = fixed_abar(0.25);
  Tensorf x({2, 2, 3}, 1.0f);
  Tensorf eps({2, 2, 3}, 0.0f);
  Tensorf z = noise_image(x, 1, ns, eps);
  for (auto v : z.v) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

  // x at the mapped origin: z is exactly the scaled noise.
  Rng rng(7);
  Tensorf mid({3, 3, 3}, 0.5f);
  Tensorf e = normal_image(rng, {3, 3, 3});
  Tensorf z2 = noise_image(mid, 1, ns, e);
  for (int64_t i = 0; i < z2.size(); ++i)
    CHECK(z2.v[size_t(i)] ==
          doctest::Approx(std::sqrt(0.75) * e.v[size_t(i)]).epsilon(1e-5));

  // No-noise endpoint: abar -> 1 gives back the mapped signal.
  NoiseSchedule clean = fixed_abar(1.0);
  Tensorf xr = random_image(rng, {4, 4, 3});
  Tensorf zero({4, 4, 3}, 0.0f);
  Tensorf z4 = noise_image(xr, 1, clean, zero);
  for (int64_t i = 0; i < z4.size(); ++i)
    CHECK(z4.v[size_t(i)] == doctest::Approx(2.0 * xr.v[size_t(i)] - 1.0).epsilon(1e-6));
}

TEST_CASE("noise_image: input validation") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(10);
  Tensorf x({2, 2, 3}, 0.5f);
  Tensorf eps_bad({2, 3, 3}, 0.0f);
  CHECK_THROWS_AS(noise_image(x, 1, ns, eps_bad), ContractError);
  CHECK_THROWS_AS(noise_image(x, 0, ns, Tensorf({2, 2, 3}, 0.0f)), ContractError);
  CHECK_THROWS_AS(noise_image(x, 11, ns, Tensorf({2, 2, 3}, 0.0f)), ContractError);
  Tensorf x_nan = x;
  x_nan.v[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(noise_image(x_nan, 1, ns, Tensorf({2, 2, 3}, 0.0f)), NumericError);
}

TEST_CASE("gaussian_eps_hat: recovers the injected noise when mu is the truth") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(11);
  Tensorf mu = random_image(rng, {5, 4, 3});
  for (int tau : {20, 400, 980}) {
    Tensorf eps = normal_image(rng, {5, 4, 3});
    Tensorf z = noise_image(mu, tau, ns, eps);
    Tensorf eps_hat = gaussian_eps_hat(z, tau, ns, mu);
    CHECK(max_abs_diff(eps_hat, eps) < 1e-4);
  }
}

TEST_CASE("gaussian_eps_hat: fixed point and affine structure") {
  // abar = 0.25, mapped mu = 0 (i.e. mu = 0.5), z = 1 -> eps_hat = 1/sqrt(0.75).
  NoiseSchedule ns = fixed_abar(0.25);
  Tensorf mu({2, 2, 1}, 0.5f);
  Tensorf z({2, 2, 1}, 1.0f);
  Tensorf eh = gaussian_eps_hat(z, 1, ns, mu);
  for (auto v : eh.v) CHECK(v == doctest::Approx(1.0 / std::sqrt(0.75)).epsilon(1e-6));

  // Affine in z: for a + b = 1, eps_hat(a z1 + b z2) = a eps_hat(z1) + b eps_hat(z2).
  Rng rng(3);
  Tensorf z1 = normal_image(rng, {3, 3, 3});
  Tensorf z2 = normal_image(rng, {3, 3, 3});
  Tensorf mu2 = random_image(rng, {3, 3, 3});
  double a = 0.3, b = 0.7;
  Tensorf mix({3, 3, 3});
  for (int64_t i = 0; i < mix.size(); ++i)
    mix.v[size_t(i)] = static_cast<float>(a * z1.v[size_t(i)] + b * z2.v[size_t(i)]);
  Tensorf lhs = gaussian_eps_hat(mix, 1, ns, mu2);
  Tensorf e1 = gaussian_eps_hat(z1, 1, ns, mu2);
  Tensorf e2 = gaussian_eps_hat(z2, 1, ns, mu2);
  for (int64_t i = 0; i < lhs.size(); ++i)
    CHECK(lhs.v[size_t(i)] ==
          doctest::Approx(a * e1.v[size_t(i)] + b * e2.v[size_t(i)]).epsilon(1e-4));

  // abar = 1 leaves no noise to explain.
  NoiseSchedule degenerate = fixed_abar(1.0);
  CHECK_THROWS_AS(gaussian_eps_hat(z, 1, degenerate, mu), ContractError);
}

TEST_CASE("sds_grad: zero at the provider's fixed point") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(17);
  Tensorf x = random_image(rng, {6, 5, 3});
  GaussianOracleProvider provider(x, &ns);  // mu == x: provider explains all noise
  GuidanceContext ctx;
  for (int tau : {50, 500, 950}) {
    Tensorf eps = normal_image(rng, {6, 5, 3});
    Tensorf g = sds_grad(x, provider, ctx, tau, ns, eps);
    CHECK(max_abs_diff(g, Tensorf({6, 5, 3}, 0.0f)) < 1e-4);
  }
}

TEST_CASE("sds_grad: gaussian oracle closed form") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(19);
  Tensorf x = random_image(rng, {4, 4, 3});
  Tensorf mu = random_image(rng, {4, 4, 3});
  GaussianOracleProvider provider(mu, &ns);
  GuidanceContext ctx;
  int tau = 300;
  Tensorf eps = normal_image(rng, {4, 4, 3});
  Tensorf g = sds_grad(x, provider, ctx, tau, ns, eps);
  double abar = ns.abar(tau);
  double coef = ns.omega(tau) * 2.0 * std::sqrt(abar) / std::sqrt(1.0 - abar);
  for (int64_t i = 0; i < g.size(); ++i)
    CHECK(g.v[size_t(i)] ==
          doctest::Approx(coef * (x.v[size_t(i)] - mu.v[size_t(i)])).epsilon(5e-4));

  // The gradient does not depend on the sampled noise for an affine provider.
  Tensorf eps2 = normal_image(rng, {4, 4, 3});
  Tensorf g2 = sds_grad(x, provider, ctx, tau, ns, eps2);
  CHECK(max_abs_diff(g, g2) < 1e-4);

  // Switching the weight tag rescales by 1/omega, same direction.
  NoiseSchedule flat = ns;
  flat.omega_tag = NoiseSchedule::Omega::constant;
  Tensorf gc = sds_grad(x, provider, ctx, tau, flat, eps);
  for (int64_t i = 0; i < g.size(); ++i)
    CHECK(gc.v[size_t(i)] ==
          doctest::Approx(g.v[size_t(i)] / ns.omega(tau)).epsilon(1e-3));
}

TEST_CASE("sds_grad: provider contract enforcement") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(100);
  Tensorf x({2, 2, 3}, 0.5f);
  Tensorf eps({2, 2, 3}, 0.0f);
  GuidanceContext ctx;
  ShapeLiar liar;
  CHECK_THROWS_AS(sds_grad(x, liar, ctx, 10, ns, eps), ContractError);
  NanProvider nan_provider;
  CHECK_THROWS_AS(sds_grad(x, nan_provider, ctx, 10, ns, eps), NumericError);
}

TEST_CASE("sds_grad: plain descent converges to the oracle target") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(23);
  Tensorf mu = random_image(rng, {8, 8, 3}, 0.1, 0.9);
  GaussianOracleProvider provider(mu, &ns);
  GuidanceContext ctx;
  Tensorf x({8, 8, 3}, 0.5f);
  double lr = 1.0;
  for (int it = 0; it < 500; ++it) {
    int tau = sample_timestep(rng, ns, 0.02, 0.98);
    Tensorf eps = normal_image(rng, {8, 8, 3});
    Tensorf g = sds_grad(x, provider, ctx, tau, ns, eps);
    for (int64_t i = 0; i < x.size(); ++i) {
      double v = double(x.v[size_t(i)]) - lr * double(g.v[size_t(i)]);
      x.v[size_t(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  CHECK(max_abs_diff(x, mu) < 0.02);
}

TEST_CASE("sample_timestep: bounds and uniformity") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(1234);
  const int lo = 20, hi = 980, nvals = hi - lo + 1;  // [0.02, 0.98] * 1000
  const int nbins = 31;                              // 961 = 31 * 31
  std::vector<int> counts(nbins, 0);
  int seen_lo = 0, seen_hi = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    int tau = sample_timestep(rng, ns, 0.02, 0.98);
    REQUIRE(tau >= lo);
    REQUIRE(tau <= hi);
    if (tau == lo) ++seen_lo;
    if (tau == hi) ++seen_hi;
    ++counts[size_t((tau - lo) * nbins / nvals)];
  }
  CHECK(seen_lo > 0);
  CHECK(seen_hi > 0);
  double expected = double(draws) / nbins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 65.0);  // dof 30, 99.9% critical ~59.7
}

TEST_CASE("sample_timestep: degenerate and empty ranges") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) CHECK(sample_timestep(rng, ns, 0.5, 0.5) == 500);
  // lower bound clips up to 1
  for (int i = 0; i < 20; ++i) CHECK(sample_timestep(rng, ns, 0.0, 0.001) == 1);
  CHECK_THROWS_AS(sample_timestep(rng, ns, 0.98, 0.02), ContractError);
}

TEST_CASE("tau_range_at: linear annealing of the upper end") {
  TauRange r0 = tau_range_at(0.0);
  CHECK(r0.lo == doctest::Approx(0.02));
  CHECK(r0.hi == doctest::Approx(0.98));
  TauRange r1 = tau_range_at(1.0);
  CHECK(r1.lo == doctest::Approx(0.02));
  CHECK(r1.hi == doctest::Approx(0.5));
  TauRange rm = tau_range_at(0.5);
  CHECK(rm.hi == doctest::Approx(0.74));
}

TEST_CASE("oracle view provider: input view matches the dataset frame") {
  SyntheticScene scene = make_orbiter_scene();
  CameraPose cam;
  cam.azimuth_deg = 30.0;
  cam.elevation_deg = 15.0;
  const int W = 24, H = 24, n_samples = 64;
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Dataset ds = make_dataset(scene, cam, 4, W, H, n_samples);
  OracleViewProvider provider(scene, cam, W, H, &ns, n_samples);

  GuidanceContext ctx;
  ctx.time = ds.times[1];
  Tensorf mu = provider.view(ctx);
  // Dataset frames are 8-bit quantized; the provider's target is not.
  CHECK(max_abs_diff(mu, ds.frames[1]) <= 0.5 / 255.0 + 1e-6);

  // predict_noise at the input view is the gaussian answer for that target.
  Rng rng(29);
  Tensorf eps = normal_image(rng, {H, W, 3});
  Tensorf z = noise_image(ds.frames[1], 400, ns, eps);
  Tensorf eh = provider.predict_noise(z, 400, ctx);
  Tensorf expected = gaussian_eps_hat(z, 400, ns, mu);
  CHECK(max_abs_diff(eh, expected) < 1e-5);
}

TEST_CASE("oracle view provider: cache behavior and orbit limits") {
  SyntheticScene scene = make_orbiter_scene();
  CameraPose cam;
  cam.elevation_deg = 10.0;
  NoiseSchedule ns = NoiseSchedule::linear_beta(100);
  OracleViewProvider provider(scene, cam, 12, 12, &ns, 32, /*cache_cap=*/2);

  GuidanceContext a;
  a.d_azimuth_deg = 20.0;
  Tensorf va = provider.view(a);
  Tensorf va2 = provider.view(a);
  CHECK(provider.cache_size() == 1);
  CHECK(max_abs_diff(va, va2) == 0.0);

  GuidanceContext b = a;
  b.time = 0.5;
  provider.view(b);
  CHECK(provider.cache_size() == 2);

  GuidanceContext c = a;
  c.d_azimuth_deg = -40.0;
  provider.view(c);
  CHECK(provider.cache_size() == 2);  // FIFO eviction at the cap

  GuidanceContext bad;
  bad.d_elevation_deg = 80.0;
  CHECK_THROWS_AS(provider.view(bad), ContractError);
  bad = GuidanceContext{};
  bad.d_radius = 0.9;
  CHECK_THROWS_AS(provider.view(bad), ContractError);
  bad = GuidanceContext{};
  bad.time = 1.5;
  CHECK_THROWS_AS(provider.view(bad), ContractError);
}

TEST_CASE("score wire codec: round trip") {
  Rng rng(31);
  Tensorf z = normal_image(rng, {6, 5, 3});
  GuidanceContext ctx;
  ctx.d_azimuth_deg = 12.34567890123;
  ctx.d_elevation_deg = -7.25;
  ctx.d_radius = 0.125;
  ctx.time = 1.0 / 3.0;
  std::string req = score_request(z, 421, ctx);

  Tensorf z2;
  int tau = 0;
  GuidanceContext c2;
  parse_score_request(req, &z2, &tau, &c2);
  CHECK(tau == 421);
  CHECK(c2.d_azimuth_deg == ctx.d_azimuth_deg);  // %.17g round trips doubles
  CHECK(c2.d_elevation_deg == ctx.d_elevation_deg);
  CHECK(c2.d_radius == ctx.d_radius);
  CHECK(c2.time == ctx.time);
  CHECK(z2.shape == z.shape);
  CHECK(max_abs_diff(z, z2) < 2e-4);  // 16-bit over the value range

  Tensorf eh = normal_image(rng, {6, 5, 3});
  Tensorf eh2 = parse_score_reply(score_reply(eh));
  CHECK(max_abs_diff(eh, eh2) < 2e-4);

  CHECK_THROWS_AS(parse_score_request(req.substr(0, req.size() / 2), &z2, &tau, &c2), IoError);
  CHECK_THROWS_AS(parse_score_reply("bogus\n"), IoError);
}

TEST_CASE("external score provider: stub round trips") {
  NoiseSchedule ns = NoiseSchedule::linear_beta(1000);
  Rng rng(37);
  Tensorf x = random_image(rng, {8, 8, 3});
  Tensorf eps = normal_image(rng, {8, 8, 3});
  int tau = 400;
  Tensorf z = noise_image(x, tau, ns, eps);
  GuidanceContext ctx;
  ctx.d_azimuth_deg = 12.5;
  ctx.d_radius = 0.25;
  ctx.time = 0.75;

  SUBCASE("echo returns z within wire quantization") {
    ExternalScoreProvider p({stub("hex4d_score_stub"), "echo"}, &ns);
    Tensorf eh = p.predict_noise(z, tau, ctx);
    CHECK(max_abs_diff(eh, z) < 1e-3);
  }
  SUBCASE("gaussian stub matches the local formula") {
    ExternalScoreProvider p({stub("hex4d_score_stub"), "gauss", "0.25"}, &ns);
    Tensorf eh = p.predict_noise(z, tau, ctx);
    Tensorf mu({8, 8, 3}, 0.25f);
    Tensorf expected = gaussian_eps_hat(z, tau, ns, mu);
    CHECK(max_abs_diff(eh, expected) < 2e-3);
  }
  SUBCASE("conditioning crosses the pipe intact") {
    ExternalScoreProvider p({stub("hex4d_score_stub"), "pose"}, &ns);
    Tensorf eh = p.predict_noise(z, 333, ctx);
    float expect = static_cast<float>(12.5 / 100.0 + 0.25 + 10.0 * 0.75 + 333 / 10000.0);
    for (auto v : eh.v) CHECK(v == doctest::Approx(expect).epsilon(1e-5));
  }
  SUBCASE("failure modes surface as IoError") {
    ExternalScoreProvider fail({stub("hex4d_score_stub"), "fail"}, &ns);
    CHECK_THROWS_AS(fail.predict_noise(z, tau, ctx), IoError);
    ExternalScoreProvider garbage({stub("hex4d_score_stub"), "garbage"}, &ns);
    CHECK_THROWS_AS(garbage.predict_noise(z, tau, ctx), IoError);
  }
  SUBCASE("hang is killed at the deadline") {
    ExternalScoreProvider hang({stub("hex4d_score_stub"), "hang"}, &ns, /*timeout_ms=*/400);
    auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(hang.predict_noise(z, tau, ctx), IoError);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 5.0);
  }
}
