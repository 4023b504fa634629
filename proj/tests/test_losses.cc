#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "hex4d/common.h"
#include "hex4d/losses.h"
#include "hex4d/rng.h"

using namespace hex4d;

namespace {

Tensord random_tensor(Rng& rng, std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
  Tensord t(std::move(shape));
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

// Row-normalized random directions.
Tensord random_unit_rows(Rng& rng, int n) {
  Tensord t({n, 3});
  for (int i = 0; i < n; ++i) {
    double d[3] = {rng.normal(), rng.normal(), rng.normal()};
    double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (int a = 0; a < 3; ++a) t.v[size_t(i * 3 + a)] = d[a] / norm;
  }
  return t;
}

}  // namespace

TEST_CASE("loss weights: orientation ramp") {
  LossWeights w;
  w.validate();
  CHECK(w.orientation_at(0) == doctest::Approx(1.0));
  CHECK(w.orientation_at(2500) == doctest::Approx(10.5));
  CHECK(w.orientation_at(5000) == doctest::Approx(20.0));
  CHECK(w.orientation_at(50000) == doctest::Approx(20.0));
  // continuous at the plateau
  CHECK(w.orientation_at(4999) == doctest::Approx(20.0).epsilon(1e-3));
  CHECK_THROWS_AS(w.orientation_at(-1), ContractError);

  LossWeights bad = w;
  bad.recon = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = w;
  bad.orient_hi = 0.5;  // below orient_lo
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = w;
  bad.orient_ramp_iters = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("total loss: weighted sum") {
  LossWeights w;
  LossComponents c;
  CHECK(total_loss(c, w, 0) == 0.0);

  c.recon = 0.01;
  CHECK(total_loss(c, w, 0) == doctest::Approx(5.0));  // 500 * 0.01

  c = LossComponents{};
  c.orientation = 1.0;
  CHECK(total_loss(c, w, 2500) == doctest::Approx(10.5));

  // linear in each component
  LossComponents c2;
  c2.sds = 0.25;
  c2.icl = 0.002;
  c2.mask = 0.1;
  c2.normal_smooth = 0.03;
  double expect = 0.1 * 0.25 + 2500.0 * 0.002 + 50.0 * 0.1 + 2.0 * 0.03;
  CHECK(total_loss(c2, w, 0) == doctest::Approx(expect));

  c2.mask = std::nan("");
  try {
    total_loss(c2, w, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("mask") != std::string::npos);
  }
}

TEST_CASE("recon loss: fixed points and values") {
  std::array<double, 3> bg = {1, 1, 1};
  Tensord ones({4, 4, 3}, 1.0);
  Tensord zeros({4, 4, 3}, 0.0);
  Tensord mask1({4, 4, 1}, 1.0);

  CHECK(recon_loss<double>(ones, ones, mask1, bg) == 0.0);
  CHECK(recon_loss<double>(zeros, ones, mask1, bg) == doctest::Approx(1.0));

  // checkerboard: half the pixels off by 1
  Tensord check_frame({4, 4, 3}, 0.0);
  for (int p = 0; p < 16; ++p)
    if ((p / 4 + p % 4) % 2 == 0)
      for (int c = 0; c < 3; ++c) check_frame.v[size_t(p * 3 + c)] = 1.0;
  CHECK(recon_loss<double>(zeros, check_frame, mask1, bg) == doctest::Approx(0.5));

  // outside the mask only the background matters
  Rng rng(3);
  Tensord garbage = random_tensor(rng, {4, 4, 3});
  Tensord mask0({4, 4, 1}, 0.0);
  CHECK(recon_loss<double>(ones, garbage, mask0, bg) == 0.0);  // render == white bg

  // partial mask: render the frame inside, bg outside -> exact zero
  Tensord mask_half({4, 4, 1}, 0.0);
  for (int p = 0; p < 8; ++p) mask_half.v[size_t(p)] = 1.0;
  Tensord frame = random_tensor(rng, {4, 4, 3});
  Tensord render = frame;
  for (int p = 8; p < 16; ++p)
    for (int c = 0; c < 3; ++c) render.v[size_t(p * 3 + c)] = bg[size_t(c)];
  CHECK(recon_loss<double>(render, frame, mask_half, bg) == doctest::Approx(0.0));

  // L1 variant on a known offset
  Tensord off({4, 4, 3}, 0.25);
  CHECK(recon_loss<double>(off, zeros, mask1, bg, /*l1=*/true) == doctest::Approx(0.25));

  CHECK_THROWS_AS(recon_loss<double>(ones, Tensord({4, 3, 3}), mask1, bg), ContractError);
  CHECK_THROWS_AS(recon_loss<double>(ones, ones, Tensord({3, 3, 1}), bg), ContractError);
}

TEST_CASE("recon/mask loss: finite-difference gradients") {
  Rng rng(5);
  std::array<double, 3> bg = {0.2, 0.4, 0.9};
  Tensord render = random_tensor(rng, {3, 4, 3});
  Tensord frame = random_tensor(rng, {3, 4, 3});
  Tensord mask = random_tensor(rng, {3, 4, 1});

  for (bool l1 : {false, true}) {
    Tensord grad;
    recon_loss<double>(render, frame, mask, bg, l1, &grad);
    const double h = 1e-6;
    for (int64_t i = 0; i < render.size(); i += 7) {
      Tensord plus = render, minus = render;
      plus.v[size_t(i)] += h;
      minus.v[size_t(i)] -= h;
      double fd = (recon_loss<double>(plus, frame, mask, bg, l1) -
                   recon_loss<double>(minus, frame, mask, bg, l1)) /
                  (2 * h);
      CHECK(grad.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    }
  }

  Tensord opacity = random_tensor(rng, {5, 5});
  Tensord gt = random_tensor(rng, {5, 5});
  for (bool l1 : {false, true}) {
    Tensord grad;
    mask_loss<double>(opacity, gt, l1, &grad);
    const double h = 1e-6;
    for (int64_t i = 0; i < opacity.size(); i += 3) {
      Tensord plus = opacity, minus = opacity;
      plus.v[size_t(i)] += h;
      minus.v[size_t(i)] -= h;
      double fd = (mask_loss<double>(plus, gt, l1) - mask_loss<double>(minus, gt, l1)) / (2 * h);
      CHECK(grad.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("mask loss: values") {
  Tensord o({3, 3}, 0.0);
  Tensord m({3, 3}, 1.0);
  CHECK(mask_loss<double>(m, m) == 0.0);
  CHECK(mask_loss<double>(o, m) == doctest::Approx(1.0));
  Tensord half({3, 3}, 0.5);
  CHECK(mask_loss<double>(half, m) == doctest::Approx(0.25));
  CHECK_THROWS_AS(mask_loss<double>(o, Tensord({2, 2})), ContractError);
}

TEST_CASE("orientation loss: hinge behavior") {
  // one sample, normal facing the camera (n.d < 0) -> inactive
  Tensord w({1}, 1.0);
  std::vector<uint8_t> valid = {1};
  Tensord d({1, 3});
  d.v = {0, 0, 1};
  Tensord n_facing({1, 3});
  n_facing.v = {0, 0, -1};
  Tensord grad;
  CHECK(orientation_loss<double>(w, n_facing, valid, d, &grad) == 0.0);
  CHECK(grad.v[0] == 0.0);
  CHECK(grad.v[2] == 0.0);

  // n.d = 0.5 with w = 1 -> 0.25
  Tensord n_half({1, 3});
  n_half.v = {std::sqrt(3.0) / 2.0, 0.0, 0.5};
  CHECK(orientation_loss<double>(w, n_half, valid, d) == doctest::Approx(0.25));

  // zero weight kills the term
  Tensord w0({1}, 0.0);
  CHECK(orientation_loss<double>(w0, n_half, valid, d) == 0.0);

  // invalid row is excluded together with its weight
  std::vector<uint8_t> invalid = {0};
  CHECK(orientation_loss<double>(w, n_half, invalid, d) == 0.0);

  // weights outside [0,1] and non-unit directions are contract violations
  Tensord w2({1}, 1.5);
  CHECK_THROWS_AS(orientation_loss<double>(w2, n_half, valid, d), ContractError);
  Tensord d_long({1, 3});
  d_long.v = {0, 0, 2};
  CHECK_THROWS_AS(orientation_loss<double>(w, n_half, valid, d_long), ContractError);
}

TEST_CASE("orientation loss: finite-difference gradient") {
  Rng rng(7);
  const int N = 24;
  Tensord w = random_tensor(rng, {N});
  Tensord n = random_unit_rows(rng, N);      // not re-normalized inside the loss
  Tensord d = random_unit_rows(rng, N);
  std::vector<uint8_t> valid(size_t(N), 1);
  valid[3] = 0;
  valid[11] = 0;

  Tensord grad;
  orientation_loss<double>(w, n, valid, d, &grad);
  const double h = 1e-6;
  int active = 0;
  for (int64_t i = 0; i < n.size(); ++i) {
    // skip entries whose row sits near the hinge
    int row = int(i / 3);
    double dot = 0;
    for (int a = 0; a < 3; ++a) dot += n.v[size_t(row * 3 + a)] * d.v[size_t(row * 3 + a)];
    if (std::abs(dot) < 1e-3) continue;
    Tensord plus = n, minus = n;
    plus.v[size_t(i)] += h;
    minus.v[size_t(i)] -= h;
    double fd = (orientation_loss<double>(w, plus, valid, d) -
                 orientation_loss<double>(w, minus, valid, d)) /
                (2 * h);
    CHECK(grad.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    if (dot > 0) ++active;
  }
  CHECK(active > 10);  // the check exercised live hinge rows
}

TEST_CASE("normal pair loss: values and gradients") {
  Tensord na({2, 3}), nb({2, 3});
  na.v = {1, 0, 0, 0, 0, 1};
  nb.v = {0, 1, 0, 0, 0, 1};
  std::vector<uint8_t> va = {1, 1}, vb = {1, 1};
  // first pair differs by sqrt(2), second matches: mean = (2 + 0) / 2
  CHECK(normal_pair_loss<double>(na, nb, va, vb) == doctest::Approx(1.0));

  // invalid members drop the pair from the mean
  std::vector<uint8_t> vb2 = {1, 0};
  CHECK(normal_pair_loss<double>(na, nb, va, vb2) == doctest::Approx(2.0));
  std::vector<uint8_t> none = {0, 0};
  CHECK(normal_pair_loss<double>(na, nb, none, vb) == 0.0);

  Rng rng(9);
  Tensord ra = random_unit_rows(rng, 8);
  Tensord rb = random_unit_rows(rng, 8);
  std::vector<uint8_t> v8(8, 1);
  v8[2] = 0;
  Tensord ga, gb;
  normal_pair_loss<double>(ra, rb, v8, v8, &ga, &gb);
  const double h = 1e-6;
  for (int64_t i = 0; i < ra.size(); i += 2) {
    Tensord plus = ra, minus = ra;
    plus.v[size_t(i)] += h;
    minus.v[size_t(i)] -= h;
    double fd =
        (normal_pair_loss<double>(plus, rb, v8, v8) - normal_pair_loss<double>(minus, rb, v8, v8)) /
        (2 * h);
    CHECK(ga.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    Tensord bplus = rb, bminus = rb;
    bplus.v[size_t(i)] += h;
    bminus.v[size_t(i)] -= h;
    fd = (normal_pair_loss<double>(ra, bplus, v8, v8) -
          normal_pair_loss<double>(ra, bminus, v8, v8)) /
         (2 * h);
    CHECK(gb.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("normal probes: layout and analytic normals") {
  Tensord pts({2, 4});
  pts.v = {0.1, 0.2, 0.3, 0.5, -0.4, 0.0, 0.2, 0.7};
  double h = 0.01;
  Tensord probes = normal_probe_points(pts, h);
  REQUIRE(probes.shape == std::vector<int>({12, 4}));
  // row [i*6 + axis*2 + 0] is +h, [.. + 1] is -h, time untouched
  CHECK(probes.at(0, 0) == doctest::Approx(0.1 + h));
  CHECK(probes.at(1, 0) == doctest::Approx(0.1 - h));
  CHECK(probes.at(2, 1) == doctest::Approx(0.2 + h));
  CHECK(probes.at(5, 2) == doctest::Approx(0.3 - h));
  CHECK(probes.at(0, 3) == doctest::Approx(0.5));
  CHECK(probes.at(11, 3) == doctest::Approx(0.7));

  // density 4x: gradient (4,0,0) -> normal (-1,0,0)
  Tensord sigma({12});
  for (int i = 0; i < 12; ++i) sigma.v[size_t(i)] = 4.0 * probes.at(i, 0);
  Tensord normals, grads;
  std::vector<uint8_t> valid;
  normals_from_probe_sigma(sigma, h, &normals, &valid, &grads);
  REQUIRE(valid.size() == 2);
  CHECK(valid[0] == 1);
  CHECK(normals.at(0, 0) == doctest::Approx(-1.0));
  CHECK(normals.at(0, 1) == doctest::Approx(0.0));
  CHECK(grads.at(0, 0) == doctest::Approx(4.0));

  // constant density -> below the floor, invalid and zeroed
  Tensord flat({6}, 2.5);
  normals_from_probe_sigma(flat, h, &normals, &valid, &grads);
  CHECK(valid[0] == 0);
  CHECK(normals.at(0, 0) == 0.0);
}

TEST_CASE("normal probe backward: finite-difference check") {
  Rng rng(13);
  const int N = 6;
  const double h = 0.02;
  // random probe densities with healthy gradients
  Tensord sigma({N * 6});
  for (auto& v : sigma.v) v = rng.uniform(0.0, 3.0);

  Tensord normals, grads;
  std::vector<uint8_t> valid;
  normals_from_probe_sigma(sigma, h, &normals, &valid, &grads);
  int nvalid = 0;
  for (auto f : valid) nvalid += f;
  REQUIRE(nvalid == N);  // random draws essentially never tie to 1e-8

  // J = <c, n(sigma)> for a random constant c
  Tensord c({N, 3});
  for (auto& v : c.v) v = rng.uniform(-1.0, 1.0);
  auto J = [&](const Tensord& s) {
    Tensord n2, g2;
    std::vector<uint8_t> v2;
    normals_from_probe_sigma(s, h, &n2, &v2, &g2);
    double acc = 0;
    for (int64_t i = 0; i < n2.size(); ++i) acc += c.v[size_t(i)] * n2.v[size_t(i)];
    return acc;
  };

  Tensord grad_sigma;
  normal_probe_backward(grads, valid, c, h, &grad_sigma);
  const double dh = 1e-6;
  for (int64_t i = 0; i < sigma.size(); ++i) {
    Tensord plus = sigma, minus = sigma;
    plus.v[size_t(i)] += dh;
    minus.v[size_t(i)] -= dh;
    double fd = (J(plus) - J(minus)) / (2 * dh);
    CHECK(grad_sigma.v[size_t(i)] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("normal smooth loss: planar ramp is exactly smooth") {
  FieldFn<double> ramp = [](const Tensord& pts, Tensord* sigma, Tensord* rgb) {
    *sigma = Tensord({int(pts.rows())});
    for (int64_t i = 0; i < pts.rows(); ++i) sigma->v[size_t(i)] = 5.0 + 2.0 * pts.at(int(i), 0);
    if (rgb) *rgb = Tensord({int(pts.rows()), 3}, 0.5);
  };
  Rng rng(15);
  Tensord pts({16, 3});
  for (auto& v : pts.v) v = rng.uniform(-0.5, 0.5);
  CHECK(normal_smooth_loss<double>(ramp, pts, 0.3, 0.02, rng) == doctest::Approx(0.0));
}

TEST_CASE("normal smooth loss: h^2 scaling on a smooth blob") {
  FieldFn<double> blob = [](const Tensord& pts, Tensord* sigma, Tensord* rgb) {
    *sigma = Tensord({int(pts.rows())});
    for (int64_t i = 0; i < pts.rows(); ++i) {
      double x = pts.at(int(i), 0), y = pts.at(int(i), 1), z = pts.at(int(i), 2);
      sigma->v[size_t(i)] = 10.0 * std::exp(-(x * x + y * y + z * z) / (2 * 0.3 * 0.3));
    }
    if (rgb) *rgb = Tensord({int(pts.rows()), 3}, 0.5);
  };
  // points on a shell away from the symmetric center
  Tensord pts({12, 3});
  {
    Rng prng(21);
    for (int i = 0; i < 12; ++i) {
      double d[3] = {prng.normal(), prng.normal(), prng.normal()};
      double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      for (int a = 0; a < 3; ++a) pts.v[size_t(i * 3 + a)] = 0.35 * d[a] / norm;
    }
  }
  double loss[3];
  double hs[3] = {0.02, 0.01, 0.005};
  for (int k = 0; k < 3; ++k) {
    Rng rng(77);  // same offsets for every h
    loss[k] = normal_smooth_loss<double>(blob, pts, 0.0, hs[k], rng);
  }
  CHECK(loss[0] > 0.0);
  CHECK(loss[0] / loss[1] == doctest::Approx(4.0).epsilon(0.3));
  CHECK(loss[1] / loss[2] == doctest::Approx(4.0).epsilon(0.3));
}

TEST_CASE("normal smooth loss: invariant to positive density scaling") {
  auto make_blob = [](double scale) {
    return FieldFn<double>([scale](const Tensord& pts, Tensord* sigma, Tensord* rgb) {
      *sigma = Tensord({int(pts.rows())});
      for (int64_t i = 0; i < pts.rows(); ++i) {
        double x = pts.at(int(i), 0), y = pts.at(int(i), 1) - 0.1, z = pts.at(int(i), 2);
        sigma->v[size_t(i)] = scale * (3.0 + x * x + 2 * y * y + 0.5 * z * z + x * y);
      }
      if (rgb) *rgb = Tensord({int(pts.rows()), 3}, 0.5);
    });
  };
  Rng prng(33);
  Tensord pts({10, 3});
  for (auto& v : pts.v) v = prng.uniform(-0.4, 0.4);
  Rng r1(55), r2(55);
  double a = normal_smooth_loss<double>(make_blob(1.0), pts, 0.5, 0.01, r1);
  double b = normal_smooth_loss<double>(make_blob(5.0), pts, 0.5, 0.01, r2);
  CHECK(a > 0.0);
  CHECK(a == doctest::Approx(b).epsilon(1e-10));

  Rng r3(55);
  CHECK(normal_smooth_loss<double>(make_blob(1.0), Tensord({0, 3}), 0.5, 0.01, r3) == 0.0);
}
