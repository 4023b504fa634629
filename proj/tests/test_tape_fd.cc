#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "hex4d/fdcheck.h"
#include "hex4d/rng.h"
#include "hex4d/tape.h"

using hex4d::BilinearTaps;
using hex4d::CompositePlan;
using hex4d::FdOptions;
using hex4d::FdReport;
using hex4d::ParamStore;
using hex4d::Rng;
using hex4d::Tape;
using hex4d::Tensor;

namespace {

Tensor<double> randn(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Builds the graph fresh on every evaluation (values are re-read from the
// store), runs the central-difference checker, and returns the report.
FdReport fd_case(ParamStore<double>& ps,
                 const std::function<int(Tape<double>&, ParamStore<double>&)>& build,
                 double h = 1e-5) {
  FdOptions opt;
  opt.h = h;
  auto loss = [&]() {
    Tape<double> t;
    return t.val(build(t, ps))[0];
  };
  auto back = [&]() {
    Tape<double> t;
    t.backward(build(t, ps));
  };
  return finite_diff_check(ps, loss, back, opt);
}

// Tolerance leaves room for h^2 truncation and cancellation noise on entries
// whose true gradient is near zero (the checker floors those denominators).
void expect_pass(const FdReport& rep, double tol = 1e-4) {
  INFO("worst: " << rep.worst_param << "[" << rep.worst_index << "] analytic "
                 << rep.worst_analytic << " numeric " << rep.worst_numeric);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err < tol);
}

}  // namespace

TEST_CASE("fd: linear layer") {
  Rng rng(1);
  ParamStore<double> ps;
  ps.add("x", randn(rng, {5, 4}), hex4d::LrGroup::mlp);
  ps.add("w", randn(rng, {4, 3}, 0.5), hex4d::LrGroup::mlp);
  ps.add("b", randn(rng, {3}, 0.1), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    return t.mse_const(t.linear(t.param(p, "x"), t.param(p, "w"), t.param(p, "b")),
                       Tensor<double>::full({5, 3}, 0.2));
  }));
}

TEST_CASE("fd: matmul and matmul_transb") {
  Rng rng(2);
  ParamStore<double> ps;
  ps.add("a", randn(rng, {3, 4}), hex4d::LrGroup::mlp);
  ps.add("b", randn(rng, {4, 2}), hex4d::LrGroup::mlp);
  ps.add("c", randn(rng, {5, 2}), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int ab = t.matmul(t.param(p, "a"), t.param(p, "b"));     // (3,2)
    int y = t.matmul_transb(ab, t.param(p, "c"));            // (3,5)
    return t.mean(t.square(y));
  }));
}

TEST_CASE("fd: smooth elementwise chain") {
  Rng rng(3);
  ParamStore<double> ps;
  ps.add("x", randn(rng, {4, 4}), hex4d::LrGroup::mlp);
  ps.add("y", randn(rng, {4, 4}), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int x = t.param(p, "x");
    int y = t.param(p, "y");
    int a = t.sigmoid(x);
    int b = t.softplus(y);
    int c = t.mul(a, b);
    int d = t.tanh_(t.add_scaled(c, x, 0.5, 0.25));
    int e = t.add_const_scalar(t.scale(d, 1.7), 0.1);
    return t.mean(t.square(e));
  }));
}

TEST_CASE("fd: relu and leaky_relu away from the kink") {
  Rng rng(4);
  ParamStore<double> ps;
  Tensor<double> x = randn(rng, {40});
  for (int64_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = 0.3;  // keep probes off the kink
  ps.add("x", std::move(x), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int x = t.param(p, "x");
    return t.mean(t.add(t.relu(x), t.leaky_relu(x, 0.2)));
  }));
}

TEST_CASE("fd: checker excludes probes sitting on a kink") {
  ParamStore<double> ps;
  Tensor<double> x({3});
  x[0] = 0.0;  // exactly at the relu kink
  x[1] = 1.0;
  x[2] = -1.0;
  ps.add("x", std::move(x), hex4d::LrGroup::mlp);
  FdReport rep = fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    return t.sum(t.relu(t.param(p, "x")));
  });
  CHECK(rep.excluded == 1);
  CHECK(rep.checked == 2);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("fd: checker refuses a nondeterministic objective") {
  ParamStore<double> ps;
  ps.add("x", Tensor<double>::full({1}, 1.0), hex4d::LrGroup::mlp);
  int counter = 0;
  auto loss = [&]() { return static_cast<double>(++counter); };
  auto back = [&]() {};
  CHECK_THROWS_AS((void)finite_diff_check(ps, loss, back, FdOptions{}), hex4d::ContractError);
}

TEST_CASE("fd: shape ops (concat/slice/reshape/transpose)") {
  Rng rng(5);
  ParamStore<double> ps;
  ps.add("a", randn(rng, {3, 2}), hex4d::LrGroup::mlp);
  ps.add("b", randn(rng, {3, 4}), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int a = t.param(p, "a");
    int b = t.param(p, "b");
    int cc = t.concat_cols({a, b});              // (3,6)
    int rr = t.concat_rows({cc, cc});            // (6,6)
    int s = t.slice_rows(t.slice_cols(rr, 1, 5), 2, 6);  // (4,4)
    int tr = t.transpose2d(s);
    int rs = t.reshape(tr, {2, 8});
    return t.mean(t.square(rs));
  }));
}

TEST_CASE("fd: hadamard fusion of several tensors") {
  Rng rng(6);
  ParamStore<double> ps;
  ps.add("a", randn(rng, {4, 3}), hex4d::LrGroup::grids);
  ps.add("b", randn(rng, {4, 3}), hex4d::LrGroup::grids);
  ps.add("c", randn(rng, {4, 3}), hex4d::LrGroup::grids);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int y = t.hadamard_list({t.param(p, "a"), t.param(p, "b"), t.param(p, "c")});
    return t.mean(t.square(y));
  }));
}

TEST_CASE("fd: bilinear gather from a feature grid") {
  Rng rng(7);
  ParamStore<double> ps;
  ps.add("grid", randn(rng, {3, 4, 2}), hex4d::LrGroup::grids);
  auto taps = std::make_shared<BilinearTaps<double>>();
  taps->npoints = 6;
  Rng trng(8);
  for (int i = 0; i < 6; ++i) {
    // Build a genuine bilinear footprint around a random cell.
    const int u = static_cast<int>(trng.uniform_int(0, 1));
    const int v = static_cast<int>(trng.uniform_int(0, 2));
    const double fu = trng.uniform(), fv = trng.uniform();
    const int base = u * 4 + v;
    taps->idx.insert(taps->idx.end(),
                     {base, base + 1, base + 4, base + 5});
    taps->w.insert(taps->w.end(), {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv});
  }
  expect_pass(fd_case(ps, [taps](Tape<double>& t, ParamStore<double>& p) {
    int g = t.gather_bilinear(t.param(p, "grid"), taps);
    return t.mean(t.square(g));
  }));
}

TEST_CASE("fd: row ops (rowsum/normalize/softmax)") {
  Rng rng(9);
  ParamStore<double> ps;
  Tensor<double> x = randn(rng, {5, 3});
  for (int r = 0; r < 5; ++r) x.at(r, 0) += 2.0;  // keep row norms well away from zero
  ps.add("x", std::move(x), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int x = t.param(p, "x");
    int n = t.normalize_rows(x, 1e-9);
    int sm = t.softmax_rows(x);
    int rs = t.rowsum(t.mul(n, sm));
    return t.mean(t.square(rs));
  }));
}

TEST_CASE("fd: scalar reductions (dot/mse/l1/l2norm/bce)") {
  Rng rng(10);
  ParamStore<double> ps;
  Tensor<double> x = randn(rng, {12});
  Tensor<double> target = randn(rng, {12});
  for (int64_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i] - target[i]) < 0.05) x[i] += 0.3;  // avoid |.| kinks
  ps.add("x", std::move(x), hex4d::LrGroup::mlp);
  Tensor<double> w = randn(rng, {12});
  expect_pass(fd_case(ps, [w, target](Tape<double>& t, ParamStore<double>& p) {
    int x = t.param(p, "x");
    int parts = t.concat_cols({t.dot_const(x, w), t.mse_const(x, target),
                               t.l1_const(x, target), t.l2norm(x, 1e-12),
                               t.bce_with_logits(x, 1.0)});
    return t.sum(t.square(parts));
  }));
}

TEST_CASE("fd: conv2d") {
  Rng rng(11);
  ParamStore<double> ps;
  ps.add("x", randn(rng, {2, 6, 6}), hex4d::LrGroup::mlp);
  ps.add("w", randn(rng, {3, 2, 4, 4}, 0.3), hex4d::LrGroup::mlp);
  ps.add("b", randn(rng, {3}, 0.1), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int y = t.conv2d(t.param(p, "x"), t.param(p, "w"), t.param(p, "b"), 2, 1);
    return t.mean(t.square(y));
  }));
}

TEST_CASE("fd: conv2d_transpose inverts the geometry") {
  Rng rng(12);
  ParamStore<double> ps;
  ps.add("x", randn(rng, {3, 3, 3}), hex4d::LrGroup::mlp);
  ps.add("w", randn(rng, {3, 2, 4, 4}, 0.3), hex4d::LrGroup::mlp);
  ps.add("b", randn(rng, {2}, 0.1), hex4d::LrGroup::mlp);
  Tape<double> probe;
  int y0 = probe.conv2d_transpose(probe.leaf(randn(rng, {3, 3, 3})),
                                  probe.leaf(randn(rng, {3, 2, 4, 4})),
                                  probe.leaf(randn(rng, {2})), 2, 1);
  CHECK(probe.val(y0).dim(1) == 6);  // (3-1)*2 - 2 + 4
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int y = t.conv2d_transpose(t.param(p, "x"), t.param(p, "w"), t.param(p, "b"), 2, 1);
    return t.mean(t.square(y));
  }));
}

TEST_CASE("fd: instance_norm") {
  Rng rng(13);
  ParamStore<double> ps;
  ps.add("x", randn(rng, {2, 4, 4}), hex4d::LrGroup::mlp);
  ps.add("g", randn(rng, {2}, 0.5), hex4d::LrGroup::mlp);
  ps.add("be", randn(rng, {2}, 0.5), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int y = t.instance_norm(t.param(p, "x"), t.param(p, "g"), t.param(p, "be"));
    return t.mean(t.square(y));
  }, 1e-5));
}

TEST_CASE("fd: volume compositing end to end") {
  Rng rng(14);
  ParamStore<double> ps;
  ps.add("sigma_raw", randn(rng, {8, 1}), hex4d::LrGroup::grids);
  ps.add("rgb_raw", randn(rng, {8, 3}), hex4d::LrGroup::grids);

  auto plan = std::make_shared<CompositePlan<double>>();
  plan->nrays = 2;
  plan->offsets = {0, 4, 8};
  plan->delta = {0.3, 0.25};
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < 4; ++i)
      plan->tvals.push_back(1.5 + 0.3 * i + 0.1 * r);
  plan->bg = {1.0, 1.0, 1.0};

  Tensor<double> target({2, 5}, 0.4);
  expect_pass(fd_case(ps, [plan, target](Tape<double>& t, ParamStore<double>& p) {
    int sigma = t.softplus(t.param(p, "sigma_raw"));
    int rgb = t.sigmoid(t.param(p, "rgb_raw"));
    int out = t.composite(sigma, rgb, plan);
    return t.mse_const(out, target);
  }));
}

TEST_CASE("fd: attention block (matmul_transb + softmax + matmul)") {
  Rng rng(15);
  ParamStore<double> ps;
  ps.add("q", randn(rng, {6, 4}), hex4d::LrGroup::mlp);
  ps.add("k", randn(rng, {9, 4}), hex4d::LrGroup::mlp);
  ps.add("v", randn(rng, {9, 4}), hex4d::LrGroup::mlp);
  expect_pass(fd_case(ps, [](Tape<double>& t, ParamStore<double>& p) {
    int q = t.param(p, "q");
    int k = t.param(p, "k");
    int v = t.param(p, "v");
    int att = t.softmax_rows(t.scale(t.matmul_transb(q, k), 0.5));
    int y = t.matmul(att, v);
    return t.mean(t.square(y));
  }));
}
