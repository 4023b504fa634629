#include <benchmark/benchmark.h>

#include <memory>

#include "hex4d/rng.h"
#include "hex4d/tape.h"

using hex4d::BilinearTaps;
using hex4d::CompositePlan;
using hex4d::ParamStore;
using hex4d::Rng;
using hex4d::Tape;
using hex4d::Tensor;

namespace {

Tensor<float> randn(Rng& rng, std::vector<int> shape, float scale = 1.0f) {
  Tensor<float> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * static_cast<float>(rng.normal());
  return t;
}

void BM_linear_fwd_bwd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  ParamStore<float> ps;
  ps.add("w1", randn(rng, {64, 64}, 0.1f), hex4d::LrGroup::mlp);
  ps.add("b1", randn(rng, {64}, 0.1f), hex4d::LrGroup::mlp);
  ps.add("w2", randn(rng, {64, 4}, 0.1f), hex4d::LrGroup::mlp);
  ps.add("b2", randn(rng, {4}, 0.1f), hex4d::LrGroup::mlp);
  Tensor<float> x = randn(rng, {n, 64});
  for (auto _ : state) {
    ps.zero_grads();
    Tape<float> t;
    int h = t.relu(t.linear(t.constant(x), t.param(ps, "w1"), t.param(ps, "b1")));
    int y = t.linear(h, t.param(ps, "w2"), t.param(ps, "b2"));
    int loss = t.mean(t.square(y));
    t.backward(loss);
    benchmark::DoNotOptimize(ps.grad("w1").data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_linear_fwd_bwd)->Arg(4096)->Arg(65536);

void BM_gather_bilinear(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(2);
  ParamStore<float> ps;
  const int U = 64, V = 64, F = 16;
  ps.add("grid", randn(rng, {U, V, F}), hex4d::LrGroup::grids);
  auto taps = std::make_shared<BilinearTaps<float>>();
  taps->npoints = n;
  for (int64_t i = 0; i < n; ++i) {
    const int u = static_cast<int>(rng.uniform_int(0, U - 2));
    const int v = static_cast<int>(rng.uniform_int(0, V - 2));
    const float fu = static_cast<float>(rng.uniform());
    const float fv = static_cast<float>(rng.uniform());
    const int base = u * V + v;
    taps->idx.insert(taps->idx.end(), {base, base + 1, base + V, base + V + 1});
    taps->w.insert(taps->w.end(),
                   {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv});
  }
  for (auto _ : state) {
    ps.zero_grads();
    Tape<float> t;
    int g = t.gather_bilinear(t.param(ps, "grid"), taps);
    t.backward(t.mean(t.square(g)));
    benchmark::DoNotOptimize(ps.grad("grid").data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_gather_bilinear)->Arg(65536);

void BM_composite(benchmark::State& state) {
  const int rays = static_cast<int>(state.range(0));
  const int spp = 64;
  Rng rng(3);
  ParamStore<float> ps;
  ps.add("sigma", randn(rng, {rays * spp, 1}), hex4d::LrGroup::grids);
  ps.add("rgb", randn(rng, {rays * spp, 3}), hex4d::LrGroup::grids);
  auto plan = std::make_shared<CompositePlan<float>>();
  plan->nrays = rays;
  plan->offsets.push_back(0);
  for (int r = 0; r < rays; ++r) {
    plan->offsets.push_back(plan->offsets.back() + spp);
    plan->delta.push_back(0.05f);
    for (int i = 0; i < spp; ++i) plan->tvals.push_back(1.5f + 0.05f * i);
  }
  for (auto _ : state) {
    ps.zero_grads();
    Tape<float> t;
    int sigma = t.softplus(t.param(ps, "sigma"));
    int rgb = t.sigmoid(t.param(ps, "rgb"));
    int out = t.composite(sigma, rgb, plan);
    t.backward(t.mean(t.square(out)));
    benchmark::DoNotOptimize(ps.grad("sigma").data());
  }
  state.SetItemsProcessed(state.iterations() * rays);
}
BENCHMARK(BM_composite)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
