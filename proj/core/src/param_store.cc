#include "hex4d/param_store.h"

#include <cmath>

#include "hex4d/parallel.h"

namespace hex4d {

template <class S>
void adam_step(ParamStore<S>& ps, AdamState<S>& state) {
  H4D_CHECK(static_cast<int>(state.m.size()) == ps.size(),
            "adam state tracks ", state.m.size(), " tensors but store has ", ps.size());
  state.step += 1;
  const double b1 = state.hp.beta1;
  const double b2 = state.hp.beta2;
  const double eps = state.hp.eps;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (int i = 0; i < ps.size(); ++i) {
    auto& e = ps.entry(i);
    H4D_CHECK(state.m[static_cast<size_t>(i)].same_shape(e.value),
              "adam moment shape mismatch for ", e.name);
    H4D_CHECK(e.grad.same_shape(e.value), "grad shape mismatch for ", e.name);
    const double lr = state.hp.lr_for(e.group);
    S* w = e.value.data();
    const S* g = e.grad.data();
    S* m = state.m[static_cast<size_t>(i)].data();
    S* v = state.v[static_cast<size_t>(i)].data();
    const int64_t n = e.value.size();
    parallel_for(n, [&](int64_t b, int64_t en, int) {
      for (int64_t k = b; k < en; ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
        const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
        m[k] = static_cast<S>(mk);
        v[k] = static_cast<S>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        w[k] = static_cast<S>(static_cast<double>(w[k]) - lr * mhat / (std::sqrt(vhat) + eps));
      }
    });
  }
}

template void adam_step(ParamStore<float>&, AdamState<float>&);
template void adam_step(ParamStore<double>&, AdamState<double>&);

}  // namespace hex4d
