#include "hex4d/field.h"

#include <cmath>

namespace hex4d {

void FieldConfig::validate() const {
  H4D_CHECK(!scales.empty(), "field needs at least one scale");
  for (const auto& s : scales) s.validate();
  H4D_CHECK(head_hidden >= 1, "head width must be >= 1");
}

int FieldConfig::feature_dim() const {
  if (!concat_mode) return scales.front().features;
  int f = 0;
  for (const auto& s : scales) f += s.features;
  return f;
}

template <class S>
CascadeField<S>::CascadeField(FieldConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!cfg_.concat_mode) {
    for (const auto& s : cfg_.scales)
      H4D_CHECK(s.features == cfg_.scales.front().features,
                "cascade heads need a uniform feature dim across scales");
  }
}

template <class S>
std::string CascadeField<S>::scale_prefix(int scale_index) {
  return "scale" + std::to_string(scale_index);
}

template <class S>
std::string CascadeField<S>::head_param(const std::string& prefix, const std::string& head,
                                        const std::string& leaf) {
  return prefix + "/" + head + "_" + leaf;
}

template <class S>
void CascadeField<S>::init_head(ParamStore<S>& ps, Rng& rng, const std::string& prefix,
                                const std::string& head, int in_dim, int out_dim) const {
  int h = cfg_.head_hidden;
  auto dense = [&](const std::string& leaf, int rows, int cols) {
    Tensor<S> w({rows, cols});
    double a = std::sqrt(6.0 / rows);  // He-uniform for the ReLU stack
    for (auto& v : w.v) v = S(rng.uniform(-a, a));
    ps.add(head_param(prefix, head, leaf), std::move(w), LrGroup::mlp);
  };
  dense("w1", in_dim, h);
  ps.add(head_param(prefix, head, "b1"), Tensor<S>({h}), LrGroup::mlp);
  dense("w2", h, h);
  ps.add(head_param(prefix, head, "b2"), Tensor<S>({h}), LrGroup::mlp);
  dense("w3", h, out_dim);
  ps.add(head_param(prefix, head, "b3"), Tensor<S>({out_dim}), LrGroup::mlp);
}

template <class S>
void CascadeField<S>::init_params(ParamStore<S>& ps, Rng& rng) const {
  for (int k = 0; k < num_scales(); ++k)
    add_hexplane_params(ps, scale_prefix(k), cfg_.scales[size_t(k)], rng);
  if (cfg_.concat_mode) {
    init_head(ps, rng, "head", "sigma", cfg_.feature_dim(), 1);
    init_head(ps, rng, "head", "rgb", cfg_.feature_dim(), 3);
  } else {
    for (int k = 0; k < num_scales(); ++k) {
      init_head(ps, rng, scale_prefix(k), "sigma", cfg_.feature_dim(), 1);
      init_head(ps, rng, scale_prefix(k), "rgb", cfg_.feature_dim(), 3);
    }
  }
}

template <class S>
void CascadeField<S>::check_params(const ParamStore<S>& ps) const {
  auto need = [&](const std::string& name, std::vector<int> shape) {
    H4D_CHECK(ps.has(name), "missing parameter: ", name);
    const auto& v = ps.entry(name).value;
    H4D_CHECK(v.shape == shape, "parameter ", name, " has wrong shape");
  };
  for (int k = 0; k < num_scales(); ++k) {
    const auto& sc = cfg_.scales[size_t(k)];
    for (int p = 0; p < kNumPlanes; ++p) {
      auto [a0, a1] = kPlaneAxes[size_t(p)];
      need(plane_param_name(scale_prefix(k), static_cast<PlaneId>(p)),
           {sc.res_for_axis(a0), sc.res_for_axis(a1), sc.features});
    }
  }
  int f = cfg_.feature_dim(), h = cfg_.head_hidden;
  auto need_head = [&](const std::string& prefix, const std::string& head, int out) {
    need(head_param(prefix, head, "w1"), {f, h});
    need(head_param(prefix, head, "b1"), {h});
    need(head_param(prefix, head, "w2"), {h, h});
    need(head_param(prefix, head, "b2"), {h});
    need(head_param(prefix, head, "w3"), {h, out});
    need(head_param(prefix, head, "b3"), {out});
  };
  if (cfg_.concat_mode) {
    need_head("head", "sigma", 1);
    need_head("head", "rgb", 3);
  } else {
    for (int k = 0; k < num_scales(); ++k) {
      need_head(scale_prefix(k), "sigma", 1);
      need_head(scale_prefix(k), "rgb", 3);
    }
  }
}

template <class S>
int CascadeField<S>::resolve_scale(int scale) const {
  if (scale == 0) scale = num_scales();
  H4D_CHECK(scale >= 1 && scale <= num_scales(), "scale ", scale, " out of range 1..",
            num_scales());
  if (cfg_.concat_mode)
    H4D_CHECK(scale == num_scales(), "concat mode always evaluates all scales");
  return scale;
}

template <class S>
int CascadeField<S>::scale_features(Tape<S>& t, ParamStore<S>& ps, int scale_index,
                                    const Tensor<S>& points, int64_t* clamped) const {
  const auto& sc = cfg_.scales[size_t(scale_index)];
  std::vector<int> gathered;
  gathered.reserve(kNumPlanes);
  for (int p = 0; p < kNumPlanes; ++p) {
    PlaneId id = static_cast<PlaneId>(p);
    auto taps = make_taps(points, id, sc, clamped);
    int grid = t.param(ps, plane_param_name(scale_prefix(scale_index), id));
    gathered.push_back(t.gather_bilinear(grid, std::move(taps)));
  }
  return t.hadamard_list(gathered);
}

template <class S>
int CascadeField<S>::run_head(Tape<S>& t, ParamStore<S>& ps, const std::string& prefix,
                              const std::string& head, int features) const {
  auto p = [&](const std::string& leaf) { return t.param(ps, head_param(prefix, head, leaf)); };
  int h1 = t.relu(t.linear(features, p("w1"), p("b1")));
  int h2 = t.relu(t.linear(h1, p("w2"), p("b2")));
  return t.linear(h2, p("w3"), p("b3"));
}

template <class S>
FieldEval CascadeField<S>::eval(Tape<S>& t, ParamStore<S>& ps, const Tensor<S>& points, int scale,
                                int64_t* clamped) const {
  H4D_CHECK(points.ndim() == 2 && points.dim(1) == 4, "points must be (N,4)");
  scale = resolve_scale(scale);
  int raw_sigma = -1, raw_rgb = -1;
  if (cfg_.concat_mode) {
    std::vector<int> feats;
    for (int k = 0; k < num_scales(); ++k)
      feats.push_back(scale_features(t, ps, k, points, clamped));
    int cat = t.concat_cols(feats);
    raw_sigma = run_head(t, ps, "head", "sigma", cat);
    raw_rgb = run_head(t, ps, "head", "rgb", cat);
  } else {
    for (int k = 0; k < scale; ++k) {
      int f = scale_features(t, ps, k, points, clamped);
      int rs = run_head(t, ps, scale_prefix(k), "sigma", f);
      int rc = run_head(t, ps, scale_prefix(k), "rgb", f);
      raw_sigma = k == 0 ? rs : t.add(raw_sigma, rs);
      raw_rgb = k == 0 ? rc : t.add(raw_rgb, rc);
    }
  }
  FieldEval out;
  out.raw_sigma = raw_sigma;
  out.raw_rgb = raw_rgb;
  out.sigma = t.softplus(raw_sigma);
  out.rgb = t.sigmoid(raw_rgb);
  return out;
}

template <class S>
void CascadeField<S>::eval_values(ParamStore<S>& ps, const Tensor<S>& points, int scale,
                                  Tensor<S>* sigma, Tensor<S>* rgb, int64_t* clamped) const {
  Tape<S> t;
  FieldEval e = eval(t, ps, points, scale, clamped);
  if (sigma) *sigma = t.val(e.sigma);
  if (rgb) *rgb = t.val(e.rgb);
}

template class CascadeField<float>;
template class CascadeField<double>;

}  // namespace hex4d
