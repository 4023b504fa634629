#pragma once

#include <string>
#include <vector>

#include "hex4d/hexplane.h"
#include "hex4d/param_store.h"
#include "hex4d/rng.h"
#include "hex4d/tape.h"
#include "hex4d/tensor.h"

namespace hex4d {

// Multi-scale 4D field: per-scale hex-plane grids feeding small MLP heads.
//
// cascade mode (default): each scale has its own sigma/rgb heads producing a
// raw residual; evaluating at scale s sums raw heads 1..s and applies the
// activations (softplus density, sigmoid color) once, after the summation.
// concat mode: the per-scale features are concatenated coarse-to-fine and a
// single shared head pair maps them directly; evaluation always uses all
// scales.
struct FieldConfig {
  std::vector<HexPlaneConfig> scales;  // coarse -> fine, at least one
  int head_hidden = 64;                // two hidden layers of this width
  bool concat_mode = false;

  void validate() const;
  int feature_dim() const;  // head input width (F or sum of F in concat mode)
};

struct FieldEval {
  int sigma = -1;      // (N,1) softplus-activated density
  int rgb = -1;        // (N,3) sigmoid-activated color
  int raw_sigma = -1;  // pre-activation sums
  int raw_rgb = -1;
};

template <class S>
class CascadeField {
 public:
  explicit CascadeField(FieldConfig cfg);

  const FieldConfig& config() const { return cfg_; }
  int num_scales() const { return static_cast<int>(cfg_.scales.size()); }

  // Registers plane grids and head weights (deterministic given rng state).
  void init_params(ParamStore<S>& ps, Rng& rng) const;
  // Validates that a store (e.g. from a checkpoint) carries compatible params.
  void check_params(const ParamStore<S>& ps) const;

  // Records the field evaluation of points (N,4) at `scale` (1-based; 0 means
  // finest) on the tape. *clamped counts out-of-domain plane lookups.
  FieldEval eval(Tape<S>& t, ParamStore<S>& ps, const Tensor<S>& points, int scale,
                 int64_t* clamped = nullptr) const;

  // Plain forward pass (same op sequence on a scratch tape).
  void eval_values(ParamStore<S>& ps, const Tensor<S>& points, int scale, Tensor<S>* sigma,
                   Tensor<S>* rgb, int64_t* clamped = nullptr) const;

  static std::string scale_prefix(int scale_index);  // "scale0", "scale1", ...
  // Head weight names, e.g. head_param("scale0", "sigma", "w1").
  static std::string head_param(const std::string& prefix, const std::string& head,
                                const std::string& leaf);

 private:
  int resolve_scale(int scale) const;
  // Fused (N,F) feature node for one scale.
  int scale_features(Tape<S>& t, ParamStore<S>& ps, int scale_index, const Tensor<S>& points,
                     int64_t* clamped) const;
  // Two-hidden-layer ReLU head; returns the raw output node (N,out_dim).
  int run_head(Tape<S>& t, ParamStore<S>& ps, const std::string& prefix, const std::string& head,
               int features) const;
  void init_head(ParamStore<S>& ps, Rng& rng, const std::string& prefix, const std::string& head,
                 int in_dim, int out_dim) const;

  FieldConfig cfg_;
};

extern template class CascadeField<float>;
extern template class CascadeField<double>;

}  // namespace hex4d
