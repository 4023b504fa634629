#pragma once

#include <string>
#include <vector>

#include "hex4d/camera.h"
#include "hex4d/rng.h"
#include "hex4d/tensor.h"

namespace hex4d {

// A run of J >= 3 rendered frames that are continuous along one axis: either
// consecutive azimuths at a fixed time (spatial) or consecutive timestamps at
// a fixed camera (temporal).
struct FrameBatch {
  enum class Axis { spatial, temporal };
  Axis axis = Axis::temporal;
  std::vector<Tensorf> frames;     // {H,W,C}, shared shape
  std::vector<CameraPose> cameras;
  std::vector<double> times;

  int J() const { return static_cast<int>(frames.size()); }
  void validate() const;  // J >= 3, shapes match, ordering monotone along axis
};

// Frame interpolation contract: psi(x1, xJ, gamma) -> x_hat, gamma in (0,1),
// deterministic. differentiable() says whether endpoint gradients exist; an
// external net behind a pipe does not expose them.
class Interpolator {
 public:
  virtual ~Interpolator() = default;
  virtual Tensorf interpolate(const Tensorf& a, const Tensorf& b, double gamma) = 0;
  virtual bool differentiable() const { return false; }
};

// Built-in stand-in: per-pixel blend (1-gamma) a + gamma b.
class LinearInterpolator : public Interpolator {
 public:
  Tensorf interpolate(const Tensorf& a, const Tensorf& b, double gamma) override;
  bool differentiable() const override { return true; }
};

// Shells out per request: "HEX4D-INTERP 1\n gamma g\n png.. png.." -> reply
// "HEX4D-INTERP-R 1\n png..". Frames stay in [0,1], carried as 16-bit PNG.
class ExternalInterpolator : public Interpolator {
 public:
  explicit ExternalInterpolator(std::vector<std::string> argv, int timeout_ms = 30000);
  Tensorf interpolate(const Tensorf& a, const Tensorf& b, double gamma) override;

 private:
  std::vector<std::string> argv_;
  int timeout_ms_;
};

// Wire codec for the external protocol (exposed for stub implementations).
std::string interp_request(const Tensorf& a, const Tensorf& b, double gamma);
void parse_interp_request(const std::string& bytes, Tensorf* a, Tensorf* b, double* gamma);
std::string interp_reply(const Tensorf& x);
Tensorf parse_interp_reply(const std::string& bytes);

// Interpolation-driven consistency loss over a batch: interior frame j
// compares against psi(x_1, x_J, (j-1)/(J-1)); the loss sums unsquared
// per-frame L2 distances (squared variant behind the flag).
struct IclResult {
  double loss = 0.0;
  std::vector<Tensorf> frame_grads;  // dL/dx_j for every j; endpoints zero
                                     // when the interpolator is opaque
};
IclResult icl_loss(const FrameBatch& batch, Interpolator& interp, bool squared = false);

// Interpolation weight for interior index j (1-based), gamma_j = (j-1)/(J-1).
double icl_gamma(int j, int J);

// J cameras at the base elevation with one per-batch azimuth step drawn
// uniformly from [min_step, max_step] degrees.
std::vector<CameraPose> sample_spatial_batch(Rng& rng, const CameraPose& base, int J,
                                             double min_step_deg = 5.0,
                                             double max_step_deg = 15.0);

// J consecutive frame indices (stride 1), start uniform in [0, N-J].
std::vector<int> sample_temporal_batch(Rng& rng, int J, int n_frames);

}  // namespace hex4d
