#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "hex4d/camera.h"
#include "hex4d/scene.h"
#include "hex4d/schedule.h"
#include "hex4d/tensor.h"

namespace hex4d {

// Conditioning for one score query: pose of the rendered view relative to the
// dataset input view, plus the clip time.
struct GuidanceContext {
  double d_azimuth_deg = 0.0;
  double d_elevation_deg = 0.0;
  double d_radius = 0.0;
  double time = 0.0;
};

// Behavioral contract: predict the noise inside z_tau, deterministically in
// (z, tau, ctx), output shape equal to input shape. Must be callable from
// parallel workers.
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;
  virtual Tensorf predict_noise(const Tensorf& z, int tau, const GuidanceContext& ctx) = 0;
};

// Forward diffusion: z = sqrt(abar)*(2x-1) + sqrt(1-abar)*eps, with x in [0,1]
// mapped to [-1,1] internally and eps supplied by the caller.
Tensorf noise_image(const Tensorf& x, int tau, const NoiseSchedule& ns, const Tensorf& eps);

// Score-distillation pixel gradient omega(tau) * (eps_hat - eps). The result
// is injected as an external adjoint on the render; nothing backpropagates
// through the provider.
Tensorf sds_grad(const Tensorf& x, ScoreProvider& provider, const GuidanceContext& ctx, int tau,
                 const NoiseSchedule& ns, const Tensorf& eps);

// Exact noise under the hypothesis that the clean image is mu:
// eps_hat = (z - sqrt(abar) * (2 mu - 1)) / sqrt(1 - abar).
Tensorf gaussian_eps_hat(const Tensorf& z, int tau, const NoiseSchedule& ns, const Tensorf& mu);

// Analytic provider pulling renders toward one fixed target image.
class GaussianOracleProvider : public ScoreProvider {
 public:
  GaussianOracleProvider(Tensorf mu, const NoiseSchedule* ns);
  Tensorf predict_noise(const Tensorf& z, int tau, const GuidanceContext& ctx) override;

 private:
  Tensorf mu_;
  const NoiseSchedule* ns_;
};

// Pose envelope a view provider will answer for.
struct OrbitLimits {
  double max_d_elevation_deg = 45.0;
  double max_d_radius = 0.5;
};

// Provider whose target is the ground-truth novel view of a synthetic scene
// at the queried relative pose and time; the stand-in for an image-conditioned
// novel-view diffusion model. Views are cached per (pose, time).
class OracleViewProvider : public ScoreProvider {
 public:
  OracleViewProvider(SyntheticScene scene, CameraPose input_view, int width, int height,
                     const NoiseSchedule* ns, int gt_samples = 256, size_t cache_cap = 64,
                     OrbitLimits limits = {});
  Tensorf predict_noise(const Tensorf& z, int tau, const GuidanceContext& ctx) override;

  // The cached clean target for a context (renders on miss).
  Tensorf view(const GuidanceContext& ctx);
  size_t cache_size() const;

 private:
  SyntheticScene scene_;
  CameraPose input_view_;
  int width_, height_;
  const NoiseSchedule* ns_;
  int gt_samples_;
  size_t cache_cap_;
  OrbitLimits limits_;
  mutable std::mutex mu_;
  std::map<std::array<int64_t, 4>, Tensorf> cache_;
  std::vector<std::array<int64_t, 4>> order_;  // insertion order for eviction
};

// Provider that shells out per query: request (z PNG16 + declared value
// range, tau, pose, time) on stdin, response (eps_hat PNG16 + range) on
// stdout. See score_request/score_reply for the exact framing.
class ExternalScoreProvider : public ScoreProvider {
 public:
  ExternalScoreProvider(std::vector<std::string> argv, const NoiseSchedule* ns,
                        int timeout_ms = 30000);
  Tensorf predict_noise(const Tensorf& z, int tau, const GuidanceContext& ctx) override;

 private:
  std::vector<std::string> argv_;
  const NoiseSchedule* ns_;
  int timeout_ms_;
};

// Wire codec for the external protocol (exposed for stub implementations).
std::string score_request(const Tensorf& z, int tau, const GuidanceContext& ctx);
void parse_score_request(const std::string& bytes, Tensorf* z, int* tau, GuidanceContext* ctx);
std::string score_reply(const Tensorf& eps_hat);
Tensorf parse_score_reply(const std::string& bytes);

}  // namespace hex4d
