#pragma once

#include <array>
#include <string>
#include <vector>

#include "hex4d/camera.h"
#include "hex4d/field.h"
#include "hex4d/guidance.h"
#include "hex4d/losses.h"
#include "hex4d/param_store.h"

namespace hex4d {

// One optimization stage: iteration count, views per step, render resolution.
struct StageConfig {
  int iterations = 0;
  int batch = 1;
  int resolution = 64;
};

struct IclConfig {
  double probability = 0.25;
  int J = 4;
  bool squared = false;
  bool spatial = true;   // draw spatial (azimuth-run) batches
  bool temporal = true;  // draw temporal (frame-run) batches
  std::vector<std::string> external_cmd;  // empty -> built-in linear blend
  int timeout_ms = 30000;
};

struct GuidanceConfig {
  std::string provider = "oracle_view";  // "oracle_view" | "external"
  std::vector<std::string> external_cmd;
  int timeout_ms = 30000;
  int T = 1000;
  std::string omega = "one_minus_abar";  // | "constant"
  double tau_lo = 0.02, tau_hi = 0.98;
  bool anneal = true;  // shrink the upper tau fraction 0.98 -> 0.5 over training
  OrbitLimits orbit;
  int gt_samples = 256;   // oracle view quality
  int cache_cap = 64;
};

// Grid resolutions per cascade scale, coarse to fine.
struct FieldProfile {
  std::vector<int> spatial_res = {50, 100};
  std::vector<int> time_res = {8, 16};
  int features = 16;
  int head_hidden = 64;
  bool concat_mode = false;
};

struct TrainConfig {
  uint64_t seed = 1234;
  std::string dataset_dir;  // input video directory (gen-scene layout)
  std::string scene_json;   // scene spec path; feeds the oracle provider + eval

  FieldProfile field;
  std::vector<StageConfig> stages;
  IclConfig icl;
  GuidanceConfig guidance;
  LossWeights weights;
  AdamParams optim;

  int n_samples = 64;  // ray samples per render
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  int checkpoint_every = 500;

  // normal-based regularizer subsampling
  int normal_points = 1024;
  double normal_h = 0.02;

  // novel-view sampling envelope for SDS
  double elevation_lo = -10.0, elevation_hi = 45.0;

  // held-out evaluation set
  std::vector<CameraPose> eval_cameras;
  std::vector<double> eval_times;

  // Named presets: "desk" (default), "paper", "test".
  static TrainConfig preset(const std::string& name);
  void validate() const;
};

// Build the cascade field layout for a config.
FieldConfig make_field_config(const TrainConfig& cfg);
NoiseSchedule make_schedule(const GuidanceConfig& g);

// JSON (de)serialization. A "profile" key selects the preset the remaining
// keys override. HEX4D_SEED in the environment overrides the seed.
TrainConfig config_from_json(const std::string& text);
std::string config_to_json(const TrainConfig& cfg);
TrainConfig load_config_file(const std::string& path);

}  // namespace hex4d
