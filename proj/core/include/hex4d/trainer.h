#pragma once

#include <string>
#include <vector>

#include "hex4d/config.h"
#include "hex4d/field.h"
#include "hex4d/losses.h"
#include "hex4d/param_store.h"
#include "hex4d/scene.h"

namespace hex4d {

// One optimization step's bookkeeping. Components are raw (unweighted) loss
// values; `total` is the weighted sum actually descended.
struct IterRow {
  int iteration = 0;  // global, 0-based
  int stage = 0;
  char step = 's';  // 's' score distillation / 'r' reconstruction
  bool icl_fired = false;
  LossComponents comps;
  double total = 0.0;
  double wall_ms = 0.0;
};

struct EvalReport {
  std::vector<double> psnr;  // per (camera, timestamp), camera-major
  std::vector<double> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct TrainReport {
  std::vector<IterRow> rows;  // one per iteration executed by this call
  double wall_seconds = 0.0;
  std::string checkpoint_path;  // last checkpoint written ("" if none)
  EvalReport eval;              // held-out views; empty when no scene given
  std::vector<double> eval_iou;
  double mean_iou = 0.0;
};

// Runs the staged optimization on a frame-sequence dataset. `ps` must carry
// the field's parameters (or be restored from `resume`). out_dir receives
// checkpoints and a train_log.csv ("" disables artifacts). `scene` supplies
// ground truth for the oracle-view provider and the held-out evaluation; when
// null it is loaded from cfg.scene_json if needed. Resuming requires the same
// cfg that produced the checkpoint.
TrainReport train(const TrainConfig& cfg, const Dataset& ds, CascadeField<float>& field,
                  ParamStore<float>& ps, const std::string& out_dir,
                  const std::string& resume = "", const SyntheticScene* scene = nullptr);

// Renders one 8-bit RGB PNG per (camera, timestamp) from a trained
// checkpoint, plus a manifest.json. The field profile and render settings are
// recovered from the config embedded in the checkpoint. Deterministic
// (midpoint sampling). Returns the written image paths, camera-major.
std::vector<std::string> render_sequence(const std::string& ckpt_path,
                                         const std::vector<CameraPose>& cameras,
                                         const std::vector<double>& timestamps, int width,
                                         int height, const std::string& out_dir);

// PSNR/SSIM between aligned frame sets (same order, same shapes).
EvalReport evaluate(const std::vector<Tensorf>& pred, const std::vector<Tensorf>& gt);

}  // namespace hex4d
