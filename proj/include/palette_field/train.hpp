#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "palette_field/adam.hpp"
#include "palette_field/field.hpp"
#include "palette_field/losses.hpp"
#include "palette_field/palette.hpp"
#include "palette_field/scene.hpp"

namespace palette_field {

struct TrainConfig {
  int epochs = 400;
  int batch_rays = 4096;
  int samples = 64;  // per ray while training
  double lr = 0.01;          // palette colors
  double grid_lr_scale = 10.0;  // voxel grids step at lr * grid_lr_scale
  uint64_t seed = 0;
  LossWeights weights;
  int palette_freeze_epochs = 100;
  int sm_delay_epochs = 30;
  bool stage2_freeze_density = true;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
  bool masked_adam = true;  // grid blocks skip zero-gradient voxels
  // Contribution-weighted regularizer means; false weights every shaded point equally.
  bool weighted_regularizers = true;
  // Stage-2 points below this compositing weight are not shaded.
  double min_contribution = 1e-3;
  // Stage 1 skips samples whose stencil corners are all below this opacity (for the
  // sample's step) once the warmup has carved empty space; 0 disables skipping.
  double skip_alpha = 1e-3;
  int skip_warmup_epochs = 10;
  // From the warmup on, every prune_interval epochs stage 1 resets voxels whose 3x3x3
  // neighborhood stays below prune_alpha (over a diag / samples step) to near-empty.
  // 0 disables pruning.
  double prune_alpha = 1e-3;
  int prune_interval = 10;
  GridDims grid{64, 64, 64};
  FieldInit init;
  int threads = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig read_train_config(const std::filesystem::path& path);

// Called after every epoch with the epoch index, current parameters and epoch-mean losses.
using EpochCallback = std::function<void(int, const FieldParams&, const LossBreakdown&)>;

struct TrainResult {
  FieldParams params;
  std::vector<LossBreakdown> history;
};

// Stage 1: density plus the diffuse and SH heads, color = clamp(c_d + s), trained on the
// first reconstruction term and the per-point RGB loss. `start` resumes from given params.
TrainResult train_geometry(const SceneDataset& dataset, const TrainConfig& config,
                           const EpochCallback& on_epoch = {}, const FieldParams* start = nullptr);

// Stage 2: palette decomposition on top of a stage-1 field. `supervision` holds one row
// per training pixel (zero rows are unsupervised).
TrainResult train_decomposition(const SceneDataset& dataset, const FieldParams& stage1,
                                const Palette& palette, const SupervisionWeights& supervision,
                                const TrainConfig& config, const EpochCallback& on_epoch = {});

// Loss and gradient of one batch at fixed parameters, before clipping and the optimizer
// step. loss.total is the lambda-weighted sum whose gradient `grads` holds. Contribution
// weights of the per-point RGB loss and the regularizers, and the smoothness affinity,
// are constants of the gradient.
struct BatchResult {
  LossBreakdown loss;
  FieldGrads grads;
};

BatchResult geometry_batch(const FieldParams& params, const SceneDataset& dataset,
                           std::span<const uint32_t> pixels, int epoch, const TrainConfig& config);

// `params` must carry a palette. The palette gradient is always filled, including the
// palette prior; training only applies it after the freeze window.
BatchResult decomposition_batch(const FieldParams& params, const SceneDataset& dataset,
                                const SupervisionWeights& supervision,
                                std::span<const uint32_t> pixels, int epoch,
                                const TrainConfig& config);

// Stage-2 term gates at `epoch`.
ScheduleFlags decomposition_flags(const TrainConfig& config, int epoch);

// Resets every voxel whose 3x3x3 neighborhood max opacity over `step` is below `alpha` to
// a raw density of opacity 1e-6, clearing its Adam moments when `state` is given.
// Returns the number of voxels reset.
size_t prune_density(FieldParams& params, double alpha, double step, AdamState* state = nullptr);

void write_loss_csv(const std::vector<LossBreakdown>& history, const std::filesystem::path& path);

}  // namespace palette_field
