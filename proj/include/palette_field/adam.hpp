#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace palette_field {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Entries with an exactly zero gradient keep parameters and moments unchanged (sparse
  // voxel updates); the step count still advances.
  bool skip_zero_grad = false;
};

// Moments for one parameter block.
struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;
};

// Bias-corrected Adam update in place. Entries whose gradient and both moments are zero
// keep their value exactly. Throws kNonFiniteGradient naming `name`.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state,
               const AdamConfig& cfg, const std::string& name);
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg, const std::string& name);

// Masked update (skip_zero_grad is implied) restricted to `rows` of a block laid out as
// `width` consecutive entries per row. Matches the full masked update whenever every
// unlisted row has a zero gradient.
void adam_step_rows(std::span<float> params, std::span<const float> grads,
                    std::span<const uint32_t> rows, size_t width, AdamState& state,
                    const AdamConfig& cfg, const std::string& name);

}  // namespace palette_field
