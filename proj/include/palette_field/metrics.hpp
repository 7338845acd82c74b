#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "palette_field/field.hpp"
#include "palette_field/image.hpp"
#include "palette_field/scene.hpp"

namespace palette_field {

// Identical images have infinite PSNR; JSON encodes it as the string "inf".
double psnr(const Image& a, const Image& b);

// Contribution-weighted mean of sum(w)/sum(w^2) - 1 over points on `n_rays` random
// training rays (bin-center samples). Requires a palette.
double sparsity_metric(const FieldParams& params, const SceneDataset& dataset, int n_rays,
                       uint64_t seed, int samples = 64, int threads = 0);

// Mean over maps and pixels of |d/dx| + |d/dy| (forward differences, last row/column
// contribute nothing). Maps must be single-channel and share a shape.
double tv_metric(const std::vector<Image>& weight_maps);

// Minimum over assignments of the mean L2 distance between matched colors.
double palette_error(const std::vector<Vec3>& p, const std::vector<Vec3>& truth);

struct MetricsReport {
  double psnr = 0;
  double sparsity = 0;
  double tv = 0;
  std::optional<double> palette_err;
};

nlohmann::json metrics_to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

struct MetricsOptions {
  int sparsity_rays = 4096;
  int samples = 128;
  uint64_t seed = 0;
  int threads = 0;
};

// PSNR and TV are averaged over the views of `eval`; sparsity samples `train` rays.
// palette_err is filled when `truth` is given.
MetricsReport evaluate(const FieldParams& params, const SceneDataset& train, const SceneDataset& eval,
                       const MetricsOptions& opts, const std::vector<Vec3>* truth = nullptr);

}  // namespace palette_field
