#pragma once

#include <functional>
#include <span>
#include <vector>

#include "palette_field/common.hpp"
#include "palette_field/field.hpp"
#include "palette_field/image.hpp"
#include "palette_field/scene.hpp"

namespace palette_field {

struct ResolvedEdit;

struct RaySamples {
  std::vector<double> t;
  std::vector<double> dt;  // dt[0] = t[0] - t_near
  std::vector<Vec3> x;
};

// M stratified samples: bin centers, or uniform positions inside each bin when jittered.
RaySamples sample_ray(const Ray& ray, int samples, bool jitter, CounterRng* rng = nullptr);

struct CompositeResult {
  std::vector<double> value;         // C channels
  std::vector<double> contribution;  // a_i = T_i (1 - w_i)
  double transmittance = 1.0;        // prod w_i
  double opacity = 0.0;              // sum a_i
};

// values: M x C row-major. A non-empty background (C values) is added with the final
// transmittance.
CompositeResult composite(std::span<const double> values, int channels,
                          std::span<const double> sigmas, std::span<const double> dts,
                          std::span<const double> background = {});

struct CompositeGrads {
  std::vector<double> dvalues;  // M x C
  std::vector<double> dsigmas;  // M
};

CompositeGrads composite_backprop(std::span<const double> values, int channels,
                                  std::span<const double> sigmas, std::span<const double> dts,
                                  std::span<const double> upstream,
                                  std::span<const double> background = {});

struct RenderOptions {
  int samples = 128;
  double near = 2.0;
  double far = 6.0;
  Vec3 background{0, 0, 0};
  double transmittance_cutoff = 1e-4;
  // Points whose compositing weight falls below this are not shaded.
  double min_contribution = 0.0;
  const ResolvedEdit* edit = nullptr;
  int threads = 0;
};

struct RenderOutput {
  int width = 0;
  int height = 0;
  Image color;    // RGB, background composited
  Image diffuse;  // RGB, composited c_d
  Image viewdep;  // RGB, composited s
  Image depth;    // 1 channel, sum a_i t_i
  Image opacity;  // 1 channel, sum a_i
  std::vector<Image> weight_maps;  // N_p single-channel images
};

struct RayRender {
  Vec3 color;
  Vec3 diffuse;
  Vec3 viewdep;
  double depth = 0;
  double opacity = 0;
  std::array<double, kMaxPalettes> weights{};
};

// Composited outputs of one ray; the ray is clipped to the field's box first.
RayRender render_ray(const FieldParams& params, Ray ray, const RenderOptions& opts);

RenderOutput render_view(const FieldParams& params, const Camera& cam, const RenderOptions& opts);

// Options matching a dataset's bounds and background.
RenderOptions render_options_for(const SceneDataset& dataset, int samples = 128);

// Analytic density/color function used for ground-truth rendering.
using FieldFunction = std::function<void(const Vec3& x, const Vec3& d, double& sigma, Vec3& color)>;

RenderOutput render_function(const FieldFunction& fn, const Camera& cam, const Aabb& box,
                             const RenderOptions& opts);

}  // namespace palette_field
