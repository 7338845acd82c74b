#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "palette_field/common.hpp"
#include "palette_field/field.hpp"

namespace palette_field {

struct LossWeights {
  double s = 0.05;
  double sp = 0.02;
  double offset = 0.1;
  double sm = 0.1;
  double palette = 0.001;
  double weight = 0.05;
  double perpoint = 0.01;
  // Smoothing parameters; non-positive values mean "derive from the scene box"
  // (sigma_x = (diag/32)^2, eps_std = diag/64).
  double sigma_x = 0;
  double sigma_c = 0.04;
  double eps_std = 0;

  // Fills the scene-relative defaults.
  LossWeights resolved(const Aabb& box) const;
  void validate() const;
};

nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});

struct LossBreakdown {
  double recon = 0, s = 0, sp = 0, offset = 0, sm = 0, palette = 0, weight = 0, perpoint = 0;
  double total = 0;
};

struct ScheduleFlags {
  bool sm_active = true;
  bool weight_active = true;
};

// total = recon + sum of lambda-weighted terms; gated terms are zeroed in the breakdown.
LossBreakdown total_loss(LossBreakdown components, const LossWeights& w, const ScheduleFlags& flags);

std::string loss_csv_header();
std::string loss_csv_row(int epoch, const LossBreakdown& b);

// ---- Per-point pieces (value, gradient written to `grad`) ----

// ||s||^2
double viewdep_point(const Vec3& s, Vec3& grad);
// sum(w) / sum(w^2) - 1
double sparsity_point(const double* omega, int n_p, double* grad);
// mean over palettes of ||delta_i||^2
double offset_point(const Vec3* delta, int n_p, Vec3* grad);
// exp(-||x - y||^2 / sigma_x - ||c_x - c_y||^2 / sigma_c)
double smooth_affinity(const Vec3& x, const Vec3& y, const Vec3& cx, const Vec3& cy,
                       double sigma_x, double sigma_c);
// xi ||omega_x - omega_y||^2 with xi held constant; gradients for both weight vectors.
double smooth_point(double xi, const double* omega_x, const double* omega_y, int n_p,
                    double* grad_x, double* grad_y);

// ---- Batch forms ----

struct ReconResult {
  double value = 0;
  std::vector<Vec3> d_color;  // d/d c(r)
  std::vector<Vec3> d_cds;    // d/d (c_d(r) + s(r))
};

// Mean over rays of ||ref - color||^2 + ||ref - cds||^2. An empty `cds` drops the
// second term.
ReconResult loss_recon(std::span<const Vec3> ref, std::span<const Vec3> color,
                       std::span<const Vec3> cds);

// Contribution-weighted means sum(a f) / sum(a); gradients are w.r.t. the per-point inputs.
double loss_viewdep(std::span<const Vec3> s, std::span<const double> a, std::vector<Vec3>* grad);
double loss_sparsity(std::span<const double> omega, int n_p, std::span<const double> a,
                     std::vector<double>* grad);
double loss_offset(std::span<const Vec3> delta, int n_p, std::span<const double> a,
                   std::vector<Vec3>* grad);

// Mean over palettes of ||P_i - Pbar_i||^2.
double loss_palette(const std::vector<Vec3>& p, const std::vector<Vec3>& p_bar,
                    std::vector<Vec3>* grad);

// Mean over supervised pixels of ||W - Wbar||^2. Rows: n_p values each.
double loss_weight(std::span<const double> rendered, std::span<const double> target, int n_p,
                   std::vector<double>* grad);

// (1/B) sum_rays sum_i a_i ||c_i - ref||^2 with a held constant. `offsets` has B+1 entries
// delimiting each ray's points.
double loss_perpoint(std::span<const Vec3> colors, std::span<const double> a,
                     std::span<const size_t> offsets, std::span<const Vec3> ref,
                     std::vector<Vec3>* grad);

struct SmoothSample {
  Vec3 x;
  double a = 1.0;  // contribution weight (held constant)
};

// Smoothness over points, each paired with x + eps, eps ~ N(0, eps_std^2 I) drawn
// from `rng`. Gradients reach the weight logits at both points; c_d and xi are constants.
double loss_smooth(const FieldParams& params, std::span<const SmoothSample> points,
                   CounterRng& rng, const LossWeights& w, FieldGrads* grads);

}  // namespace palette_field
