#include "palette_field/losses.hpp"

#include <cstdio>

namespace palette_field {

using nlohmann::json;

LossWeights LossWeights::resolved(const Aabb& box) const {
  LossWeights w = *this;
  const double diag = box.diagonal();
  if (w.sigma_x <= 0) w.sigma_x = (diag / 32.0) * (diag / 32.0);
  if (w.eps_std <= 0) w.eps_std = diag / 64.0;
  return w;
}

void LossWeights::validate() const {
  for (double v : {s, sp, offset, sm, palette, weight, perpoint}) {
    if (!(v >= 0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kInvalidArgument, "loss weights must be finite and >= 0");
    }
  }
  if (!(sigma_c > 0)) throw Error(ErrorKind::kInvalidArgument, "sigma_c must be > 0");
}

json loss_weights_to_json(const LossWeights& w) {
  return {{"lambda_s", w.s},         {"lambda_sp", w.sp},         {"lambda_offset", w.offset},
          {"lambda_sm", w.sm},       {"lambda_palette", w.palette}, {"lambda_weight", w.weight},
          {"lambda_perpoint", w.perpoint}, {"sigma_x", w.sigma_x},  {"sigma_c", w.sigma_c},
          {"eps_std", w.eps_std}};
}

LossWeights loss_weights_from_json(const json& j, LossWeights w) {
  w.s = j.value("lambda_s", w.s);
  w.sp = j.value("lambda_sp", w.sp);
  w.offset = j.value("lambda_offset", w.offset);
  w.sm = j.value("lambda_sm", w.sm);
  w.palette = j.value("lambda_palette", w.palette);
  w.weight = j.value("lambda_weight", w.weight);
  w.perpoint = j.value("lambda_perpoint", w.perpoint);
  w.sigma_x = j.value("sigma_x", w.sigma_x);
  w.sigma_c = j.value("sigma_c", w.sigma_c);
  w.eps_std = j.value("eps_std", w.eps_std);
  w.validate();
  return w;
}

LossBreakdown total_loss(LossBreakdown c, const LossWeights& w, const ScheduleFlags& flags) {
  if (!flags.sm_active) c.sm = 0;
  if (!flags.weight_active) c.weight = 0;
  c.total = c.recon + w.s * c.s + w.sp * c.sp + w.offset * c.offset + w.sm * c.sm +
            w.palette * c.palette + w.weight * c.weight + w.perpoint * c.perpoint;
  return c;
}

std::string loss_csv_header() { return "epoch,recon,s,sp,offset,sm,palette,weight,perpoint,total"; }

std::string loss_csv_row(int epoch, const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", epoch,
                b.recon, b.s, b.sp, b.offset, b.sm, b.palette, b.weight, b.perpoint, b.total);
  return buf;
}

double viewdep_point(const Vec3& s, Vec3& grad) {
  grad = s * 2.0;
  return squared_norm(s);
}

double sparsity_point(const double* omega, int n_p, double* grad) {
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n_p; ++i) {
    s1 += omega[i];
    s2 += omega[i] * omega[i];
  }
  for (int i = 0; i < n_p; ++i) grad[i] = 1.0 / s2 - 2.0 * s1 * omega[i] / (s2 * s2);
  return s1 / s2 - 1.0;
}

double offset_point(const Vec3* delta, int n_p, Vec3* grad) {
  double v = 0;
  for (int i = 0; i < n_p; ++i) {
    v += squared_norm(delta[i]);
    grad[i] = delta[i] * (2.0 / n_p);
  }
  return v / n_p;
}

double smooth_affinity(const Vec3& x, const Vec3& y, const Vec3& cx, const Vec3& cy,
                       double sigma_x, double sigma_c) {
  return std::exp(-squared_norm(x - y) / sigma_x - squared_norm(cx - cy) / sigma_c);
}

double smooth_point(double xi, const double* omega_x, const double* omega_y, int n_p,
                    double* grad_x, double* grad_y) {
  double v = 0;
  for (int i = 0; i < n_p; ++i) {
    const double d = omega_x[i] - omega_y[i];
    v += d * d;
    grad_x[i] = 2.0 * xi * d;
    grad_y[i] = -2.0 * xi * d;
  }
  return xi * v;
}

ReconResult loss_recon(std::span<const Vec3> ref, std::span<const Vec3> color,
                       std::span<const Vec3> cds) {
  const size_t b = ref.size();
  ReconResult r;
  if (b == 0) return r;
  r.d_color.resize(b);
  if (!cds.empty()) r.d_cds.resize(b);
  for (size_t i = 0; i < b; ++i) {
    const Vec3 e1 = color[i] - ref[i];
    r.value += squared_norm(e1);
    r.d_color[i] = e1 * (2.0 / b);
    if (!cds.empty()) {
      const Vec3 e2 = cds[i] - ref[i];
      r.value += squared_norm(e2);
      r.d_cds[i] = e2 * (2.0 / b);
    }
  }
  r.value /= static_cast<double>(b);
  return r;
}

namespace {

double weight_sum(std::span<const double> a) {
  double s = 0;
  for (double v : a) s += v;
  return s;
}

}  // namespace

double loss_viewdep(std::span<const Vec3> s, std::span<const double> a, std::vector<Vec3>* grad) {
  const double total = weight_sum(a);
  if (grad) grad->assign(s.size(), Vec3{});
  if (total <= 0) return 0.0;
  double v = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    Vec3 g;
    v += a[i] * viewdep_point(s[i], g);
    if (grad) (*grad)[i] = g * (a[i] / total);
  }
  return v / total;
}

double loss_sparsity(std::span<const double> omega, int n_p, std::span<const double> a,
                     std::vector<double>* grad) {
  const double total = weight_sum(a);
  if (grad) grad->assign(omega.size(), 0.0);
  if (total <= 0) return 0.0;
  double v = 0;
  double g[kMaxPalettes];
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i] * sparsity_point(omega.data() + i * n_p, n_p, g);
    if (grad) {
      for (int k = 0; k < n_p; ++k) (*grad)[i * n_p + k] = g[k] * a[i] / total;
    }
  }
  return v / total;
}

double loss_offset(std::span<const Vec3> delta, int n_p, std::span<const double> a,
                   std::vector<Vec3>* grad) {
  const double total = weight_sum(a);
  if (grad) grad->assign(delta.size(), Vec3{});
  if (total <= 0) return 0.0;
  double v = 0;
  Vec3 g[kMaxPalettes];
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i] * offset_point(delta.data() + i * n_p, n_p, g);
    if (grad) {
      for (int k = 0; k < n_p; ++k) (*grad)[i * n_p + k] = g[k] * (a[i] / total);
    }
  }
  return v / total;
}

double loss_palette(const std::vector<Vec3>& p, const std::vector<Vec3>& p_bar,
                    std::vector<Vec3>* grad) {
  const size_t n = p.size();
  if (grad) grad->assign(n, Vec3{});
  if (n == 0) return 0.0;
  double v = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 d = p[i] - p_bar[i];
    v += squared_norm(d);
    if (grad) (*grad)[i] = d * (2.0 / n);
  }
  return v / static_cast<double>(n);
}

double loss_weight(std::span<const double> rendered, std::span<const double> target, int n_p,
                   std::vector<double>* grad) {
  const size_t rows = rendered.size() / n_p;
  if (grad) grad->assign(rendered.size(), 0.0);
  if (rows == 0) return 0.0;
  double v = 0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered[i] - target[i];
    v += d * d;
    if (grad) (*grad)[i] = 2.0 * d / static_cast<double>(rows);
  }
  return v / static_cast<double>(rows);
}

double loss_perpoint(std::span<const Vec3> colors, std::span<const double> a,
                     std::span<const size_t> offsets, std::span<const Vec3> ref,
                     std::vector<Vec3>* grad) {
  const size_t b = ref.size();
  if (grad) grad->assign(colors.size(), Vec3{});
  if (b == 0) return 0.0;
  double v = 0;
  for (size_t r = 0; r < b; ++r) {
    for (size_t i = offsets[r]; i < offsets[r + 1]; ++i) {
      const Vec3 e = colors[i] - ref[r];
      v += a[i] * squared_norm(e);
      if (grad) (*grad)[i] = e * (2.0 * a[i] / b);
    }
  }
  return v / static_cast<double>(b);
}

double loss_smooth(const FieldParams& params, std::span<const SmoothSample> points,
                   CounterRng& rng, const LossWeights& weights, FieldGrads* grads) {
  const LossWeights w = weights.resolved(params.aabb);
  const int n = params.n_p();
  double total = 0;
  for (const SmoothSample& p : points) total += p.a;
  if (total <= 0 || n == 0) return 0.0;
  const Vec3 d{0, 0, -1};
  constexpr unsigned kParts = kEvalDiffuse | kEvalPalette;
  double v = 0;
  for (const SmoothSample& p : points) {
    const Vec3 eps{rng.normal() * w.eps_std, rng.normal() * w.eps_std, rng.normal() * w.eps_std};
    const Vec3 y = p.x + eps;
    const PointSample px = query_point(params, p.x, d, kParts);
    const PointSample py = query_point(params, y, d, kParts);
    const double xi = smooth_affinity(p.x, y, px.c_d, py.c_d, w.sigma_x, w.sigma_c);
    PointGrad gx, gy;
    v += p.a * smooth_point(xi, px.omega.data(), py.omega.data(), n, gx.omega.data(), gy.omega.data());
    if (grads) {
      const double scale = p.a / total;
      for (int i = 0; i < n; ++i) {
        gx.omega[i] *= scale;
        gy.omega[i] *= scale;
      }
      backprop_point(params, px, gx, *grads);
      backprop_point(params, py, gy, *grads);
    }
  }
  return v / total;
}

}  // namespace palette_field
