#include "palette_field/adam.hpp"

#include <cmath>
#include <limits>

#include "palette_field/common.hpp"

namespace palette_field {

namespace {

template <typename T>
bool all_finite(std::span<const T> v) {
  bool ok = true;
  for (const T g : v) ok &= std::abs(g) <= std::numeric_limits<T>::max();
  return ok;
}

struct Coefficients {
  double lr, inv_c2, b1, b2, a1, a2, eps;
};

// Advances the step count and allocates moments on first use.
Coefficients begin_step(size_t n, AdamState& st, const AdamConfig& cfg) {
  if (st.m.size() != n) {
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  return {cfg.lr / c1, 1.0 / c2, cfg.beta1, cfg.beta2, 1.0 - cfg.beta1, 1.0 - cfg.beta2, cfg.eps};
}

template <typename T>
void step_impl(std::span<T> params, std::span<const T> grads, AdamState& st, const AdamConfig& cfg,
               const std::string& name) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kInvalidArgument, name + ": gradient size differs from parameters");
  }
  if (!all_finite(grads)) throw Error(ErrorKind::kNonFiniteGradient, "non-finite gradient in " + name);
  // Zero g, m and v give m / (sqrt(v) + eps) = 0, so untouched entries stay bit-exact.
  const auto [lr, inv_c2, b1, b2, a1, a2, eps] = begin_step(params.size(), st, cfg);
  double* m = st.m.data();
  double* v = st.v.data();
  T* p = params.data();
  const T* g = grads.data();
  const size_t n = params.size();
  if (cfg.skip_zero_grad) {
    for (size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      m[i] = b1 * m[i] + a1 * gi;
      v[i] = b2 * v[i] + a2 * gi * gi;
      p[i] = static_cast<T>(p[i] - lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps));
    }
    return;
  }
  for (size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = b1 * m[i] + a1 * gi;
    v[i] = b2 * v[i] + a2 * gi * gi;
    p[i] = static_cast<T>(p[i] - lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps));
  }
}

}  // namespace

void adam_step_rows(std::span<float> params, std::span<const float> grads,
                    std::span<const uint32_t> rows, size_t width, AdamState& st,
                    const AdamConfig& cfg, const std::string& name) {
  if (params.size() != grads.size() || width == 0 || params.size() % width != 0) {
    throw Error(ErrorKind::kInvalidArgument, name + ": gradient size differs from parameters");
  }
  for (uint32_t r : rows) {
    if ((static_cast<size_t>(r) + 1) * width > params.size()) {
      throw Error(ErrorKind::kInvalidArgument, name + ": row out of range");
    }
    if (!all_finite(grads.subspan(r * width, width))) {
      throw Error(ErrorKind::kNonFiniteGradient, "non-finite gradient in " + name);
    }
  }
  const auto [lr, inv_c2, b1, b2, a1, a2, eps] = begin_step(params.size(), st, cfg);
  double* m = st.m.data();
  double* v = st.v.data();
  for (uint32_t r : rows) {
    for (size_t i = r * width; i < (r + 1) * width; ++i) {
      const double gi = grads[i];
      if (gi == 0.0) continue;
      m[i] = b1 * m[i] + a1 * gi;
      v[i] = b2 * v[i] + a2 * gi * gi;
      params[i] = static_cast<float>(params[i] - lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps));
    }
  }
}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state,
               const AdamConfig& cfg, const std::string& name) {
  step_impl<float>(params, grads, state, cfg, name);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg, const std::string& name) {
  step_impl<double>(params, grads, state, cfg, name);
}

}  // namespace palette_field
