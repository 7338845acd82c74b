#include "palette_field/field.hpp"

#include <algorithm>

namespace palette_field {

namespace {

constexpr double kY00 = 0.28209479177387814;
constexpr double kY1 = 0.4886025119029199;
constexpr double kY2a = 1.0925484305920792;
constexpr double kY20 = 0.31539156525252005;
constexpr double kY22 = 0.5462742152960396;

inline double clamp_pass(double u) { return (u >= 0.0 && u <= 1.0) ? 1.0 : 0.0; }

}  // namespace

std::vector<Vec3> Palette::display_colors() const { return display_colors(current); }

std::vector<Vec3> Palette::display_colors(const std::vector<Vec3>& colors) const {
  std::vector<Vec3> out;
  out.reserve(colors.size());
  for (const Vec3& c : colors) out.push_back(clamp01(c * mean_intensity));
  return out;
}

VoxelGrid::VoxelGrid(const GridDims& d, const Aabb& box, int c, float fill)
    : dims(d), aabb(box), channels(c) {
  if (d[0] < 2 || d[1] < 2 || d[2] < 2) {
    throw Error(ErrorKind::kInvalidArgument, "grid dims must be >= 2 per axis");
  }
  data.assign(voxel_count() * static_cast<size_t>(c), fill);
}

Vec3 VoxelGrid::voxel_position(int ix, int iy, int iz) const {
  const Vec3 e = aabb.extent();
  return {aabb.min.x + e.x * ix / (dims[0] - 1), aabb.min.y + e.y * iy / (dims[1] - 1),
          aabb.min.z + e.z * iz / (dims[2] - 1)};
}

TrilinearStencil trilinear_stencil(const GridDims& dims, const Aabb& aabb, const Vec3& x) {
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double n1 = dims[a] - 1;
    double g = (x[a] - aabb.min[a]) / (aabb.max[a] - aabb.min[a]) * n1;
    g = std::clamp(g, 0.0, n1);
    int i = static_cast<int>(std::floor(g));
    i = std::min(i, dims[a] - 2);
    i0[a] = i;
    f[a] = g - i;
  }
  TrilinearStencil st;
  const uint32_t sx = 1, sy = static_cast<uint32_t>(dims[0]),
                 sz = static_cast<uint32_t>(dims[0]) * static_cast<uint32_t>(dims[1]);
  const uint32_t base = static_cast<uint32_t>(i0[0]) * sx + static_cast<uint32_t>(i0[1]) * sy +
                        static_cast<uint32_t>(i0[2]) * sz;
  for (int k = 0; k < 8; ++k) {
    const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
    st.voxel[k] = base + dx * sx + dy * sy + dz * sz;
    st.weight[k] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
  }
  return st;
}

std::vector<double> trilinear_sample(const VoxelGrid& grid, const Vec3& x) {
  std::vector<double> out(grid.channels);
  gather(grid.data.data(), grid.channels, trilinear_stencil(grid.dims, grid.aabb, x), out.data());
  return out;
}

void trilinear_backprop(const VoxelGrid& grid, const Vec3& x, std::span<const double> upstream,
                        std::span<float> grad) {
  if (static_cast<int>(upstream.size()) != grid.channels || grad.size() != grid.data.size()) {
    throw Error(ErrorKind::kInvalidArgument, "trilinear_backprop shape mismatch");
  }
  scatter(grad.data(), grid.channels, trilinear_stencil(grid.dims, grid.aabb, x), upstream.data());
}

std::array<double, kShCoeffs> sh_basis(const Vec3& d) {
  return {kY00,
          kY1 * d.y,
          kY1 * d.z,
          kY1 * d.x,
          kY2a * d.x * d.y,
          kY2a * d.y * d.z,
          kY20 * (3.0 * d.z * d.z - 1.0),
          kY2a * d.x * d.z,
          kY22 * (d.x * d.x - d.y * d.y)};
}

Vec3 sh_eval(std::span<const double> coeffs, const Vec3& d) {
  const auto b = sh_basis(d);
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    for (int k = 0; k < kShCoeffs; ++k) acc += coeffs[c * kShCoeffs + k] * b[k];
    out[c] = acc;
  }
  return out;
}

FieldParams FieldParams::create(const GridDims& dims, const Aabb& aabb, const FieldInit& init) {
  FieldParams p;
  p.dims = dims;
  p.aabb = aabb;
  p.density_scale = (dims[0] - 1) / aabb.extent().x;
  p.density = VoxelGrid(dims, aabb, 1, static_cast<float>(init.density));
  p.diffuse = VoxelGrid(dims, aabb, 3, static_cast<float>(init.diffuse));
  p.viewdep_sh = VoxelGrid(dims, aabb, kViewdepChannels, 0.0f);
  const float dc = static_cast<float>(std::log(init.viewdep / (1.0 - init.viewdep)) / kY00);
  for (size_t v = 0; v < p.viewdep_sh.voxel_count(); ++v) {
    float* c = p.viewdep_sh.voxel(v);
    c[0] = c[kShCoeffs] = c[2 * kShCoeffs] = dc;
  }
  return p;
}

void FieldParams::attach_palette(const Palette& pal, const FieldInit& init) {
  if (pal.n_p() < 1 || pal.n_p() > kMaxPalettes) {
    throw Error(ErrorKind::kInvalidArgument, "palette size must be in [1, 8]");
  }
  palette = pal;
  weight_logits = VoxelGrid(dims, aabb, pal.n_p(), 0.0f);
  offsets = VoxelGrid(dims, aabb, 3 * pal.n_p(), 0.0f);
  intensity = VoxelGrid(dims, aabb, 1, static_cast<float>(init.intensity));
}

std::vector<std::pair<std::string, VoxelGrid*>> FieldParams::named_grids() {
  std::vector<std::pair<std::string, VoxelGrid*>> out = {
      {"density", &density}, {"diffuse", &diffuse}, {"viewdep_sh", &viewdep_sh}};
  if (has_palette()) {
    out.emplace_back("weight_logits", &weight_logits);
    out.emplace_back("offsets", &offsets);
    out.emplace_back("intensity", &intensity);
  }
  return out;
}

std::vector<std::pair<std::string, const VoxelGrid*>> FieldParams::named_grids() const {
  std::vector<std::pair<std::string, const VoxelGrid*>> out;
  for (auto& [name, g] : const_cast<FieldParams*>(this)->named_grids()) out.emplace_back(name, g);
  return out;
}

Vec3 compose_color(const Vec3& s, double intensity, const double* omega, const Vec3* soft,
                   int n_p) {
  Vec3 acc;
  for (int i = 0; i < n_p; ++i) acc += soft[i] * omega[i];
  return s + acc * intensity;
}

PointSample query_point(const FieldParams& params, const Vec3& x, const Vec3& d, unsigned parts) {
  PointSample ps;
  ps.stencil = trilinear_stencil(params.dims, params.aabb, x);
  complete_point(params, ps, d, parts);
  return ps;
}

void complete_point(const FieldParams& params, PointSample& ps, const Vec3& d, unsigned parts) {
  if (parts & kEvalDensity) {
    gather(params.density.data.data(), 1, ps.stencil, &ps.raw_density);
    ps.sigma = params.density_scale * softplus(ps.raw_density);
  }
  if (parts & kEvalDiffuse) {
    double pre[3];
    gather(params.diffuse.data.data(), 3, ps.stencil, pre);
    ps.c_d = {sigmoid(pre[0]), sigmoid(pre[1]), sigmoid(pre[2])};
  }
  if (parts & (kEvalViewdep | kEvalPalette)) {
    double coeffs[kViewdepChannels];
    gather(params.viewdep_sh.data.data(), kViewdepChannels, ps.stencil, coeffs);
    ps.basis = sh_basis(d);
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int k = 0; k < kShCoeffs; ++k) acc += coeffs[c * kShCoeffs + k] * ps.basis[k];
      ps.s[c] = sigmoid(acc);
    }
  }
  if ((parts & (kEvalPalette | kEvalOmega)) && params.has_palette()) {
    const int n = params.n_p();
    ps.n_p = n;
    double logits[kMaxPalettes];
    gather(params.weight_logits.data.data(), n, ps.stencil, logits);
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      ps.omega[i] = std::exp(logits[i] - mx);
      sum += ps.omega[i];
    }
    for (int i = 0; i < n; ++i) ps.omega[i] /= sum;
    if (!(parts & kEvalPalette)) return;
    double raw_delta[3 * kMaxPalettes];
    gather(params.offsets.data.data(), 3 * n, ps.stencil, raw_delta);
    for (int i = 0; i < n; ++i) ps.delta[i] = {raw_delta[3 * i], raw_delta[3 * i + 1], raw_delta[3 * i + 2]};
    double ipre;
    gather(params.intensity.data.data(), 1, ps.stencil, &ipre);
    ps.intensity = sigmoid(ipre);
    Vec3 soft[kMaxPalettes];
    for (int i = 0; i < n; ++i) soft[i] = params.palette.current[i] + ps.delta[i];
    ps.unclamped = compose_color(ps.s, ps.intensity, ps.omega.data(), soft, n);
    ps.composed = clamp01(ps.unclamped);
  }
}

FieldGrads FieldGrads::like(const FieldParams& params, bool with_density, bool with_palette_heads) {
  FieldGrads g;
  if (with_density) g.density.assign(params.density.data.size(), 0.0f);
  g.diffuse.assign(params.diffuse.data.size(), 0.0f);
  g.viewdep_sh.assign(params.viewdep_sh.data.size(), 0.0f);
  if (with_palette_heads && params.has_palette()) {
    g.weight_logits.assign(params.weight_logits.data.size(), 0.0f);
    g.offsets.assign(params.offsets.data.size(), 0.0f);
    g.intensity.assign(params.intensity.data.size(), 0.0f);
    g.palette.assign(3 * static_cast<size_t>(params.n_p()), 0.0);
  }
  return g;
}

std::vector<uint32_t> FieldGrads::touched_rows() const {
  std::vector<uint32_t> rows;
  for (size_t v = 0; v < touched.size(); ++v) {
    if (touched[v]) rows.push_back(static_cast<uint32_t>(v));
  }
  return rows;
}

namespace {

template <typename F>
void for_each_block(FieldGrads& g, F&& f) {
  for (auto* v : {&g.density, &g.diffuse, &g.viewdep_sh, &g.weight_logits, &g.offsets, &g.intensity}) {
    if (!v->empty()) f(*v, v->size() / g.touched.size());
  }
}

}  // namespace

void FieldGrads::zero() {
  std::fill(palette.begin(), palette.end(), 0.0);
  if (!tracking()) {
    for (auto* v : {&density, &diffuse, &viewdep_sh, &weight_logits, &offsets, &intensity}) {
      std::fill(v->begin(), v->end(), 0.0f);
    }
    return;
  }
  const std::vector<uint32_t> rows = touched_rows();
  for_each_block(*this, [&](std::vector<float>& v, size_t width) {
    for (uint32_t r : rows) std::fill_n(v.begin() + r * width, width, 0.0f);
  });
  std::fill(touched.begin(), touched.end(), 0);
}

void FieldGrads::add(const FieldGrads& o) {
  auto add_vec = [](auto& a, const auto& b) {
    for (size_t i = 0; i < a.size() && i < b.size(); ++i) a[i] += b[i];
  };
  add_vec(palette, o.palette);
  if (!tracking() || !o.tracking()) {
    add_vec(density, o.density);
    add_vec(diffuse, o.diffuse);
    add_vec(viewdep_sh, o.viewdep_sh);
    add_vec(weight_logits, o.weight_logits);
    add_vec(offsets, o.offsets);
    add_vec(intensity, o.intensity);
    return;
  }
  const std::vector<uint32_t> rows = o.touched_rows();
  auto add_rows = [&](std::vector<float>& a, const std::vector<float>& b) {
    if (a.empty() || b.empty()) return;
    const size_t width = a.size() / touched.size();
    for (uint32_t r : rows) {
      for (size_t c = r * width; c < (r + 1) * width; ++c) a[c] += b[c];
    }
  };
  add_rows(density, o.density);
  add_rows(diffuse, o.diffuse);
  add_rows(viewdep_sh, o.viewdep_sh);
  add_rows(weight_logits, o.weight_logits);
  add_rows(offsets, o.offsets);
  add_rows(intensity, o.intensity);
  for (uint32_t r : rows) touched[r] = 1;
}

void backprop_point(const FieldParams& params, const PointSample& ps, const PointGrad& up,
                    FieldGrads& grads) {
  if (grads.tracking()) grads.mark(ps.stencil);
  const int n = ps.n_p;
  Vec3 ds = up.s;
  std::array<double, kMaxPalettes> domega = up.omega;
  std::array<Vec3, kMaxPalettes> ddelta = up.delta;
  double dintensity = up.intensity;

  if (n > 0 && (up.composed.x != 0 || up.composed.y != 0 || up.composed.z != 0)) {
    const Vec3 du{up.composed.x * clamp_pass(ps.unclamped.x),
                  up.composed.y * clamp_pass(ps.unclamped.y),
                  up.composed.z * clamp_pass(ps.unclamped.z)};
    ds += du;
    Vec3 mix;
    for (int i = 0; i < n; ++i) {
      const Vec3 soft = params.palette.current[i] + ps.delta[i];
      mix += soft * ps.omega[i];
      domega[i] += ps.intensity * dot(du, soft);
      const Vec3 dsoft = du * (ps.intensity * ps.omega[i]);
      ddelta[i] += dsoft;
      if (!grads.palette.empty()) {
        grads.palette[3 * i] += dsoft.x;
        grads.palette[3 * i + 1] += dsoft.y;
        grads.palette[3 * i + 2] += dsoft.z;
      }
    }
    dintensity += dot(du, mix);
  }

  if (!grads.density.empty() && up.sigma != 0.0) {
    const double draw = up.sigma * params.density_scale * sigmoid(ps.raw_density);
    scatter(grads.density.data(), 1, ps.stencil, &draw);
  }
  if (!grads.diffuse.empty() && (up.c_d.x != 0 || up.c_d.y != 0 || up.c_d.z != 0)) {
    double dpre[3];
    for (int c = 0; c < 3; ++c) dpre[c] = up.c_d[c] * ps.c_d[c] * (1.0 - ps.c_d[c]);
    scatter(grads.diffuse.data(), 3, ps.stencil, dpre);
  }
  if (!grads.viewdep_sh.empty() && (ds.x != 0 || ds.y != 0 || ds.z != 0)) {
    double dcoeff[kViewdepChannels];
    for (int c = 0; c < 3; ++c) {
      const double dpre = ds[c] * ps.s[c] * (1.0 - ps.s[c]);
      for (int k = 0; k < kShCoeffs; ++k) dcoeff[c * kShCoeffs + k] = dpre * ps.basis[k];
    }
    scatter(grads.viewdep_sh.data(), kViewdepChannels, ps.stencil, dcoeff);
  }
  if (n > 0 && !grads.weight_logits.empty()) {
    double inner = 0;
    for (int i = 0; i < n; ++i) inner += ps.omega[i] * domega[i];
    double dlogit[kMaxPalettes];
    bool any = false;
    for (int i = 0; i < n; ++i) {
      dlogit[i] = ps.omega[i] * (domega[i] - inner);
      any |= dlogit[i] != 0.0;
    }
    if (any) scatter(grads.weight_logits.data(), n, ps.stencil, dlogit);

    double dd[3 * kMaxPalettes];
    any = false;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        dd[3 * i + c] = ddelta[i][c];
        any |= dd[3 * i + c] != 0.0;
      }
    }
    if (any) scatter(grads.offsets.data(), 3 * n, ps.stencil, dd);

    if (dintensity != 0.0) {
      const double dipre = dintensity * ps.intensity * (1.0 - ps.intensity);
      scatter(grads.intensity.data(), 1, ps.stencil, &dipre);
    }
  }
}

}  // namespace palette_field
