#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "palette_field/common.hpp"
#include "palette_field/palette_types.hpp"

namespace palette_field {

constexpr int kShCoeffs = 9;
constexpr int kViewdepChannels = 3 * kShCoeffs;

using GridDims = std::array<int, 3>;

// Dense grid of `channels` f32 values per voxel, voxels stored x-fastest, channels interleaved.
struct VoxelGrid {
  GridDims dims{2, 2, 2};
  Aabb aabb;
  int channels = 1;
  std::vector<float> data;

  VoxelGrid() = default;
  VoxelGrid(const GridDims& d, const Aabb& box, int c, float fill = 0.0f);

  size_t voxel_count() const { return static_cast<size_t>(dims[0]) * dims[1] * dims[2]; }
  size_t voxel_index(int ix, int iy, int iz) const {
    return static_cast<size_t>(ix) + static_cast<size_t>(dims[0]) * (iy + static_cast<size_t>(dims[1]) * iz);
  }
  Vec3 voxel_position(int ix, int iy, int iz) const;
  float* voxel(size_t v) { return data.data() + v * channels; }
  const float* voxel(size_t v) const { return data.data() + v * channels; }
};

// The 8 enclosing corners of a point and their trilinear weights. Corner k has offsets
// (k & 1, (k >> 1) & 1, (k >> 2) & 1). Grids sharing dims/aabb share stencils.
struct TrilinearStencil {
  std::array<uint32_t, 8> voxel{};
  std::array<double, 8> weight{};
};

// Points outside the box are clamped to the boundary.
TrilinearStencil trilinear_stencil(const GridDims& dims, const Aabb& aabb, const Vec3& x);

inline void gather(const float* data, int channels, const TrilinearStencil& st, double* out) {
  for (int c = 0; c < channels; ++c) out[c] = 0.0;
  for (int k = 0; k < 8; ++k) {
    const double w = st.weight[k];
    if (w == 0.0) continue;
    const float* v = data + static_cast<size_t>(st.voxel[k]) * channels;
    for (int c = 0; c < channels; ++c) out[c] += w * v[c];
  }
}

inline void scatter(float* grad, int channels, const TrilinearStencil& st, const double* upstream) {
  for (int k = 0; k < 8; ++k) {
    const double w = st.weight[k];
    if (w == 0.0) continue;
    float* g = grad + static_cast<size_t>(st.voxel[k]) * channels;
    for (int c = 0; c < channels; ++c) g[c] += static_cast<float>(w * upstream[c]);
  }
}

std::vector<double> trilinear_sample(const VoxelGrid& grid, const Vec3& x);

// Adds the upstream gradient of a trilinear_sample(grid, x) call into `grad`
// (same layout as grid.data).
void trilinear_backprop(const VoxelGrid& grid, const Vec3& x, std::span<const double> upstream,
                        std::span<float> grad);

// Real spherical harmonics up to degree 2 (no Condon-Shortley phase), ordered
// (0,0) (1,-1) (1,0) (1,1) (2,-2) (2,-1) (2,0) (2,1) (2,2).
std::array<double, kShCoeffs> sh_basis(const Vec3& d);

// coeffs: 9 per channel, channel-major. Returns the pre-activation RGB.
Vec3 sh_eval(std::span<const double> coeffs, const Vec3& d);

struct FieldInit {
  double density = -6.0;         // raw, before softplus
  double diffuse = 0.0;          // logit
  double viewdep = 0.05;         // initial s value
  double intensity = 0.0;        // logit
};

struct FieldParams {
  GridDims dims{64, 64, 64};
  Aabb aabb;
  // sigma = density_scale * softplus(raw); defaults to voxels per scene unit.
  double density_scale = 1.0;

  VoxelGrid density;        // 1
  VoxelGrid diffuse;        // 3, pre-sigmoid c_d
  VoxelGrid viewdep_sh;     // 27, SH coefficients of s before sigmoid
  VoxelGrid weight_logits;  // N_p, pre-softmax omega
  VoxelGrid offsets;        // 3 N_p, raw delta
  VoxelGrid intensity;      // 1, pre-sigmoid I
  Palette palette;

  static FieldParams create(const GridDims& dims, const Aabb& aabb, const FieldInit& init = {});

  int n_p() const { return palette.n_p(); }
  bool has_palette() const { return !palette.empty(); }

  // Allocates the palette heads (uniform omega, zero delta, I = sigmoid(init.intensity)).
  void attach_palette(const Palette& p, const FieldInit& init = {});

  // Named grids in checkpoint order.
  std::vector<std::pair<std::string, VoxelGrid*>> named_grids();
  std::vector<std::pair<std::string, const VoxelGrid*>> named_grids() const;
};

enum EvalParts : unsigned {
  kEvalDensity = 1u,
  kEvalDiffuse = 2u,
  kEvalViewdep = 4u,
  kEvalPalette = 8u,  // omega, delta, intensity and the composed color
  kEvalAll = 15u,
  kEvalOmega = 16u,  // blending weights only
};

struct PointSample {
  int n_p = 0;
  TrilinearStencil stencil;
  std::array<double, kShCoeffs> basis{};
  double raw_density = 0;
  double sigma = 0;
  Vec3 c_d;
  Vec3 s;
  std::array<double, kMaxPalettes> omega{};
  std::array<Vec3, kMaxPalettes> delta{};
  double intensity = 0;
  Vec3 unclamped;  // s + I sum omega_i (P_i + delta_i)
  Vec3 composed;   // clamp(unclamped, 0, 1)
};

// Composition of view-dependent residual and palette bases; `soft` holds P_i + delta_i.
Vec3 compose_color(const Vec3& s, double intensity, const double* omega, const Vec3* soft, int n_p);

PointSample query_point(const FieldParams& params, const Vec3& x, const Vec3& d,
                        unsigned parts = kEvalAll);

// Evaluates `parts` into a sample whose stencil is already set.
void complete_point(const FieldParams& params, PointSample& ps, const Vec3& d, unsigned parts);

// Upstream gradient on a PointSample's outputs.
struct PointGrad {
  double sigma = 0;
  Vec3 c_d;
  Vec3 s;  // direct, in addition to the path through `composed`
  std::array<double, kMaxPalettes> omega{};
  std::array<Vec3, kMaxPalettes> delta{};
  double intensity = 0;
  Vec3 composed;
};

// Gradient buffers matching the trainable parts of FieldParams. Empty vectors are skipped.
struct FieldGrads {
  std::vector<float> density, diffuse, viewdep_sh, weight_logits, offsets, intensity;
  std::vector<double> palette;  // 3 N_p
  // Per-voxel flags set by backprop_point once tracking is on; zero() and add() then only
  // visit flagged voxels. Every voxel with a nonzero gradient is flagged.
  std::vector<uint8_t> touched;

  static FieldGrads like(const FieldParams& params, bool with_density, bool with_palette_heads);
  void track_touched(size_t voxel_count) { touched.assign(voxel_count, 0); }
  bool tracking() const { return !touched.empty(); }
  void mark(const TrilinearStencil& st) {
    for (int k = 0; k < 8; ++k) {
      if (st.weight[k] != 0.0) touched[st.voxel[k]] = 1;
    }
  }
  // Flagged voxels in ascending order.
  std::vector<uint32_t> touched_rows() const;
  void zero();
  void add(const FieldGrads& other);
};

// Chains `up` through activations and the composition into grid/palette gradients.
void backprop_point(const FieldParams& params, const PointSample& sample, const PointGrad& up,
                    FieldGrads& grads);

}  // namespace palette_field
