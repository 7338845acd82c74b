#pragma once

#include <array>
#include <optional>
#include <vector>

#include <json.hpp>

#include "palette_field/color.hpp"
#include "palette_field/common.hpp"
#include "palette_field/field.hpp"

namespace palette_field {

struct PaletteEdit {
  int index = 0;
  double dh = 0, ds = 0, dv = 0;
  // When set, the HSV delta is derived from (target - current palette color).
  std::optional<Vec3> target;
};

struct AffineColorTransform {
  std::array<double, 9> a{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  Vec3 b;

  Vec3 apply(const Vec3& c) const {
    return {a[0] * c.x + a[1] * c.y + a[2] * c.z + b.x, a[3] * c.x + a[4] * c.y + a[5] * c.z + b.y,
            a[6] * c.x + a[7] * c.y + a[8] * c.z + b.z};
  }
};

// Non-destructive appearance edit applied at render time.
struct EditState {
  std::vector<PaletteEdit> palette_edits;
  double k_s = 1.0;
  double k_delta = 1.0;
  std::optional<std::vector<AffineColorTransform>> style;
};

// Throws kInvalidArgument for a palette index >= n_p, negative scales or a style
// transform count different from n_p.
void validate_edit(const EditState& edit, int n_p);

EditState edit_from_json(const nlohmann::json& j);
nlohmann::json edit_to_json(const EditState& edit);

// Per-palette HSV deltas with hue normalized into [0, 360), ready for per-point use.
struct ResolvedEdit {
  int n_p = 0;
  std::array<Hsv, kMaxPalettes> delta{};
  std::array<bool, kMaxPalettes> shifted{};
  double k_s = 1.0;
  double k_delta = 1.0;
  bool has_style = false;
  std::array<AffineColorTransform, kMaxPalettes> style{};
};

// `baked` carries shifts already recorded in an exported checkpoint; they add to the
// session's deltas before normalization.
ResolvedEdit resolve_edit(const EditState& edit, const Palette& palette,
                          const std::vector<PaletteEdit>& baked = {});

// Shifts a soft color by an HSV delta (hue wraps, S and V clamp to [0,1]).
Vec3 shift_hsv(const Vec3& rgb, const Hsv& delta);

// Edited composition at one fully evaluated point.
Vec3 apply_edit(const FieldParams& params, const PointSample& ps, const ResolvedEdit& edit);

// Palette colors after the HSV shift (display space is the caller's concern).
std::vector<Vec3> edited_palette(const Palette& palette, const ResolvedEdit& edit);

// Export: palette.current becomes the edited palette and `extra["recolor"]` records the
// pre-edit palette plus the resolved shifts, so a reload can reproduce the edited renders.
void bake_palette_edit(FieldParams& params, nlohmann::json& extra, const ResolvedEdit& edit);
// Load: restores the pre-edit palette from a recolor record and returns its shifts (to be
// passed to resolve_edit as `baked`). No record: no change, empty result.
std::vector<PaletteEdit> unbake_palette_edit(FieldParams& params, const nlohmann::json& extra);

struct StyleCorrespondence {
  Vec3 point;
  Vec3 direction{0, 0, -1};
  Vec3 target;
};

struct StyleFit {
  std::vector<AffineColorTransform> transforms;
  bool diagonal_fallback = false;
};

// Ridge-regularized (toward identity) least-squares fit of one affine color map per palette.
StyleFit fit_style_transforms(const std::vector<StyleCorrespondence>& correspondences,
                              const FieldParams& params, double ridge = 1e-3);

// Opacity accumulated across a short segment through `x` along `d`, used to check that
// a correspondence sits on a surface.
double local_opacity(const FieldParams& params, const Vec3& x, const Vec3& d);

}  // namespace palette_field
