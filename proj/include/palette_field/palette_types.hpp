#pragma once

#include <vector>

#include "palette_field/common.hpp"

namespace palette_field {

constexpr int kMaxPalettes = 8;

// Palette colors live in L2-normalized RGB space; `current` is optimized during
// decomposition, `extracted` is the frozen extraction snapshot.
struct Palette {
  std::vector<Vec3> current;
  std::vector<Vec3> extracted;
  double intensity_floor = 0.05;
  double opacity_threshold = 0.5;
  // Mean L2 intensity of the extraction samples; scales normalized colors for display.
  double mean_intensity = 1.0;

  int n_p() const { return static_cast<int>(current.size()); }
  bool empty() const { return current.empty(); }

  // Denormalized presentation colors, clamped to [0,1]^3.
  std::vector<Vec3> display_colors() const;
  std::vector<Vec3> display_colors(const std::vector<Vec3>& colors) const;

  bool operator==(const Palette& o) const {
    return current == o.current && extracted == o.extracted &&
           intensity_floor == o.intensity_floor && opacity_threshold == o.opacity_threshold &&
           mean_intensity == o.mean_intensity;
  }
};

}  // namespace palette_field
