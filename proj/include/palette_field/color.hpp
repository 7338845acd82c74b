#pragma once

#include "palette_field/common.hpp"

namespace palette_field {

// Hexcone HSV: h in degrees [0, 360), s and v in [0, 1] for in-gamut input.
// Achromatic colors get hue 0.
struct Hsv {
  double h = 0, s = 0, v = 0;
};

Hsv rgb_to_hsv(const Vec3& rgb);
Vec3 hsv_to_rgb(const Hsv& hsv);

// Maps any hue in degrees into [0, 360).
double wrap_hue(double h);

}  // namespace palette_field
