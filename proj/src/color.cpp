#include "palette_field/color.hpp"

namespace palette_field {

double wrap_hue(double h) {
  double w = std::fmod(h, 360.0);
  if (w < 0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

Hsv rgb_to_hsv(const Vec3& rgb) {
  const double mx = std::max({rgb.x, rgb.y, rgb.z});
  const double mn = std::min({rgb.x, rgb.y, rgb.z});
  const double c = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? c / mx : 0.0;
  if (c <= 0) return out;
  double h;
  if (mx == rgb.x) {
    h = (rgb.y - rgb.z) / c;
  } else if (mx == rgb.y) {
    h = (rgb.z - rgb.x) / c + 2.0;
  } else {
    h = (rgb.x - rgb.y) / c + 4.0;
  }
  out.h = wrap_hue(h * 60.0);
  return out;
}

Vec3 hsv_to_rgb(const Hsv& hsv) {
  const double c = hsv.v * hsv.s;
  const double hp = wrap_hue(hsv.h) / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  const double m = hsv.v - c;
  Vec3 r;
  switch (static_cast<int>(hp)) {
    case 0: r = {c, x, 0}; break;
    case 1: r = {x, c, 0}; break;
    case 2: r = {0, c, x}; break;
    case 3: r = {0, x, c}; break;
    case 4: r = {x, 0, c}; break;
    default: r = {c, 0, x}; break;
  }
  return {r.x + m, r.y + m, r.z + m};
}

}  // namespace palette_field
