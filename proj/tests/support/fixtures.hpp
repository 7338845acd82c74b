#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "palette_field/field.hpp"

namespace palette_field::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "pftest-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// A solid ball of radius 0.6 in [-1,1]^3 whose blending weights pick palette 0 for
// x < -0.2, palette 1 for x > 0.2 and palette 2 in between (one-hot up to softmax).
inline FieldParams toy_field(int res = 16) {
  FieldParams p = FieldParams::create({res, res, res}, Aabb{{-1, -1, -1}, {1, 1, 1}});
  Palette pal;
  pal.current = {{0.8, 0.2, 0.2}, {0.2, 0.3, 0.85}, {0.3, 0.75, 0.3}};
  pal.extracted = pal.current;
  p.attach_palette(pal);
  for (int z = 0; z < res; ++z) {
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        const Vec3 q = p.density.voxel_position(x, y, z);
        const size_t v = p.density.voxel_index(x, y, z);
        p.density.data[v] = norm(q) < 0.6 ? 4.0f : -8.0f;
        const int region = q.x < -0.2 ? 0 : (q.x > 0.2 ? 1 : 2);
        float* w = p.weight_logits.voxel(v);
        for (int i = 0; i < 3; ++i) w[i] = i == region ? 8.0f : -8.0f;
        p.diffuse.voxel(v)[0] = static_cast<float>(q.y);
        p.intensity.data[v] = 1.0f;
      }
    }
  }
  return p;
}

}  // namespace palette_field::testing
