#pragma once

#include <array>
#include <string>
#include <vector>

#include "palette_field/common.hpp"
#include "palette_field/image.hpp"

namespace palette_field {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  double t_near = 0;
  double t_far = 1;
};

// Pinhole camera, Blender-NeRF convention: right-handed, looking down -Z, +Y up.
struct Camera {
  int width = 1;
  int height = 1;
  double fov_x = 0.6911112;
  std::array<double, 16> cam_to_world{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  double focal() const;
  Vec3 position() const { return {cam_to_world[3], cam_to_world[7], cam_to_world[11]}; }
};

// Ray through pixel (px, py); the +0.5 pixel-center offset is applied here.
Ray camera_ray(const Camera& cam, double px, double py);

// Camera at `eye` looking at `target` with world up `up`.
Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                      double fov_x);

// Throws kBadPose unless the rotation block is orthonormal within 1e-4.
void validate_pose(const std::array<double, 16>& m);

// Clips [t_near, t_far] to the box. Returns false if the ray misses it.
bool clip_to_aabb(Ray& ray, const Aabb& box);

struct SceneDataset {
  std::vector<Camera> cameras;
  std::vector<Image> images;  // RGB, one per camera
  double near = 2.0;
  double far = 6.0;
  Aabb scene_aabb{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  Vec3 background{1, 1, 1};

  int width() const { return images.empty() ? 0 : images.front().width; }
  int height() const { return images.empty() ? 0 : images.front().height; }
  size_t pixel_count() const { return images.size() * static_cast<size_t>(width()) * height(); }

  // Ray for the flat pixel index (view-major, then row-major), bounded by near/far.
  Ray pixel_ray(size_t flat_index) const;
  Vec3 pixel_color(size_t flat_index) const;
};

// Reads `transforms_<split>.json` (falling back to `transforms.json` for "train") plus the
// referenced PNGs. Optional manifest keys: near, far, aabb, background.
SceneDataset load_blender_dataset(const std::string& dir, const std::string& split = "train");

// Writes PNGs and the manifest. `manifest_name` defaults to transforms.json.
void save_blender_dataset(const SceneDataset& dataset, const std::string& dir,
                          const std::string& manifest_name = "transforms.json",
                          const std::string& image_prefix = "r_");

}  // namespace palette_field
