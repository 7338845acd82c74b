#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "palette_field/field.hpp"
#include "palette_field/scene.hpp"

namespace palette_field {

struct SyntheticShape {
  enum class Kind { kBox, kSphere };
  Kind kind = Kind::kBox;
  Vec3 center;
  Vec3 half_extent{0.3, 0.3, 0.3};  // boxes
  double radius = 0.3;              // spheres
  int color = 0;                    // index into base_colors

  double sdf(const Vec3& p) const;
  Vec3 normal(const Vec3& p) const;
};

struct SyntheticSceneSpec {
  std::vector<Vec3> base_colors;
  std::vector<SyntheticShape> layout;
  Vec3 light_dir{0.4, 0.5, 0.75};
  double specular_strength = 0.1;
  double shininess = 8.0;
  double ambient = 0.35;
  // false renders every surface point with its base color.
  bool shading = true;
  int n_views = 20;
  int held_out_views = 4;
  int image_size = 64;
  uint64_t rng_seed = 7;
  Aabb aabb;
  int grid_resolution = 64;  // sets the soft edge width (about one voxel)
  double sigma_max = 150.0;
  double camera_radius = 4.0;
  int render_samples = 256;
};

// Four-color scene used by the end-to-end checks.
SyntheticSceneSpec default_synthetic_spec(uint64_t seed = 7);

// Throws kSpec on invalid specs.
void validate_spec(const SyntheticSceneSpec& spec);

struct GroundTruth {
  std::vector<Vec3> base_colors;
  std::vector<Vec3> normalized_colors;
  GridDims dims{};
  std::vector<int> region;       // per voxel, -1 for empty space
  std::vector<float> density;    // per voxel sigma
  uint64_t seed = 0;
  nlohmann::json spec;
};

struct SyntheticScene {
  SceneDataset train;
  SceneDataset test;
  GroundTruth truth;
};

nlohmann::json spec_to_json(const SyntheticSceneSpec& spec);
// Keys missing from `j` keep their value in `base`.
SyntheticSceneSpec spec_from_json(const nlohmann::json& j, SyntheticSceneSpec base);
// Missing keys fall back to default_synthetic_spec(rng_seed).
SyntheticSceneSpec spec_from_json(const nlohmann::json& j);

// Analytic density and shaded color at x seen along d.
void synthetic_field(const SyntheticSceneSpec& spec, const Vec3& x, const Vec3& d, double& sigma,
                     Vec3& color);

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, int threads = 0);

// transforms.json (train), transforms_test.json (held out) and ground_truth.json.
void write_synthetic_scene(const SyntheticScene& scene, const std::filesystem::path& dir);
GroundTruth read_ground_truth(const std::filesystem::path& dir);

}  // namespace palette_field
