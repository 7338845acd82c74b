#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "palette_field/field.hpp"
#include "palette_field/hull.hpp"
#include "palette_field/image.hpp"
#include "palette_field/palette_types.hpp"
#include "palette_field/scene.hpp"

namespace palette_field {

struct ColorSampleSet {
  std::vector<Vec3> colors;  // unit L2 norm
  std::vector<double> intensities;
  std::vector<uint32_t> view;
  std::vector<uint32_t> pixel;

  size_t size() const { return colors.size(); }
};

struct ExtractOptions {
  int n_p = 4;
  double opacity_threshold = 0.5;
  double intensity_floor = 0.05;
  size_t max_samples = 100000;
  // Edge length of the color-space cells used for clustering normalized colors.
  double cluster_cell = 0.02;
  // Cells holding fewer than this fraction of the samples are treated as noise.
  double min_cluster_fraction = 0.002;
  int render_samples = 128;
  uint64_t seed = 0;
  int threads = 0;
};

// Keeps pixels with opacity >= threshold and color norm >= floor, L2-normalized.
// Throws kEmptyForeground when nothing survives. Subsampling is uniform and seeded.
ColorSampleSet collect_valid_pixels(const SceneDataset& dataset,
                                    const std::vector<Image>& opacity_maps,
                                    const ExtractOptions& opts, bool subsample = true);

// Grid-cell clustering. Cells holding at least min_fraction of the samples are linked to
// their 26 neighbors; each connected group is represented by the sample mean over its
// densest cell and that cell's populated neighbors (a mode, so sparse highlight or
// silhouette tails do not drag it). Fewer than `min_clusters` groups falls back to the
// populated cell means. Output is ordered by smallest cell key.
std::vector<Vec3> cluster_colors(const std::vector<Vec3>& colors, double cell,
                                 double min_fraction, int min_clusters = 4);

struct SimplifiedHull {
  std::vector<Vec3> vertices;
  bool shortfall = false;               // hull had fewer than N_p vertices
  std::vector<double> volume_history;  // enclosing volume after each step, first = input
};

// Greedy edge collapse: each step merges the edge whose replacement vertex adds the least
// volume while keeping the current hull enclosed. Below four vertices, nearest pairs merge.
SimplifiedHull simplify_hull(const ConvexHull3& hull, int n_p);

// Row-major N x n_p simplex weights.
struct SupervisionWeights {
  int n_p = 0;
  std::vector<float> rows;

  size_t size() const { return n_p ? rows.size() / n_p : 0; }
  const float* row(size_t r) const { return rows.data() + r * n_p; }
};

// Generalized barycentric coordinates over a star triangulation from the palette
// centroid. Samples outside the palette hull are projected onto it first.
class BlendingWeights {
 public:
  explicit BlendingWeights(const std::vector<Vec3>& palette);
  std::vector<double> operator()(const Vec3& sample) const;

 private:
  struct Tet {
    std::array<int, 3> face;
    std::array<double, 9> inv;  // maps (x - centroid) to face barycentrics
  };
  std::vector<Vec3> palette_;
  Vec3 centroid_;
  bool use_hull_ = false;
  ConvexHull3 hull_;
  std::vector<Tet> tets_;
};

SupervisionWeights blending_weights(const std::vector<Vec3>& palette,
                                    const std::vector<Vec3>& samples, int threads = 0);

// Simplex-constrained least squares min ||sum w_i P_i - x|| by support enumeration.
std::vector<double> simplex_least_squares(const std::vector<Vec3>& palette, const Vec3& x);

struct Extraction {
  Palette palette;
  // One row per training pixel in (view, y, x) order; rows of unsupervised pixels are zero.
  SupervisionWeights weights;
  size_t sample_count = 0;
  size_t cluster_count = 0;
  int hull_vertex_count = 0;
  bool shortfall = false;
};

// Renders opacity with the stage-1 field, collects samples, hulls the clustered
// colors, simplifies to N_p and computes per-pixel supervision.
Extraction extract_palettes(const SceneDataset& dataset, const FieldParams& stage1,
                            const ExtractOptions& opts);

nlohmann::json palette_to_json(const Palette& p);
Palette palette_from_json(const nlohmann::json& j);
void write_palette_json(const Palette& p, const std::filesystem::path& path);
Palette read_palette_json(const std::filesystem::path& path);

void write_weights(const SupervisionWeights& w, const std::filesystem::path& path);
SupervisionWeights read_weights(const std::filesystem::path& path);

}  // namespace palette_field
