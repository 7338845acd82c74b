#include <doctest.h>

#include "palette_field/palette.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace palette_field;
using palette_field::testing::TempDir;

using palette_field::testing::random_palette;
using palette_field::testing::reconstruct;

TEST_CASE("blending weights reconstruct in-hull samples with simplex rows") {
  const palette_field::testing::BlendingCheck c = palette_field::testing::check_blending_weights(100);
  CHECK(c.worst_reconstruction <= 1e-5);
  CHECK(c.worst_simplex <= 1e-5);
}

TEST_CASE("out-of-hull samples reconstruct their closest hull point") {
  CounterRng rng(42, 1);
  const std::vector<Vec3> pal = random_palette(rng, 5);
  const ConvexHull3 hull = convex_hull_3d(pal);
  const BlendingWeights bw(pal);
  int outside = 0;
  for (int s = 0; s < 200; ++s) {
    const Vec3 x{rng.uniform() * 2 - 0.5, rng.uniform() * 2 - 0.5, rng.uniform() * 2 - 0.5};
    if (hull.max_signed_distance(x) <= 1e-6) continue;
    ++outside;
    const std::vector<double> w = bw(x);
    Vec3 r;
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(w[i] >= 0.0);
      r += pal[i] * w[i];
      sum += w[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(norm(r - closest_point_on_hull(hull, x)) < 1e-9);
  }
  CHECK(outside > 50);
}

TEST_CASE("simplex least squares is no worse than a dense simplex grid") {
  CounterRng rng(9, 9);
  const int steps = 300;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pal(3);
    for (Vec3& c : pal) c = {rng.uniform(), rng.uniform(), rng.uniform()};
    const Vec3 x{rng.uniform(), rng.uniform(), rng.uniform()};
    const std::vector<double> w = simplex_least_squares(pal, x);
    Vec3 r;
    double sum = 0;
    for (int i = 0; i < 3; ++i) {
      CHECK(w[i] >= 0.0);
      r += pal[i] * w[i];
      sum += w[i];
    }
    CHECK(sum == doctest::Approx(1.0));
    double best = 1e300;
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; i + j <= steps; ++j) {
        const double a = double(i) / steps, b = double(j) / steps;
        best = std::min(best, squared_norm(pal[0] * a + pal[1] * b + pal[2] * (1 - a - b) - x));
      }
    }
    CHECK(squared_norm(r - x) <= best + 1e-12);
  }
}

TEST_CASE("clustering finds color modes and ignores sparse tails") {
  const std::vector<Vec3> centers = {normalized({1, 0.1, 0.1}), normalized({0.1, 1, 0.2}),
                                     normalized({0.2, 0.2, 1}), normalized({0.8, 0.8, 0.1})};
  CounterRng rng(4, 4);
  std::vector<Vec3> colors;
  for (const Vec3& c : centers) {
    for (int i = 0; i < 3000; ++i) {
      colors.push_back(normalized(c + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.004));
    }
  }
  // A highlight streak from the first center toward white: long but thin.
  for (int i = 0; i < 400; ++i) colors.push_back(normalized(centers[0] + Vec3{1, 1, 1} * (rng.uniform() * 0.8)));
  const std::vector<Vec3> clusters = cluster_colors(colors, 0.02, 0.002);
  REQUIRE(clusters.size() >= 4);
  for (const Vec3& c : centers) {
    double best = 1e9;
    for (const Vec3& k : clusters) best = std::min(best, norm(k - c));
    CHECK(best < 0.01);
  }
}

TEST_CASE("simplification keeps every input point enclosed") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(seed, 77);
    std::vector<Vec3> pts(60);
    for (Vec3& p : pts) p = normalized(Vec3{rng.uniform() + 0.05, rng.uniform() + 0.05, rng.uniform() + 0.05});
    const ConvexHull3 hull = convex_hull_3d(pts);
    const SimplifiedHull s = simplify_hull(hull, 4);
    REQUIRE(s.vertices.size() == 4);
    CHECK_FALSE(s.shortfall);
    const ConvexHull3 outer = convex_hull_3d(s.vertices);
    for (const Vec3& p : pts) CHECK(outer.max_signed_distance(p) <= 1e-6);
    for (size_t i = 1; i < s.volume_history.size(); ++i) {
      CHECK(s.volume_history[i] >= s.volume_history[i - 1] - 1e-12);
    }
  }
}

TEST_CASE("small hulls report a shortfall") {
  const ConvexHull3 hull = convex_hull_3d({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const SimplifiedHull s = simplify_hull(hull, 6);
  CHECK(s.shortfall);
  CHECK(s.vertices.size() == 4);
}

TEST_CASE("valid pixels respect the opacity threshold and intensity floor") {
  SceneDataset ds;
  ds.cameras.resize(1);
  Image img(4, 1, 3);
  img.data = {0.5f, 0.0f, 0.0f, 0.01f, 0.01f, 0.01f, 0.0f, 0.6f, 0.8f, 0.3f, 0.3f, 0.3f};
  ds.images.push_back(img);
  Image op(4, 1, 1);
  op.data = {0.9f, 0.9f, 0.9f, 0.2f};
  ExtractOptions opts;
  const ColorSampleSet s = collect_valid_pixels(ds, {op}, opts);
  REQUIRE(s.size() == 2);
  CHECK(s.pixel == std::vector<uint32_t>{0, 2});
  CHECK(norm(s.colors[1] - Vec3{0, 0.6, 0.8}) < 1e-6);
  CHECK(s.intensities[1] == doctest::Approx(1.0));
  op.data = {0.1f, 0.1f, 0.1f, 0.1f};
  try {
    collect_valid_pixels(ds, {op}, opts);
    FAIL("expected kEmptyForeground");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyForeground);
  }
}

TEST_CASE("palette and weight files round trip bit-exact") {
  TempDir dir;
  Palette p;
  CounterRng rng(1, 2);
  for (int i = 0; i < 5; ++i) {
    p.current.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    p.extracted.push_back({rng.normal(), rng.normal(), 1.0 / 3.0});
  }
  p.intensity_floor = 0.07;
  p.opacity_threshold = 0.45;
  p.mean_intensity = 0.8123456789012345;
  write_palette_json(p, dir / "p.json");
  CHECK(read_palette_json(dir / "p.json") == p);

  SupervisionWeights w;
  w.n_p = 5;
  for (int i = 0; i < 35; ++i) w.rows.push_back(static_cast<float>(rng.uniform()));
  write_weights(w, dir / "w.pltw");
  const SupervisionWeights back = read_weights(dir / "w.pltw");
  CHECK(back.n_p == 5);
  CHECK(back.rows == w.rows);
  CHECK_THROWS_AS(read_weights(dir / "p.json"), Error);
  CHECK_THROWS_AS(read_palette_json(dir / "missing.json"), Error);
}

TEST_CASE("display colors rescale by the mean intensity") {
  Palette p;
  p.current = {normalized({1, 1, 0}), {1, 1, 1}};
  p.mean_intensity = 0.5;
  const std::vector<Vec3> d = p.display_colors();
  CHECK(d[0].x == doctest::Approx(0.5 / std::sqrt(2.0)));
  CHECK(d[1] == Vec3{0.5, 0.5, 0.5});
  p.mean_intensity = 4;
  CHECK(p.display_colors()[1] == Vec3{1, 1, 1});
}
