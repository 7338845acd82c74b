#include <doctest.h>

#include <cstring>
#include <fstream>

#include "palette_field/synthetic.hpp"
#include "palette_field/train.hpp"
#include "support/fixtures.hpp"

using namespace palette_field;

namespace {

const SyntheticScene& tiny_scene() {
  static const SyntheticScene scene = [] {
    SyntheticSceneSpec spec = default_synthetic_spec(7);
    spec.image_size = 16;
    spec.n_views = 6;
    spec.held_out_views = 2;
    spec.grid_resolution = 16;
    spec.render_samples = 64;
    return generate_synthetic_scene(spec, 1);
  }();
  return scene;
}

TrainConfig tiny_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_rays = 256;
  c.samples = 24;
  c.grid = {12, 12, 12};
  c.palette_freeze_epochs = std::min(epochs, 2);
  c.sm_delay_epochs = std::min(epochs, 1);
  c.threads = 1;
  return c;
}

Palette truth_palette() {
  Palette p;
  p.current = tiny_scene().truth.normalized_colors;
  p.extracted = p.current;
  return p;
}

SupervisionWeights truth_supervision(const SceneDataset& ds, const Palette& pal) {
  std::vector<Vec3> colors(ds.pixel_count());
  for (size_t i = 0; i < colors.size(); ++i) {
    const Vec3 c = ds.pixel_color(i);
    colors[i] = norm(c) > 1e-6 ? normalized(c) : pal.current[0];
  }
  return blending_weights(pal.current, colors, 1);
}

bool bit_equal(const FieldParams& a, const FieldParams& b) {
  auto ga = a.named_grids();
  auto gb = b.named_grids();
  if (ga.size() != gb.size()) return false;
  for (size_t i = 0; i < ga.size(); ++i) {
    const auto& x = ga[i].second->data;
    const auto& y = gb[i].second->data;
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return a.palette == b.palette;
}

}  // namespace

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.epochs = 12;
  c.seed = 99;
  c.weights.sp = 0.5;
  c.grid = {8, 9, 10};
  c.masked_adam = false;
  c.palette_freeze_epochs = 3;
  c.sm_delay_epochs = 2;
  const nlohmann::json j = train_config_to_json(c);
  const TrainConfig back = train_config_from_json(j);
  CHECK(train_config_to_json(back) == j);
  CHECK(back.grid == GridDims{8, 9, 10});
  CHECK(back.weights.sp == 0.5);

  palette_field::testing::TempDir dir;
  std::ofstream(dir / "cfg.json") << j.dump();
  CHECK(train_config_to_json(read_train_config(dir / "cfg.json")) == j);

  TrainConfig bad = c;
  bad.palette_freeze_epochs = 13;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.batch_rays = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.grid = {1, 8, 8};
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", -1}}), Error);
}

TEST_CASE("schedule flags") {
  TrainConfig c;
  CHECK(decomposition_flags(c, 0).weight_active);
  CHECK_FALSE(decomposition_flags(c, 0).sm_active);
  CHECK(decomposition_flags(c, 29).weight_active);
  CHECK_FALSE(decomposition_flags(c, 29).sm_active);
  CHECK(decomposition_flags(c, 30).sm_active);
  CHECK(decomposition_flags(c, 99).weight_active);
  CHECK_FALSE(decomposition_flags(c, 100).weight_active);
}

TEST_CASE("zero epochs return the initialization") {
  const SceneDataset& ds = tiny_scene().train;
  const TrainConfig c = tiny_config(0);
  const TrainResult a = train_geometry(ds, c);
  const FieldParams init = FieldParams::create(c.grid, ds.scene_aabb, c.init);
  CHECK(bit_equal(a.params, init));
  CHECK(a.history.empty());
  const Palette pal = truth_palette();
  const TrainResult b = train_decomposition(ds, a.params, pal, truth_supervision(ds, pal), c);
  CHECK(b.params.palette.current == pal.current);
}

TEST_CASE("geometry training reduces the loss and is deterministic") {
  const SceneDataset& ds = tiny_scene().train;
  TrainConfig c = tiny_config(6);
  const TrainResult a = train_geometry(ds, c);
  REQUIRE(a.history.size() == 6);
  CHECK(a.history.back().recon < 0.5 * a.history.front().recon);
  const TrainResult b = train_geometry(ds, c);
  CHECK(bit_equal(a.params, b.params));
  c.seed = 1;
  CHECK_FALSE(bit_equal(train_geometry(ds, c).params, a.params));
}

TEST_CASE("decomposition schedule gates the palette, weight and smoothness terms") {
  const SceneDataset& ds = tiny_scene().train;
  TrainConfig c = tiny_config(4);
  const FieldParams stage1 = train_geometry(ds, c).params;
  c.epochs = 5;
  c.palette_freeze_epochs = 2;
  c.sm_delay_epochs = 1;
  const Palette pal = truth_palette();
  std::vector<std::vector<Vec3>> palettes;
  std::vector<float> density_after;
  const TrainResult r = train_decomposition(ds, stage1, pal, truth_supervision(ds, pal), c,
                                            [&](int, const FieldParams& p, const LossBreakdown&) {
                                              palettes.push_back(p.palette.current);
                                            });
  REQUIRE(r.history.size() == 5);
  CHECK(palettes[0] == pal.current);
  CHECK(palettes[1] == pal.current);
  CHECK(palettes[2] != pal.current);
  CHECK(r.history[0].sm == 0.0);
  CHECK(r.history[1].sm > 0.0);
  CHECK(r.history[1].weight > 0.0);
  CHECK(r.history[2].weight == 0.0);
  // Density is frozen in stage 2 by default.
  CHECK(r.params.density.data == stage1.density.data);
}

TEST_CASE("decomposition rejects mismatched supervision") {
  const SceneDataset& ds = tiny_scene().train;
  const TrainConfig c = tiny_config(1);
  const FieldParams p = FieldParams::create(c.grid, ds.scene_aabb);
  const Palette pal = truth_palette();
  SupervisionWeights w = truth_supervision(ds, pal);
  w.rows.resize(w.rows.size() - w.n_p);
  CHECK_THROWS_AS(train_decomposition(ds, p, pal, w, c), Error);
}

TEST_CASE("a non-finite gradient stops training and names the block") {
  const SceneDataset& ds = tiny_scene().train;
  TrainConfig c = tiny_config(1);
  c.grad_clip = 0;
  FieldParams start = FieldParams::create(c.grid, ds.scene_aabb);
  for (float& v : start.diffuse.data) v = std::nanf("");
  try {
    train_geometry(ds, c, {}, &start);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNonFiniteGradient);
    // NaN colors poison every upstream block; the first one checked is reported.
    const std::string msg = e.what();
    bool named = false;
    for (const char* block : {"density", "diffuse", "viewdep_sh"}) {
      named = named || msg.find(std::string("gradient in ") + block) != std::string::npos;
    }
    CHECK(named);
  }
}

TEST_CASE("pruning resets isolated empty voxels only") {
  FieldParams p = FieldParams::create({8, 8, 8}, Aabb{});
  p.density_scale = 3.5;
  for (float& v : p.density.data) v = -8.0f;
  const size_t solid = p.density.voxel_index(1, 1, 1);
  p.density.data[solid] = 5.0f;
  AdamState st;
  st.m.assign(p.density.data.size(), 1.0);
  st.v.assign(p.density.data.size(), 1.0);
  const size_t n = prune_density(p, 1e-3, 0.05, &st);
  CHECK(n == 8 * 8 * 8 - 27);
  CHECK(p.density.data[solid] == 5.0f);
  CHECK(p.density.data[p.density.voxel_index(2, 2, 2)] == -8.0f);  // neighbor of the solid voxel
  const size_t far = p.density.voxel_index(6, 6, 6);
  CHECK(p.density.data[far] < -8.0f);
  CHECK(st.m[far] == 0.0);
  // 1 - exp(-sigma step) of the reset value is 1e-6.
  const double sigma = p.density_scale * softplus(p.density.data[far]);
  CHECK(1.0 - std::exp(-sigma * 0.05) == doctest::Approx(1e-6).epsilon(1e-4));
  CHECK(prune_density(p, 1e-3, 0.05) == 0);
}

TEST_CASE("loss csv rows follow the history") {
  palette_field::testing::TempDir dir;
  std::vector<LossBreakdown> h(3);
  h[2].recon = 0.25;
  write_loss_csv(h, dir / "loss.csv");
  std::ifstream f(dir / "loss.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == loss_csv_header());
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 3);
}
