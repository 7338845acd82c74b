#include "palette_field/synthetic.hpp"

#include <fstream>

#include "palette_field/render.hpp"

namespace palette_field {

using nlohmann::json;

double SyntheticShape::sdf(const Vec3& p) const {
  const Vec3 r = p - center;
  if (kind == Kind::kSphere) return norm(r) - radius;
  const Vec3 q{std::fabs(r.x) - half_extent.x, std::fabs(r.y) - half_extent.y,
               std::fabs(r.z) - half_extent.z};
  const Vec3 out = cwise_max(q, {0, 0, 0});
  return norm(out) + std::min(std::max({q.x, q.y, q.z}), 0.0);
}

Vec3 SyntheticShape::normal(const Vec3& p) const {
  constexpr double h = 1e-4;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 lo = p, hi = p;
    lo[a] -= h;
    hi[a] += h;
    g[a] = sdf(hi) - sdf(lo);
  }
  const double n = norm(g);
  return n > 0 ? g / n : Vec3{0, 0, 1};
}

SyntheticSceneSpec default_synthetic_spec(uint64_t seed) {
  using K = SyntheticShape::Kind;
  SyntheticSceneSpec s;
  s.base_colors = {{0.85, 0.15, 0.10}, {0.15, 0.70, 0.20}, {0.15, 0.25, 0.85}, {0.80, 0.70, 0.10}};
  s.layout = {
      {K::kBox, {-0.40, -0.35, -0.30}, {0.30, 0.30, 0.30}, 0, 0},
      {K::kSphere, {0.40, -0.35, -0.25}, {}, 0.33, 1},
      {K::kBox, {0.35, 0.40, 0.30}, {0.28, 0.25, 0.35}, 0, 2},
      {K::kSphere, {-0.35, 0.40, 0.25}, {}, 0.32, 3},
  };
  s.rng_seed = seed;
  return s;
}

void validate_spec(const SyntheticSceneSpec& spec) {
  const int k = static_cast<int>(spec.base_colors.size());
  if (k < 1) throw Error(ErrorKind::kSpec, "need at least one base color");
  for (int i = 0; i < k; ++i) {
    const Vec3& c = spec.base_colors[i];
    if (c.x < 0 || c.y < 0 || c.z < 0 || c.x > 1 || c.y > 1 || c.z > 1) {
      throw Error(ErrorKind::kSpec, "base colors must lie in [0,1]^3");
    }
    for (int j = i + 1; j < k; ++j) {
      if (norm(c - spec.base_colors[j]) <= 0.2) {
        throw Error(ErrorKind::kSpec, "base colors " + std::to_string(i) + " and " +
                                          std::to_string(j) + " are closer than 0.2");
      }
    }
  }
  if (spec.layout.empty()) throw Error(ErrorKind::kSpec, "layout is empty");
  for (const SyntheticShape& s : spec.layout) {
    if (s.color < 0 || s.color >= k) throw Error(ErrorKind::kSpec, "shape color index out of range");
    Vec3 half;
    if (s.kind == SyntheticShape::Kind::kSphere) {
      if (!(s.radius > 0)) throw Error(ErrorKind::kSpec, "zero-volume sphere");
      half = {s.radius, s.radius, s.radius};
    } else {
      if (!(s.half_extent.x > 0 && s.half_extent.y > 0 && s.half_extent.z > 0)) {
        throw Error(ErrorKind::kSpec, "zero-volume box");
      }
      half = s.half_extent;
    }
    if (!spec.aabb.contains(s.center - half) || !spec.aabb.contains(s.center + half)) {
      throw Error(ErrorKind::kSpec, "shape extends outside the scene box");
    }
  }
  const double l = norm(spec.light_dir);
  if (!(l > 0)) throw Error(ErrorKind::kSpec, "light_dir must be nonzero");
  if (spec.specular_strength < 0 || spec.specular_strength > 1) {
    throw Error(ErrorKind::kSpec, "specular_strength must be in [0,1]");
  }
  if (spec.n_views < 1 || spec.image_size < 1 || spec.held_out_views < 0) {
    throw Error(ErrorKind::kSpec, "bad view counts");
  }
  if (spec.held_out_views > spec.n_views) {
    throw Error(ErrorKind::kSpec, "held_out_views cannot exceed n_views");
  }
  if (spec.grid_resolution < 2) throw Error(ErrorKind::kSpec, "grid_resolution must be >= 2");
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

double edge_width(const SyntheticSceneSpec& spec) {
  return 0.5 * spec.aabb.extent().x / (spec.grid_resolution - 1);
}

}  // namespace

json spec_to_json(const SyntheticSceneSpec& s) {
  json colors = json::array();
  for (const Vec3& c : s.base_colors) colors.push_back(vec_json(c));
  json layout = json::array();
  for (const SyntheticShape& sh : s.layout) {
    json o = {{"kind", sh.kind == SyntheticShape::Kind::kBox ? "box" : "sphere"},
              {"center", vec_json(sh.center)},
              {"color", sh.color}};
    if (sh.kind == SyntheticShape::Kind::kBox) {
      o["half_extent"] = vec_json(sh.half_extent);
    } else {
      o["radius"] = sh.radius;
    }
    layout.push_back(o);
  }
  return {{"base_colors", colors},
          {"layout", layout},
          {"light_dir", vec_json(s.light_dir)},
          {"specular_strength", s.specular_strength},
          {"shininess", s.shininess},
          {"ambient", s.ambient},
          {"shading", s.shading},
          {"n_views", s.n_views},
          {"held_out_views", s.held_out_views},
          {"image_size", s.image_size},
          {"rng_seed", s.rng_seed},
          {"aabb", json::array({vec_json(s.aabb.min), vec_json(s.aabb.max)})},
          {"grid_resolution", s.grid_resolution},
          {"sigma_max", s.sigma_max},
          {"camera_radius", s.camera_radius},
          {"render_samples", s.render_samples}};
}

SyntheticSceneSpec spec_from_json(const json& j, SyntheticSceneSpec s) {
  try {
    if (j.contains("base_colors")) {
      s.base_colors.clear();
      for (const json& c : j["base_colors"]) s.base_colors.push_back(json_vec(c));
    }
    if (j.contains("layout")) s.layout.clear();
    for (const json& o : j.value("layout", json::array())) {
      SyntheticShape sh;
      const std::string kind = o.at("kind").get<std::string>();
      if (kind == "box") {
        sh.kind = SyntheticShape::Kind::kBox;
        sh.half_extent = json_vec(o.at("half_extent"));
      } else if (kind == "sphere") {
        sh.kind = SyntheticShape::Kind::kSphere;
        sh.radius = o.at("radius").get<double>();
      } else {
        throw Error(ErrorKind::kSpec, "unknown shape kind " + kind);
      }
      sh.center = json_vec(o.at("center"));
      sh.color = o.at("color").get<int>();
      s.layout.push_back(sh);
    }
    if (j.contains("light_dir")) s.light_dir = json_vec(j["light_dir"]);
    s.specular_strength = j.value("specular_strength", s.specular_strength);
    s.shininess = j.value("shininess", s.shininess);
    s.ambient = j.value("ambient", s.ambient);
    s.shading = j.value("shading", s.shading);
    s.n_views = j.value("n_views", s.n_views);
    s.held_out_views = j.value("held_out_views", s.held_out_views);
    s.image_size = j.value("image_size", s.image_size);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    if (j.contains("aabb")) {
      s.aabb.min = json_vec(j["aabb"].at(0));
      s.aabb.max = json_vec(j["aabb"].at(1));
    }
    s.grid_resolution = j.value("grid_resolution", s.grid_resolution);
    s.sigma_max = j.value("sigma_max", s.sigma_max);
    s.camera_radius = j.value("camera_radius", s.camera_radius);
    s.render_samples = j.value("render_samples", s.render_samples);
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSpec, std::string("malformed scene spec: ") + e.what());
  }
}

SyntheticSceneSpec spec_from_json(const json& j) {
  const uint64_t seed = j.is_object() ? j.value("rng_seed", uint64_t{7}) : 7;
  return spec_from_json(j, default_synthetic_spec(seed));
}

void synthetic_field(const SyntheticSceneSpec& spec, const Vec3& x, const Vec3& d, double& sigma,
                     Vec3& color) {
  int nearest = 0;
  double best = spec.layout[0].sdf(x);
  for (int i = 1; i < static_cast<int>(spec.layout.size()); ++i) {
    const double s = spec.layout[i].sdf(x);
    if (s < best) {
      best = s;
      nearest = i;
    }
  }
  sigma = spec.sigma_max * sigmoid(-best / edge_width(spec));
  const SyntheticShape& shape = spec.layout[nearest];
  const Vec3 base = spec.base_colors[shape.color];
  if (!spec.shading) {
    color = base;
    return;
  }
  const Vec3 n = shape.normal(x);
  const Vec3 l = normalized(spec.light_dir);
  const double lambert = std::max(0.0, dot(n, l));
  color = base * (spec.ambient + (1.0 - spec.ambient) * lambert);
  if (spec.specular_strength > 0 && lambert > 0) {
    const Vec3 h = normalized(l - d);
    const double spec_term = std::pow(std::max(0.0, dot(n, h)), spec.shininess);
    color += Vec3{1, 1, 1} * (spec.specular_strength * spec_term);
  }
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, int threads) {
  validate_spec(spec);
  SyntheticScene scene;
  for (SceneDataset* ds : {&scene.train, &scene.test}) {
    ds->near = 2.0;
    ds->far = 6.0;
    ds->scene_aabb = spec.aabb;
    ds->background = {0, 0, 0};
  }

  const int total = spec.n_views + spec.held_out_views;
  const int stride = spec.held_out_views > 0 ? total / spec.held_out_views : total + 1;
  CounterRng rng(spec.rng_seed, 0xca3e7a);
  const double phase = 2.0 * M_PI * rng.uniform();
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const FieldFunction fn = [&spec](const Vec3& x, const Vec3& d, double& sigma, Vec3& color) {
    synthetic_field(spec, x, d, sigma, color);
  };
  RenderOptions ro;
  ro.samples = spec.render_samples;
  ro.near = 2.0;
  ro.far = 6.0;
  ro.background = {0, 0, 0};
  ro.threads = threads;
  int held = 0;
  for (int i = 0; i < total; ++i) {
    const double z = 0.8 * (1.0 - 2.0 * (i + 0.5) / total);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = phase + golden * i;
    const Vec3 eye = Vec3{r * std::cos(phi), r * std::sin(phi), z} * spec.camera_radius;
    const Camera cam = look_at_camera(eye, spec.aabb.center(), {0, 0, 1}, spec.image_size,
                                      spec.image_size, 0.6911112);
    RenderOutput out = render_function(fn, cam, spec.aabb, ro);
    quantize_to_8bit(out.color);
    const bool test = held < spec.held_out_views && i % stride == stride / 2;
    SceneDataset& ds = test ? scene.test : scene.train;
    held += test ? 1 : 0;
    ds.cameras.push_back(cam);
    ds.images.push_back(std::move(out.color));
  }

  GroundTruth& gt = scene.truth;
  gt.base_colors = spec.base_colors;
  for (const Vec3& c : spec.base_colors) gt.normalized_colors.push_back(normalized(c));
  gt.dims = {spec.grid_resolution, spec.grid_resolution, spec.grid_resolution};
  gt.seed = spec.rng_seed;
  gt.spec = spec_to_json(spec);
  const VoxelGrid probe(gt.dims, spec.aabb, 1);
  gt.region.assign(probe.voxel_count(), -1);
  gt.density.assign(probe.voxel_count(), 0.0f);
  for (int iz = 0; iz < gt.dims[2]; ++iz) {
    for (int iy = 0; iy < gt.dims[1]; ++iy) {
      for (int ix = 0; ix < gt.dims[0]; ++ix) {
        const Vec3 p = probe.voxel_position(ix, iy, iz);
        const size_t v = probe.voxel_index(ix, iy, iz);
        double sigma;
        Vec3 c;
        synthetic_field(spec, p, {0, 0, -1}, sigma, c);
        gt.density[v] = static_cast<float>(sigma);
        for (const SyntheticShape& s : spec.layout) {
          if (s.sdf(p) < 0) {
            gt.region[v] = s.color;
            break;
          }
        }
      }
    }
  }
  return scene;
}

void write_synthetic_scene(const SyntheticScene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_blender_dataset(scene.train, dir.string(), "transforms.json", "r_");
  if (!scene.test.cameras.empty()) {
    save_blender_dataset(scene.test, dir.string(), "transforms_test.json", "test_");
  }
  json colors = json::array(), normalized_colors = json::array();
  for (const Vec3& c : scene.truth.base_colors) colors.push_back(vec_json(c));
  for (const Vec3& c : scene.truth.normalized_colors) normalized_colors.push_back(vec_json(c));
  const json gt = {{"base_colors", colors},
                   {"normalized_base_colors", normalized_colors},
                   {"seed", scene.truth.seed},
                   {"spec", scene.truth.spec}};
  std::ofstream f(dir / "ground_truth.json");
  if (!f) throw Error(ErrorKind::kIo, "cannot write ground_truth.json");
  f << gt.dump(2) << "\n";
}

GroundTruth read_ground_truth(const std::filesystem::path& dir) {
  std::ifstream f(dir / "ground_truth.json");
  if (!f) throw Error(ErrorKind::kDatasetFormat, "missing ground_truth.json in " + dir.string());
  json j;
  try {
    f >> j;
    GroundTruth gt;
    for (const json& c : j.at("base_colors")) gt.base_colors.push_back(json_vec(c));
    for (const Vec3& c : gt.base_colors) gt.normalized_colors.push_back(normalized(c));
    gt.seed = j.value("seed", uint64_t{0});
    gt.spec = j.value("spec", json::object());
    return gt;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kDatasetFormat, std::string("malformed ground_truth.json: ") + e.what());
  }
}

}  // namespace palette_field
