#include "palette_field/scene.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace palette_field {

namespace fs = std::filesystem;
using nlohmann::json;

double Camera::focal() const { return 0.5 * width / std::tan(0.5 * fov_x); }

Ray camera_ray(const Camera& cam, double px, double py) {
  const double f = cam.focal();
  const Vec3 local{(px + 0.5 - 0.5 * cam.width) / f, -(py + 0.5 - 0.5 * cam.height) / f, -1.0};
  const auto& m = cam.cam_to_world;
  const Vec3 world{m[0] * local.x + m[1] * local.y + m[2] * local.z,
                   m[4] * local.x + m[5] * local.y + m[6] * local.z,
                   m[8] * local.x + m[9] * local.y + m[10] * local.z};
  Ray ray;
  ray.origin = cam.position();
  ray.direction = normalized(world);
  ray.t_near = 0.0;
  ray.t_far = std::numeric_limits<double>::infinity();
  return ray;
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                      double fov_x) {
  const Vec3 forward = normalized(target - eye);
  const Vec3 x_axis = normalized(cross(forward, up));
  const Vec3 y_axis = cross(x_axis, forward);
  const Vec3 z_axis = -forward;
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fov_x = fov_x;
  cam.cam_to_world = {x_axis.x, y_axis.x, z_axis.x, eye.x, x_axis.y, y_axis.y, z_axis.y, eye.y,
                      x_axis.z, y_axis.z, z_axis.z, eye.z, 0,        0,        0,        1};
  return cam;
}

void validate_pose(const std::array<double, 16>& m) {
  for (double v : m) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kBadPose, "non-finite pose entry");
  }
  const Vec3 c0{m[0], m[4], m[8]}, c1{m[1], m[5], m[9]}, c2{m[2], m[6], m[10]};
  const double err = std::max({std::abs(dot(c0, c0) - 1), std::abs(dot(c1, c1) - 1),
                               std::abs(dot(c2, c2) - 1), std::abs(dot(c0, c1)),
                               std::abs(dot(c0, c2)), std::abs(dot(c1, c2))});
  if (err > 1e-4) throw Error(ErrorKind::kBadPose, "rotation block is not orthonormal");
}

bool clip_to_aabb(Ray& ray, const Aabb& box) {
  double t0 = ray.t_near, t1 = ray.t_far;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-12) {
      if (o < box.min[a] || o > box.max[a]) return false;
      continue;
    }
    double ta = (box.min[a] - o) / d, tb = (box.max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return false;
  ray.t_near = t0;
  ray.t_far = t1;
  return true;
}

Ray SceneDataset::pixel_ray(size_t flat_index) const {
  const size_t per_view = static_cast<size_t>(width()) * height();
  const size_t view = flat_index / per_view;
  const size_t pix = flat_index % per_view;
  Ray ray = camera_ray(cameras[view], static_cast<double>(pix % width()),
                       static_cast<double>(pix / width()));
  ray.t_near = near;
  ray.t_far = far;
  return ray;
}

Vec3 SceneDataset::pixel_color(size_t flat_index) const {
  const size_t per_view = static_cast<size_t>(width()) * height();
  const Image& img = images[flat_index / per_view];
  const float* p = img.data.data() + (flat_index % per_view) * img.channels;
  return {p[0], p[1], p[2]};
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::kDatasetFormat, "expected [x,y,z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

fs::path resolve_image_path(const fs::path& dir, const std::string& file_path) {
  fs::path p = dir / file_path;
  if (!p.has_extension()) p += ".png";
  return p.lexically_normal();
}

}  // namespace

SceneDataset load_blender_dataset(const std::string& dir, const std::string& split) {
  fs::path manifest = fs::path(dir) / ("transforms_" + split + ".json");
  if (!fs::exists(manifest) && split == "train") manifest = fs::path(dir) / "transforms.json";
  if (!fs::exists(manifest)) {
    throw Error(ErrorKind::kDatasetFormat, "missing manifest in " + dir);
  }
  json j;
  try {
    std::ifstream f(manifest);
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kDatasetFormat, std::string("unreadable manifest: ") + e.what());
  }

  SceneDataset ds;
  try {
    if (!j.contains("camera_angle_x") || !j.contains("frames")) {
      throw Error(ErrorKind::kDatasetFormat, "manifest needs camera_angle_x and frames");
    }
    const double fov_x = j.at("camera_angle_x").get<double>();
    if (!(fov_x > 0 && fov_x < M_PI)) throw Error(ErrorKind::kDatasetFormat, "fov out of range");
    if (j.contains("near")) ds.near = j["near"].get<double>();
    if (j.contains("far")) ds.far = j["far"].get<double>();
    if (!(ds.near < ds.far)) throw Error(ErrorKind::kDatasetFormat, "near must be < far");
    if (j.contains("aabb")) {
      ds.scene_aabb.min = json_vec(j["aabb"].at(0));
      ds.scene_aabb.max = json_vec(j["aabb"].at(1));
    }
    if (j.contains("background")) ds.background = json_vec(j["background"]);

    for (const auto& frame : j.at("frames")) {
      const auto& tm = frame.at("transform_matrix");
      Camera cam;
      cam.fov_x = fov_x;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) cam.cam_to_world[r * 4 + c] = tm.at(r).at(c).get<double>();
      }
      validate_pose(cam.cam_to_world);

      const fs::path img_path = resolve_image_path(dir, frame.at("file_path").get<std::string>());
      if (!fs::exists(img_path)) {
        throw Error(ErrorKind::kDatasetFormat, "missing image " + img_path.string());
      }
      Image raw = read_png(img_path.string());
      Image rgb(raw.width, raw.height, 3);
      for (size_t p = 0; p < raw.pixel_count(); ++p) {
        const float a = raw.channels == 4 ? raw.data[p * 4 + 3] : 1.0f;
        for (int c = 0; c < 3; ++c) {
          const float v = raw.data[p * raw.channels + c];
          rgb.data[p * 3 + c] = raw.channels == 4
                                    ? v * a + (1.0f - a) * static_cast<float>(ds.background[c])
                                    : v;
        }
      }
      if (!ds.images.empty() && !rgb.same_shape(ds.images.front())) {
        throw Error(ErrorKind::kInconsistentDataset, "image size mismatch at " + img_path.string());
      }
      cam.width = rgb.width;
      cam.height = rgb.height;
      ds.cameras.push_back(cam);
      ds.images.push_back(std::move(rgb));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kDatasetFormat, std::string("malformed manifest: ") + e.what());
  }
  if (ds.cameras.empty()) throw Error(ErrorKind::kDatasetFormat, "manifest has no frames");
  return ds;
}

void save_blender_dataset(const SceneDataset& dataset, const std::string& dir,
                          const std::string& manifest_name, const std::string& image_prefix) {
  fs::create_directories(dir);
  json j;
  j["camera_angle_x"] = dataset.cameras.empty() ? 0.6911112 : dataset.cameras.front().fov_x;
  j["near"] = dataset.near;
  j["far"] = dataset.far;
  j["aabb"] = json::array({vec_json(dataset.scene_aabb.min), vec_json(dataset.scene_aabb.max)});
  j["background"] = vec_json(dataset.background);
  j["frames"] = json::array();
  for (size_t i = 0; i < dataset.cameras.size(); ++i) {
    const std::string name = image_prefix + std::to_string(i);
    write_png((fs::path(dir) / (name + ".png")).string(), dataset.images[i]);
    json tm = json::array();
    for (int r = 0; r < 4; ++r) {
      json row = json::array();
      for (int c = 0; c < 4; ++c) row.push_back(dataset.cameras[i].cam_to_world[r * 4 + c]);
      tm.push_back(row);
    }
    j["frames"].push_back({{"file_path", "./" + name}, {"transform_matrix", tm}});
  }
  std::ofstream f(fs::path(dir) / manifest_name);
  if (!f) throw Error(ErrorKind::kIo, "cannot write manifest in " + dir);
  f << j.dump(2) << "\n";
}

}  // namespace palette_field
