#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "palette_field/edit.hpp"
#include "palette_field/field.hpp"
#include "palette_field/scene.hpp"

namespace httplib {
class Server;
}

namespace palette_field {

struct ServiceOptions {
  int threads = 0;
  int render_samples = 128;
  int max_size = 512;
  int default_size = 128;
};

// Everything a render needs; replaced wholesale on every edit.
struct EditSnapshot {
  EditState edit;
  ResolvedEdit resolved;
};

struct Session {
  std::string id;
  std::filesystem::path checkpoint_path;
  std::shared_ptr<const FieldParams> params;  // pre-edit palette restored
  nlohmann::json extra;
  std::vector<PaletteEdit> baked;
  double orbit_radius = 4.0;
  Vec3 background{0, 0, 0};

  std::shared_ptr<const EditSnapshot> snapshot() const;
  void set_edit(const EditState& edit);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const EditSnapshot> snap_;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct RenderQuery {
  double yaw = 0, pitch = 0;  // degrees
  std::optional<double> radius;
  int width = 128, height = 128;
  std::string channel = "color";
  std::optional<std::array<double, 16>> pose;  // row-major camera-to-world
};

// Session registry plus request handlers. Handlers are usable without a socket, which
// is how the tests drive most of the API.
class PaletteService {
 public:
  explicit PaletteService(ServiceOptions opts = {});

  HttpReply create_session(const std::string& body);
  HttpReply put_edit(const std::string& id, const std::string& body);
  HttpReply get_palette(const std::string& id);
  HttpReply render(const std::string& id, const std::map<std::string, std::string>& query);
  HttpReply export_session(const std::string& id, const std::string& body);
  HttpReply delete_session(const std::string& id);

  // Loads a checkpoint directly; throws on failure. An empty id allocates one.
  std::shared_ptr<Session> open(const std::filesystem::path& checkpoint, const std::string& id = "");
  std::shared_ptr<Session> find(const std::string& id) const;

  void register_routes(httplib::Server& server);

 private:
  ServiceOptions opts_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  uint64_t next_id_ = 1;
};

RenderQuery parse_render_query(const std::map<std::string, std::string>& query, int max_size,
                               int default_size);
Camera orbit_camera(const Aabb& box, double yaw_deg, double pitch_deg, double radius, int w, int h);

// Blocks serving on host:port. A non-empty `preload` opens a session with id "default".
void run_server(const std::string& host, int port, const std::filesystem::path& preload,
                const ServiceOptions& opts = {});

std::string base64_decode(const std::string& in);

}  // namespace palette_field
