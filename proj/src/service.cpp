#include "palette_field/service.hpp"

#include <cstring>
#include <fstream>

#include <httplib.h>

#include "palette_field/checkpoint.hpp"
#include "palette_field/image.hpp"
#include "palette_field/render.hpp"

namespace palette_field {

using nlohmann::json;

namespace {

HttpReply json_reply(int status, const json& j) { return {status, "application/json", j.dump()}; }

HttpReply error_reply(int status, const std::string& msg) {
  return json_reply(status, {{"error", msg}});
}

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

json colors_json(const std::vector<Vec3>& cs) {
  json a = json::array();
  for (const Vec3& c : cs) a.push_back(vec_json(c));
  return a;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(d)) {
    throw Error(ErrorKind::kInvalidArgument, "bad number for " + key + ": " + v);
  }
  return d;
}

int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d) || std::abs(d) > 1e6) {
    throw Error(ErrorKind::kInvalidArgument, "bad integer for " + key + ": " + v);
  }
  return static_cast<int>(d);
}

Image single_channel(int w, int h) { return Image(w, h, 1); }

}  // namespace

std::string base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+' || c == '-') return 62;
    if (c == '/' || c == '_') return 63;
    return -1;
  };
  std::string out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) throw Error(ErrorKind::kInvalidArgument, "bad base64");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::shared_ptr<const EditSnapshot> Session::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return snap_;
}

void Session::set_edit(const EditState& edit) {
  auto snap = std::make_shared<EditSnapshot>();
  snap->edit = edit;
  snap->resolved = resolve_edit(edit, params->palette, baked);
  std::lock_guard<std::mutex> lock(mu_);
  snap_ = std::move(snap);
}

PaletteService::PaletteService(ServiceOptions opts) : opts_(opts) {}

std::shared_ptr<Session> PaletteService::open(const std::filesystem::path& path, const std::string& id) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.params.has_palette()) {
    throw Error(ErrorKind::kCheckpoint, "checkpoint has no palette (stage-1 only)");
  }
  auto s = std::make_shared<Session>();
  s->checkpoint_path = path;
  s->baked = unbake_palette_edit(ck.params, ck.extra);
  s->extra = ck.extra;
  const Vec3 e = ck.params.aabb.extent();
  s->orbit_radius = ck.extra.value("orbit_radius", 2.0 * std::max({e.x, e.y, e.z}));
  if (ck.extra.contains("background")) {
    const json& b = ck.extra["background"];
    s->background = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
  }
  s->params = std::make_shared<const FieldParams>(std::move(ck.params));
  s->set_edit(EditState{});
  std::lock_guard<std::mutex> lock(mu_);
  s->id = id.empty() ? "s" + std::to_string(next_id_++) : id;
  sessions_[s->id] = s;
  return s;
}

std::shared_ptr<Session> PaletteService::find(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpReply PaletteService::create_session(const std::string& body) {
  std::string path;
  try {
    const json j = json::parse(body);
    path = j.at("checkpoint_path").get<std::string>();
  } catch (const json::exception& e) {
    return error_reply(400, std::string("expected {\"checkpoint_path\": ...}: ") + e.what());
  }
  if (!std::filesystem::is_regular_file(path)) return error_reply(404, "no such checkpoint: " + path);
  std::shared_ptr<Session> s;
  try {
    s = open(path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) return error_reply(404, e.what());
    return error_reply(422, e.what());
  }
  const FieldParams& p = *s->params;
  const Palette& pal = p.palette;
  return json_reply(201, {{"id", s->id},
                          {"n_p", p.n_p()},
                          {"palette",
                           {{"colors", colors_json(pal.current)},
                            {"display", colors_json(pal.display_colors(edited_palette(pal, s->snapshot()->resolved)))}}},
                          {"aabb", {vec_json(p.aabb.min), vec_json(p.aabb.max)}},
                          {"orbit_radius", s->orbit_radius}});
}

HttpReply PaletteService::put_edit(const std::string& id, const std::string& body) {
  auto s = find(id);
  if (!s) return error_reply(404, "unknown session " + id);
  try {
    const EditState edit = edit_from_json(json::parse(body));
    s->set_edit(edit);
  } catch (const json::exception& e) {
    return error_reply(400, e.what());
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  return json_reply(200, {{"ok", true}});
}

HttpReply PaletteService::get_palette(const std::string& id) {
  auto s = find(id);
  if (!s) return error_reply(404, "unknown session " + id);
  const auto snap = s->snapshot();
  const Palette& pal = s->params->palette;
  const std::vector<Vec3> edited = edited_palette(pal, snap->resolved);
  json deltas = json::array();
  for (int i = 0; i < pal.n_p(); ++i) {
    deltas.push_back({{"dh", snap->resolved.delta[i].h}, {"ds", snap->resolved.delta[i].s},
                      {"dv", snap->resolved.delta[i].v}});
  }
  return json_reply(200, {{"n_p", pal.n_p()},
                          {"colors", colors_json(edited)},
                          {"display", colors_json(pal.display_colors(edited))},
                          {"original", colors_json(pal.current)},
                          {"original_display", colors_json(pal.display_colors())},
                          {"extracted", colors_json(pal.extracted)},
                          {"mean_intensity", pal.mean_intensity},
                          {"hsv_deltas", deltas},
                          {"edit", edit_to_json(snap->edit)}});
}

Camera orbit_camera(const Aabb& box, double yaw_deg, double pitch_deg, double radius, int w, int h) {
  const double yaw = yaw_deg * M_PI / 180.0, pitch = pitch_deg * M_PI / 180.0;
  const Vec3 dir{std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch)};
  const Vec3 up = std::abs(dir.z) > 0.999 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
  return look_at_camera(box.center() + dir * radius, box.center(), up, w, h, 0.6911112);
}

RenderQuery parse_render_query(const std::map<std::string, std::string>& q, int max_size,
                               int default_size) {
  RenderQuery r;
  r.width = r.height = default_size;
  for (const auto& [k, v] : q) {
    if (k == "yaw") {
      r.yaw = parse_double(k, v);
    } else if (k == "pitch") {
      r.pitch = parse_double(k, v);
      if (std::abs(r.pitch) > 90.0) throw Error(ErrorKind::kInvalidArgument, "pitch must lie in [-90, 90]");
    } else if (k == "radius") {
      r.radius = parse_double(k, v);
      if (!(*r.radius > 0)) throw Error(ErrorKind::kInvalidArgument, "radius must be > 0");
    } else if (k == "w") {
      r.width = parse_int(k, v);
    } else if (k == "h") {
      r.height = parse_int(k, v);
    } else if (k == "channel") {
      r.channel = v;
    } else if (k == "pose") {
      const std::string raw = base64_decode(v);
      if (raw.size() != 16 * sizeof(double)) {
        throw Error(ErrorKind::kInvalidArgument, "pose must be 16 little-endian f64 values");
      }
      std::array<double, 16> m;
      std::memcpy(m.data(), raw.data(), raw.size());
      validate_pose(m);
      r.pose = m;
    } else {
      throw Error(ErrorKind::kInvalidArgument, "unknown query parameter " + k);
    }
  }
  if (r.width < 1 || r.height < 1 || r.width > max_size || r.height > max_size) {
    throw Error(ErrorKind::kInvalidArgument,
                "w and h must lie in [1, " + std::to_string(max_size) + "]");
  }
  return r;
}

HttpReply PaletteService::render(const std::string& id, const std::map<std::string, std::string>& query) {
  auto s = find(id);
  if (!s) return error_reply(404, "unknown session " + id);
  RenderQuery q;
  try {
    q = parse_render_query(query, opts_.max_size, opts_.default_size);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  const FieldParams& p = *s->params;
  int weight_index = -1;
  static const std::vector<std::string> kChannels{"color", "diffuse", "viewdep", "depth", "opacity"};
  if (q.channel.rfind("weight_", 0) == 0) {
    try {
      weight_index = parse_int("channel", q.channel.substr(7));
    } catch (const Error&) {
      weight_index = -1;
    }
    if (weight_index < 0 || weight_index >= p.n_p()) return error_reply(400, "bad channel " + q.channel);
  } else if (std::find(kChannels.begin(), kChannels.end(), q.channel) == kChannels.end()) {
    return error_reply(400, "bad channel " + q.channel);
  }
  const double radius = q.radius.value_or(s->orbit_radius);
  Camera cam = orbit_camera(p.aabb, q.yaw, q.pitch, radius, q.width, q.height);
  if (q.pose) cam.cam_to_world = *q.pose;
  const auto snap = s->snapshot();
  RenderOptions ro;
  ro.samples = opts_.render_samples;
  const double dist = norm(cam.position() - p.aabb.center());
  ro.near = std::max(1e-3, dist - p.aabb.diagonal());
  ro.far = dist + p.aabb.diagonal();
  ro.background = s->background;
  ro.edit = &snap->resolved;
  ro.threads = opts_.threads;
  const RenderOutput out = render_view(p, cam, ro);
  Image img;
  if (q.channel == "color") {
    img = out.color;
  } else if (q.channel == "diffuse") {
    img = out.diffuse;
  } else if (q.channel == "viewdep") {
    img = out.viewdep;
  } else if (q.channel == "opacity") {
    img = out.opacity;
  } else if (q.channel == "depth") {
    img = single_channel(q.width, q.height);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(out.depth.data[i] / ro.far);
  } else {
    img = out.weight_maps[weight_index];
  }
  const std::vector<uint8_t> png = encode_png(img);
  return {200, "image/png", std::string(png.begin(), png.end())};
}

HttpReply PaletteService::export_session(const std::string& id, const std::string& body) {
  auto s = find(id);
  if (!s) return error_reply(404, "unknown session " + id);
  std::filesystem::path path;
  bool overwrite = false;
  try {
    const json j = json::parse(body);
    path = j.at("path").get<std::string>();
    overwrite = j.value("overwrite", false);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("expected {\"path\": ...}: ") + e.what());
  }
  std::error_code ec;
  if (std::filesystem::exists(path)) {
    if (std::filesystem::equivalent(path, s->checkpoint_path, ec)) {
      return error_reply(409, "refusing to overwrite the session's source checkpoint");
    }
    if (!overwrite) return error_reply(409, "path exists: " + path.string());
  }
  const auto snap = s->snapshot();
  Checkpoint ck;
  ck.params = *s->params;
  ck.extra = s->extra;
  ck.extra.erase("recolor");
  bake_palette_edit(ck.params, ck.extra, snap->resolved);
  const EditState& e = snap->edit;
  const bool needs_sidecar = e.k_s != 1.0 || e.k_delta != 1.0 || e.style.has_value();
  std::filesystem::path sidecar = path;
  sidecar += ".edit.json";
  try {
    save_checkpoint(ck, path);
    if (needs_sidecar) {
      EditState rest = e;
      rest.palette_edits.clear();
      std::ofstream f(sidecar);
      if (!f) throw Error(ErrorKind::kIo, "cannot write " + sidecar.string());
      f << edit_to_json(rest).dump(2) << "\n";
    }
  } catch (const Error& err) {
    return error_reply(500, err.what());
  }
  return json_reply(200, {{"ok", true},
                          {"path", path.string()},
                          {"sidecar", needs_sidecar ? json(sidecar.string()) : json(nullptr)}});
}

HttpReply PaletteService::delete_session(const std::string& id) {
  std::lock_guard<std::mutex> lock(mu_);
  if (sessions_.erase(id) == 0) return error_reply(404, "unknown session " + id);
  return json_reply(200, {{"ok", true}});
}

void PaletteService::register_routes(httplib::Server& srv) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  srv.Put(R"(/sessions/([^/]+)/edit)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, put_edit(req.matches[1], req.body));
  });
  srv.Get(R"(/sessions/([^/]+)/palette)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_palette(req.matches[1]));
  });
  srv.Get(R"(/sessions/([^/]+)/render)", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q[k] = v;
    send(res, render(req.matches[1], q));
  });
  srv.Post(R"(/sessions/([^/]+)/export)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, export_session(req.matches[1], req.body));
  });
  srv.Delete(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, delete_session(req.matches[1]));
  });
}

void run_server(const std::string& host, int port, const std::filesystem::path& preload,
                const ServiceOptions& opts) {
  PaletteService service(opts);
  if (!preload.empty()) {
    auto s = service.open(preload, "default");
    std::fprintf(stderr, "session %s -> %s\n", s->id.c_str(), preload.c_str());
  }
  httplib::Server srv;
  service.register_routes(srv);
  std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), port);
  if (!srv.listen(host, port)) throw Error(ErrorKind::kIo, "cannot listen on port " + std::to_string(port));
}

}  // namespace palette_field
