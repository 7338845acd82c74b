#include "palette_field/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "palette_field/palette.hpp"

namespace palette_field {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'L', 'T', 'F'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : bytes_(b) {}
  template <typename T>
  T get() {
    T v{};
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* out, size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorKind::kCheckpoint, "truncated checkpoint");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

int channels_for(const std::string& name, int n_p) {
  if (name == "density" || name == "intensity") return 1;
  if (name == "diffuse") return 3;
  if (name == "viewdep_sh") return kViewdepChannels;
  if (name == "weight_logits") return n_p;
  if (name == "offsets") return 3 * n_p;
  throw Error(ErrorKind::kCheckpoint, "unknown grid \"" + name + "\"");
}

}  // namespace

std::vector<uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const FieldParams& p = ckpt.params;
  Writer w;
  w.raw(kMagic, 4);
  w.put(kVersion);
  w.put(static_cast<uint32_t>(p.n_p()));
  for (int a = 0; a < 3; ++a) w.put(static_cast<uint32_t>(p.dims[a]));
  for (int a = 0; a < 3; ++a) w.put(p.aabb.min[a]);
  for (int a = 0; a < 3; ++a) w.put(p.aabb.max[a]);
  const auto grids = p.named_grids();
  w.put(static_cast<uint32_t>(grids.size()));
  for (const auto& [name, g] : grids) {
    w.put(static_cast<uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put(static_cast<uint64_t>(g->data.size()));
    w.raw(g->data.data(), g->data.size() * sizeof(float));
  }
  json blob = ckpt.extra.is_object() ? ckpt.extra : json::object();
  blob["palette"] = p.has_palette() ? palette_to_json(p.palette) : json(nullptr);
  blob["density_scale"] = p.density_scale;
  const std::string text = blob.dump();
  w.put(static_cast<uint64_t>(text.size()));
  w.raw(text.data(), text.size());
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorKind::kCheckpoint, "bad magic");
  const uint32_t version = r.get<uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorKind::kCheckpoint, "unsupported version " + std::to_string(version));
  }
  const uint32_t n_p = r.get<uint32_t>();
  if (n_p > static_cast<uint32_t>(kMaxPalettes)) throw Error(ErrorKind::kCheckpoint, "N_p too large");
  Checkpoint ck;
  FieldParams& p = ck.params;
  for (int a = 0; a < 3; ++a) {
    const uint32_t d = r.get<uint32_t>();
    if (d < 2 || d > 4096) throw Error(ErrorKind::kCheckpoint, "bad grid dims");
    p.dims[a] = static_cast<int>(d);
  }
  for (int a = 0; a < 3; ++a) p.aabb.min[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) p.aabb.max[a] = r.get<double>();
  const size_t voxels = static_cast<size_t>(p.dims[0]) * p.dims[1] * p.dims[2];
  const uint32_t count = r.get<uint32_t>();
  if (count > 16) throw Error(ErrorKind::kCheckpoint, "too many grids");
  std::vector<std::pair<std::string, VoxelGrid>> grids;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = r.get<uint32_t>();
    if (len > 64) throw Error(ErrorKind::kCheckpoint, "grid name too long");
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const int channels = channels_for(name, static_cast<int>(n_p));
    const uint64_t elems = r.get<uint64_t>();
    if (channels < 1 || elems != voxels * static_cast<uint64_t>(channels)) {
      throw Error(ErrorKind::kCheckpoint, "grid \"" + name + "\" has the wrong element count");
    }
    VoxelGrid g;
    g.dims = p.dims;
    g.aabb = p.aabb;
    g.channels = channels;
    g.data.resize(elems);
    r.raw(g.data.data(), elems * sizeof(float));
    grids.emplace_back(name, std::move(g));
  }
  const uint64_t text_len = r.get<uint64_t>();
  if (text_len > bytes.size()) throw Error(ErrorKind::kCheckpoint, "truncated checkpoint");
  std::string text(text_len, '\0');
  r.raw(text.data(), text_len);
  if (!r.done()) throw Error(ErrorKind::kCheckpoint, "trailing bytes after checkpoint");
  json blob;
  try {
    blob = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kCheckpoint, std::string("bad metadata: ") + e.what());
  }
  if (!blob.is_object() || !blob.contains("density_scale")) {
    throw Error(ErrorKind::kCheckpoint, "metadata lacks density_scale");
  }
  p.density_scale = blob["density_scale"].get<double>();
  if (n_p > 0) {
    if (!blob.contains("palette") || blob["palette"].is_null()) {
      throw Error(ErrorKind::kCheckpoint, "header declares palettes but metadata has none");
    }
    try {
      p.palette = palette_from_json(blob["palette"]);
    } catch (const Error& e) {
      throw Error(ErrorKind::kCheckpoint, e.what());
    }
    if (p.n_p() != static_cast<int>(n_p)) throw Error(ErrorKind::kCheckpoint, "palette size mismatch");
  }
  for (auto& [name, g] : grids) {
    VoxelGrid* slot = nullptr;
    for (auto& [n, target] : p.named_grids()) {
      if (n == name) slot = target;
    }
    if (!slot) throw Error(ErrorKind::kCheckpoint, "unexpected grid \"" + name + "\"");
    *slot = std::move(g);
  }
  for (const auto& [name, g] : p.named_grids()) {
    if (g->data.empty()) throw Error(ErrorKind::kCheckpoint, "missing grid \"" + name + "\"");
  }
  blob.erase("palette");
  blob.erase("density_scale");
  ck.extra = std::move(blob);
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace palette_field
