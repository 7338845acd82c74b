#include "palette_field/palette.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include <Eigen/Dense>

#include "palette_field/render.hpp"

namespace palette_field {

using nlohmann::json;

ColorSampleSet collect_valid_pixels(const SceneDataset& dataset,
                                    const std::vector<Image>& opacity_maps,
                                    const ExtractOptions& opts, bool subsample) {
  if (opacity_maps.size() != dataset.images.size()) {
    throw Error(ErrorKind::kInvalidArgument, "need one opacity map per training view");
  }
  ColorSampleSet s;
  for (size_t v = 0; v < dataset.images.size(); ++v) {
    const Image& img = dataset.images[v];
    const Image& op = opacity_maps[v];
    if (op.width != img.width || op.height != img.height) {
      throw Error(ErrorKind::kInvalidArgument, "opacity map size differs from its image");
    }
    for (size_t p = 0; p < img.pixel_count(); ++p) {
      if (op.data[p * op.channels] < opts.opacity_threshold) continue;
      const Vec3 c{img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]};
      const double len = norm(c);
      if (len < opts.intensity_floor) continue;
      s.colors.push_back(c / len);
      s.intensities.push_back(len);
      s.view.push_back(static_cast<uint32_t>(v));
      s.pixel.push_back(static_cast<uint32_t>(p));
    }
  }
  if (s.colors.empty()) {
    throw Error(ErrorKind::kEmptyForeground,
                "no training pixel passes the opacity and intensity thresholds");
  }
  if (subsample && s.size() > opts.max_samples) {
    std::vector<size_t> idx(s.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    CounterRng rng(opts.seed, 0x5a3b1e);
    for (size_t i = 0; i < opts.max_samples; ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform() * (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(opts.max_samples);
    std::sort(idx.begin(), idx.end());
    ColorSampleSet t;
    for (size_t i : idx) {
      t.colors.push_back(s.colors[i]);
      t.intensities.push_back(s.intensities[i]);
      t.view.push_back(s.view[i]);
      t.pixel.push_back(s.pixel[i]);
    }
    s = std::move(t);
  }
  return s;
}

std::vector<Vec3> cluster_colors(const std::vector<Vec3>& colors, double cell,
                                 double min_fraction, int min_clusters) {
  struct Acc {
    Vec3 sum;
    size_t count = 0;
  };
  using Key = std::array<int64_t, 3>;
  std::map<Key, Acc> cells;
  for (const Vec3& c : colors) {
    const Key key{static_cast<int64_t>(std::floor(c.x / cell)), static_cast<int64_t>(std::floor(c.y / cell)),
                  static_cast<int64_t>(std::floor(c.z / cell))};
    Acc& a = cells[key];
    a.sum += c;
    ++a.count;
  }
  const double min_count = min_fraction * static_cast<double>(colors.size());
  std::map<Key, Acc> kept;
  for (const auto& [key, a] : cells) {
    if (static_cast<double>(a.count) >= min_count) kept.emplace(key, a);
  }
  if (kept.empty()) kept = cells;
  auto for_neighbors = [&](const Key& k, auto&& fn) {
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          auto it = kept.find(Key{k[0] + dx, k[1] + dy, k[2] + dz});
          if (it != kept.end()) fn(it->first, it->second);
        }
      }
    }
  };
  std::vector<Vec3> modes;
  std::map<Key, int> component;
  for (const auto& [start, unused] : kept) {
    if (component.count(start)) continue;
    const int id = static_cast<int>(modes.size());
    std::vector<Key> stack{start};
    component[start] = id;
    Key best = start;
    while (!stack.empty()) {
      const Key k = stack.back();
      stack.pop_back();
      const size_t n = kept.at(k).count;
      if (n > kept.at(best).count || (n == kept.at(best).count && k < best)) best = k;
      for_neighbors(k, [&](const Key& nk, const Acc&) {
        if (component.emplace(nk, id).second) stack.push_back(nk);
      });
    }
    Acc mode = kept.at(best);
    for_neighbors(best, [&](const Key&, const Acc& a) {
      mode.sum += a.sum;
      mode.count += a.count;
    });
    modes.push_back(mode.sum / static_cast<double>(mode.count));
  }
  if (static_cast<int>(modes.size()) >= min_clusters) return modes;
  std::vector<Vec3> out;
  for (const auto& [key, a] : kept) out.push_back(a.sum / static_cast<double>(a.count));
  return out;
}

namespace {

struct Plane {
  Vec3 n;
  double d;  // n . x >= d keeps the old hull enclosed
};

bool solve3(const Plane& a, const Plane& b, const Plane& c, Vec3& out) {
  const Vec3 bc = cross(b.n, c.n);
  const double det = dot(a.n, bc);
  if (std::fabs(det) < 1e-12) return false;
  out = (bc * a.d + cross(c.n, a.n) * b.d + cross(a.n, b.n) * c.d) / det;
  return true;
}

struct Collapse {
  double cost;
  int u, v;
  Vec3 w;
};

// Placement minimizing the volume added by the faces around edge (u, v), subject to w
// lying on or outside each of their planes. The LP optimum sits on a vertex of the
// feasible region, so triples of active planes are enumerated.
bool best_placement(const ConvexHull3& h, int u, int v, double& cost, Vec3& w) {
  std::vector<Plane> planes;
  Vec3 objective;
  double offset = 0;
  for (int f = 0; f < static_cast<int>(h.faces.size()); ++f) {
    const auto& t = h.faces[f];
    if (t[0] != u && t[1] != u && t[2] != u && t[0] != v && t[1] != v && t[2] != v) continue;
    const Vec3 n = h.face_normal(f);
    const double d = dot(n, h.vertices[t[0]]);
    const double area = h.face_area(f);
    planes.push_back({n, d});
    objective += n * area;
    offset += area * d;
  }
  const double scale = 1.0 + std::fabs(offset);
  bool found = false;
  const int m = static_cast<int>(planes.size());
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      for (int c = b + 1; c < m; ++c) {
        Vec3 p;
        if (!solve3(planes[a], planes[b], planes[c], p)) continue;
        bool feasible = true;
        for (const Plane& q : planes) {
          if (dot(q.n, p) < q.d - 1e-10 * scale) {
            feasible = false;
            break;
          }
        }
        if (!feasible) continue;
        const double val = (dot(objective, p) - offset) / 3.0;
        if (!found || val < cost) {
          cost = val;
          w = p;
          found = true;
        }
      }
    }
  }
  return found;
}

}  // namespace

SimplifiedHull simplify_hull(const ConvexHull3& input, int n_p) {
  if (n_p < 2) throw Error(ErrorKind::kInvalidArgument, "N_p must be at least 2");
  SimplifiedHull out;
  ConvexHull3 hull = input;
  out.volume_history.push_back(hull.volume());
  if (static_cast<int>(hull.vertices.size()) <= n_p) {
    out.vertices = hull.vertices;
    out.shortfall = static_cast<int>(hull.vertices.size()) < n_p;
    return out;
  }
  const int target = std::max(n_p, 4);
  while (static_cast<int>(hull.vertices.size()) > target) {
    std::vector<Collapse> cands;
    for (const auto& t : hull.faces) {
      for (int k = 0; k < 3; ++k) {
        const int u = t[k], v = t[(k + 1) % 3];
        if (u > v) continue;  // each undirected edge once
        Collapse c{0, u, v, {}};
        if (best_placement(hull, u, v, c.cost, c.w)) cands.push_back(c);
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Collapse& a, const Collapse& b) {
      if (a.cost != b.cost) return a.cost < b.cost;
      if (a.u != b.u) return a.u < b.u;
      return a.v < b.v;
    });
    bool applied = false;
    for (const Collapse& c : cands) {
      std::vector<Vec3> pts;
      for (int i = 0; i < static_cast<int>(hull.vertices.size()); ++i) {
        if (i != c.u && i != c.v) pts.push_back(hull.vertices[i]);
      }
      pts.push_back(c.w);
      ConvexHull3 next;
      try {
        next = convex_hull_3d_jittered(pts);
      } catch (const Error&) {
        continue;
      }
      if (static_cast<int>(next.vertices.size()) < target) continue;
      hull = std::move(next);
      out.volume_history.push_back(hull.volume());
      applied = true;
      break;
    }
    if (!applied) break;
  }
  std::vector<Vec3> verts = hull.vertices;
  while (static_cast<int>(verts.size()) > n_p) {
    size_t bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < verts.size(); ++i) {
      for (size_t j = i + 1; j < verts.size(); ++j) {
        const double d = squared_norm(verts[i] - verts[j]);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    verts[bi] = (verts[bi] + verts[bj]) * 0.5;
    verts.erase(verts.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  out.vertices = verts;
  return out;
}

std::vector<double> simplex_least_squares(const std::vector<Vec3>& palette, const Vec3& x) {
  const int n = static_cast<int>(palette.size());
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "empty palette");
  std::vector<double> best_w(n, 0.0);
  double best_err = std::numeric_limits<double>::infinity();
  const int subsets = 1 << n;
  for (int mask = 1; mask < subsets; ++mask) {
    const int k = __builtin_popcount(static_cast<unsigned>(mask));
    if (k > 4) continue;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) idx.push_back(i);
    }
    std::vector<double> w(n, 0.0);
    if (k == 1) {
      w[idx[0]] = 1.0;
    } else {
      Eigen::MatrixXd a(3, k - 1);
      const Vec3& p0 = palette[idx[0]];
      for (int j = 1; j < k; ++j) {
        const Vec3 e = palette[idx[j]] - p0;
        a.col(j - 1) << e.x, e.y, e.z;
      }
      const Vec3 r = x - p0;
      const Eigen::Vector3d rhs(r.x, r.y, r.z);
      const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(rhs);
      double rest = 1.0;
      bool ok = true;
      for (int j = 1; j < k; ++j) {
        w[idx[j]] = sol[j - 1];
        rest -= sol[j - 1];
        ok &= sol[j - 1] >= -1e-12;
      }
      w[idx[0]] = rest;
      ok &= rest >= -1e-12;
      if (!ok) continue;
    }
    Vec3 rec;
    for (int i = 0; i < n; ++i) rec += palette[i] * w[i];
    const double err = squared_norm(rec - x);
    if (err < best_err - 1e-15) {
      best_err = err;
      best_w = w;
    }
  }
  for (double& v : best_w) v = std::max(v, 0.0);
  double sum = 0;
  for (double v : best_w) sum += v;
  for (double& v : best_w) v /= sum;
  return best_w;
}

BlendingWeights::BlendingWeights(const std::vector<Vec3>& palette) : palette_(palette) {
  const int n = static_cast<int>(palette.size());
  if (n < 2) throw Error(ErrorKind::kInvalidArgument, "palette needs at least 2 colors");
  for (const Vec3& p : palette) centroid_ += p;
  centroid_ = centroid_ / n;
  if (n < 4) return;
  try {
    hull_ = convex_hull_3d(palette);
  } catch (const Error&) {
    return;
  }
  for (const auto& f : hull_.faces) {
    const Vec3 a = hull_.vertices[f[0]] - centroid_, b = hull_.vertices[f[1]] - centroid_,
               c = hull_.vertices[f[2]] - centroid_;
    const double det = dot(a, cross(b, c));
    if (std::fabs(det) / 6.0 < 1e-12) continue;
    const Vec3 r0 = cross(b, c) / det, r1 = cross(c, a) / det, r2 = cross(a, b) / det;
    Tet t;
    t.face = {hull_.source[f[0]], hull_.source[f[1]], hull_.source[f[2]]};
    t.inv = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
    tets_.push_back(t);
  }
  use_hull_ = !tets_.empty();
}

std::vector<double> BlendingWeights::operator()(const Vec3& sample) const {
  const int n = static_cast<int>(palette_.size());
  if (!use_hull_) return simplex_least_squares(palette_, sample);
  std::vector<double> w(n, 0.0);
  constexpr double kInsideTol = 1e-9;
  if (hull_.max_signed_distance(sample) > kInsideTol) {
    int f = 0;
    const Vec3 q = closest_point_on_hull(hull_, sample, &f);
    const auto& t = hull_.faces[f];
    const Vec3 a = hull_.vertices[t[0]], v0 = hull_.vertices[t[1]] - a,
               v1 = hull_.vertices[t[2]] - a, v2 = q - a;
    const double d00 = dot(v0, v0), d01 = dot(v0, v1), d11 = dot(v1, v1), d20 = dot(v2, v0),
                 d21 = dot(v2, v1);
    const double den = d00 * d11 - d01 * d01;
    if (den > 0) {
      double l1 = std::max((d11 * d20 - d01 * d21) / den, 0.0);
      double l2 = std::max((d00 * d21 - d01 * d20) / den, 0.0);
      double l0 = std::max(1.0 - l1 - l2, 0.0);
      const double s = l0 + l1 + l2;
      w[hull_.source[t[0]]] += l0 / s;
      w[hull_.source[t[1]]] += l1 / s;
      w[hull_.source[t[2]]] += l2 / s;
      return w;
    }
  } else {
    const Vec3 r = sample - centroid_;
    for (const Tet& t : tets_) {
      double l[3];
      for (int k = 0; k < 3; ++k) l[k] = t.inv[3 * k] * r.x + t.inv[3 * k + 1] * r.y + t.inv[3 * k + 2] * r.z;
      const double lc = 1.0 - l[0] - l[1] - l[2];
      if (l[0] < -kInsideTol || l[1] < -kInsideTol || l[2] < -kInsideTol || lc < -kInsideTol) continue;
      double s = 0;
      for (double& v : l) s += (v = std::max(v, 0.0));
      const double c = std::max(lc, 0.0);
      s += c;
      for (int k = 0; k < 3; ++k) w[t.face[k]] += l[k] / s;
      for (int i = 0; i < n; ++i) w[i] += c / s / n;
      return w;
    }
  }
  // Nothing contained the sample: nearest palette color.
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (squared_norm(palette_[i] - sample) < squared_norm(palette_[best] - sample)) best = i;
  }
  w[best] = 1.0;
  return w;
}

SupervisionWeights blending_weights(const std::vector<Vec3>& palette,
                                    const std::vector<Vec3>& samples, int threads) {
  const BlendingWeights bw(palette);
  SupervisionWeights out;
  out.n_p = static_cast<int>(palette.size());
  out.rows.assign(samples.size() * out.n_p, 0.0f);
  parallel_for(static_cast<int64_t>(samples.size()), threads, [&](int64_t b, int64_t e, int) {
    for (int64_t i = b; i < e; ++i) {
      const std::vector<double> w = bw(samples[i]);
      for (int k = 0; k < out.n_p; ++k) out.rows[i * out.n_p + k] = static_cast<float>(w[k]);
    }
  });
  return out;
}

Extraction extract_palettes(const SceneDataset& dataset, const FieldParams& stage1,
                            const ExtractOptions& opts) {
  if (opts.n_p < 2 || opts.n_p > kMaxPalettes) {
    throw Error(ErrorKind::kInvalidArgument, "N_p must be in [2, 8]");
  }
  RenderOptions ro = render_options_for(dataset, opts.render_samples);
  ro.threads = opts.threads;
  std::vector<Image> opacity;
  for (const Camera& cam : dataset.cameras) opacity.push_back(render_view(stage1, cam, ro).opacity);

  const ColorSampleSet all = collect_valid_pixels(dataset, opacity, opts, false);
  const ColorSampleSet sub = collect_valid_pixels(dataset, opacity, opts, true);
  const std::vector<Vec3> clusters =
      cluster_colors(sub.colors, opts.cluster_cell, opts.min_cluster_fraction, std::max(4, opts.n_p));
  const std::string advice =
      "; the normalized colors do not span a 3D hull. Lower N_p or use a scene with more "
      "distinct colors";
  if (clusters.size() < 4) {
    throw Error(ErrorKind::kDegenerateHull,
                "found " + std::to_string(clusters.size()) + " color clusters" + advice);
  }
  ConvexHull3 hull;
  try {
    hull = convex_hull_3d_jittered(clusters);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerateHull) throw;
    throw Error(ErrorKind::kDegenerateHull, std::string(e.what()) + advice);
  }
  const SimplifiedHull simple = simplify_hull(hull, opts.n_p);

  Extraction ex;
  ex.sample_count = sub.size();
  ex.cluster_count = clusters.size();
  ex.hull_vertex_count = static_cast<int>(hull.vertices.size());
  ex.shortfall = simple.shortfall;
  ex.palette.extracted = simple.vertices;
  ex.palette.current = simple.vertices;
  ex.palette.intensity_floor = opts.intensity_floor;
  ex.palette.opacity_threshold = opts.opacity_threshold;
  double mean = 0;
  for (double v : all.intensities) mean += v;
  ex.palette.mean_intensity = mean / static_cast<double>(all.size());

  const SupervisionWeights rows = blending_weights(simple.vertices, all.colors, opts.threads);
  ex.weights.n_p = rows.n_p;
  ex.weights.rows.assign(dataset.pixel_count() * rows.n_p, 0.0f);
  const size_t per_view = static_cast<size_t>(dataset.width()) * dataset.height();
  for (size_t i = 0; i < all.size(); ++i) {
    const size_t flat = all.view[i] * per_view + all.pixel[i];
    std::copy_n(rows.row(i), rows.n_p, ex.weights.rows.begin() + flat * rows.n_p);
  }
  return ex;
}

json palette_to_json(const Palette& p) {
  auto arr = [](const std::vector<Vec3>& cs) {
    json a = json::array();
    for (const Vec3& c : cs) a.push_back({c.x, c.y, c.z});
    return a;
  };
  return {{"n_p", p.n_p()},
          {"extracted", arr(p.extracted)},
          {"current", arr(p.current)},
          {"intensity_floor", p.intensity_floor},
          {"opacity_threshold", p.opacity_threshold},
          {"mean_intensity", p.mean_intensity}};
}

Palette palette_from_json(const json& j) {
  auto arr = [](const json& a, const char* what) {
    if (!a.is_array()) throw Error(ErrorKind::kInvalidArgument, std::string(what) + " must be an array");
    std::vector<Vec3> out;
    for (const json& c : a) {
      if (!c.is_array() || c.size() != 3) {
        throw Error(ErrorKind::kInvalidArgument, std::string(what) + " entries must be [r,g,b]");
      }
      out.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
    }
    return out;
  };
  try {
    Palette p;
    p.extracted = arr(j.at("extracted"), "extracted");
    p.current = arr(j.at("current"), "current");
    p.intensity_floor = j.value("intensity_floor", 0.05);
    p.opacity_threshold = j.value("opacity_threshold", 0.5);
    p.mean_intensity = j.value("mean_intensity", 1.0);
    const int n = j.at("n_p").get<int>();
    if (n != p.n_p() || p.extracted.size() != p.current.size()) {
      throw Error(ErrorKind::kInvalidArgument, "palette n_p disagrees with its color lists");
    }
    if (n > kMaxPalettes) throw Error(ErrorKind::kInvalidArgument, "at most 8 palettes");
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("malformed palette JSON: ") + e.what());
  }
}

void write_palette_json(const Palette& p, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f << palette_to_json(p).dump(2) << "\n";
}

Palette read_palette_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, path.string() + ": " + e.what());
  }
  return palette_from_json(j);
}

namespace {

constexpr char kWeightsMagic[4] = {'P', 'L', 'T', 'W'};
constexpr uint32_t kWeightsVersion = 1;

template <typename T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!i) throw Error(ErrorKind::kIo, "truncated weights file");
  return v;
}

}  // namespace

void write_weights(const SupervisionWeights& w, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f.write(kWeightsMagic, 4);
  put(f, kWeightsVersion);
  put(f, static_cast<uint64_t>(w.size()));
  put(f, static_cast<uint32_t>(w.n_p));
  f.write(reinterpret_cast<const char*>(w.rows.data()),
          static_cast<std::streamsize>(w.rows.size() * sizeof(float)));
}

SupervisionWeights read_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw Error(ErrorKind::kIo, path.string() + " is not a PLTW weights file");
  }
  if (get<uint32_t>(f) != kWeightsVersion) throw Error(ErrorKind::kIo, "unsupported PLTW version");
  const uint64_t rows = get<uint64_t>(f);
  SupervisionWeights w;
  w.n_p = static_cast<int>(get<uint32_t>(f));
  if (w.n_p < 1 || w.n_p > kMaxPalettes) throw Error(ErrorKind::kIo, "bad N_p in weights file");
  w.rows.resize(rows * w.n_p);
  f.read(reinterpret_cast<char*>(w.rows.data()), static_cast<std::streamsize>(w.rows.size() * sizeof(float)));
  if (!f) throw Error(ErrorKind::kIo, "truncated weights file");
  return w;
}

}  // namespace palette_field
