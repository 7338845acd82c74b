#include "palette_field/hull.hpp"

#include <limits>
#include <unordered_map>

namespace palette_field {

Vec3 ConvexHull3::face_normal(int f) const {
  const auto& t = faces[f];
  return normalized(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
}

double ConvexHull3::face_area(int f) const {
  const auto& t = faces[f];
  return 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
}

double ConvexHull3::signed_distance(int f, const Vec3& p) const {
  return dot(face_normal(f), p - vertices[faces[f][0]]);
}

double ConvexHull3::max_signed_distance(const Vec3& p) const {
  double best = -std::numeric_limits<double>::infinity();
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) best = std::max(best, signed_distance(f, p));
  return best;
}

double ConvexHull3::volume() const {
  if (faces.empty()) return 0.0;
  const Vec3 o = vertices[faces[0][0]];
  double v = 0;
  for (const auto& t : faces) {
    v += dot(vertices[t[0]] - o, cross(vertices[t[1]] - o, vertices[t[2]] - o));
  }
  return v / 6.0;
}

namespace {

struct Face {
  std::array<int, 3> v;
  Vec3 n;
  double d = 0;
  std::vector<int> outside;
  bool alive = true;
};

uint64_t edge_key(int a, int b) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
}

class Quickhull {
 public:
  explicit Quickhull(const std::vector<Vec3>& pts) : pts_(pts) {}

  ConvexHull3 run() {
    if (pts_.size() < 4) throw Error(ErrorKind::kDegenerateHull, "need at least 4 points");
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const Vec3& p : pts_) {
      lo = cwise_min(lo, p);
      hi = cwise_max(hi, p);
    }
    const double scale = std::max({std::fabs(lo.x), std::fabs(lo.y), std::fabs(lo.z),
                                   std::fabs(hi.x), std::fabs(hi.y), std::fabs(hi.z)}) +
                         norm(hi - lo);
    tol_ = 1e-10 * scale;
    initial_simplex(1e-9 * scale);
    for (;;) {
      int fi = -1;
      for (int f = 0; f < static_cast<int>(faces_.size()); ++f) {
        if (faces_[f].alive && !faces_[f].outside.empty()) {
          fi = f;
          break;
        }
      }
      if (fi < 0) break;
      int eye = -1;
      double best = -1;
      for (int p : faces_[fi].outside) {
        const double dist = distance(faces_[fi], pts_[p]);
        if (dist > best) {
          best = dist;
          eye = p;
        }
      }
      add_point(eye, fi);
    }
    return compact();
  }

 private:
  double distance(const Face& f, const Vec3& p) const { return dot(f.n, p) - f.d; }

  int make_face(int a, int b, int c) {
    Face f;
    f.v = {a, b, c};
    f.n = normalized(cross(pts_[b] - pts_[a], pts_[c] - pts_[a]));
    f.d = dot(f.n, pts_[a]);
    const int id = static_cast<int>(faces_.size());
    faces_.push_back(std::move(f));
    for (int k = 0; k < 3; ++k) edges_[edge_key(faces_[id].v[k], faces_[id].v[(k + 1) % 3])] = id;
    return id;
  }

  void kill_face(int id) {
    Face& f = faces_[id];
    f.alive = false;
    for (int k = 0; k < 3; ++k) {
      auto it = edges_.find(edge_key(f.v[k], f.v[(k + 1) % 3]));
      if (it != edges_.end() && it->second == id) edges_.erase(it);
    }
  }

  void assign(const std::vector<int>& candidates, const std::vector<int>& faces) {
    for (int p : candidates) {
      int best_face = -1;
      double best = tol_;
      for (int f : faces) {
        const double dist = distance(faces_[f], pts_[p]);
        if (dist > best) {
          best = dist;
          best_face = f;
        }
      }
      if (best_face >= 0) faces_[best_face].outside.push_back(p);
    }
  }

  void initial_simplex(double min_extent) {
    const int n = static_cast<int>(pts_.size());
    // Two most separated axis-extreme points.
    std::array<int, 6> ext{};
    for (int a = 0; a < 3; ++a) {
      for (int i = 0; i < n; ++i) {
        if (pts_[i][a] < pts_[ext[2 * a]][a]) ext[2 * a] = i;
        if (pts_[i][a] > pts_[ext[2 * a + 1]][a]) ext[2 * a + 1] = i;
      }
    }
    int i0 = 0, i1 = 0;
    double far = -1;
    for (int a = 0; a < 6; ++a) {
      for (int b = a + 1; b < 6; ++b) {
        const double d = squared_norm(pts_[ext[a]] - pts_[ext[b]]);
        if (d > far) {
          far = d;
          i0 = ext[a];
          i1 = ext[b];
        }
      }
    }
    if (std::sqrt(far) <= min_extent) throw Error(ErrorKind::kDegenerateHull, "points coincide");
    const Vec3 dir = normalized(pts_[i1] - pts_[i0]);
    int i2 = -1;
    far = -1;
    for (int i = 0; i < n; ++i) {
      const Vec3 r = pts_[i] - pts_[i0];
      const double d = squared_norm(r - dir * dot(r, dir));
      if (d > far) {
        far = d;
        i2 = i;
      }
    }
    if (std::sqrt(far) <= min_extent) throw Error(ErrorKind::kDegenerateHull, "points are collinear");
    const Vec3 pn = normalized(cross(pts_[i1] - pts_[i0], pts_[i2] - pts_[i0]));
    int i3 = -1;
    far = -1;
    for (int i = 0; i < n; ++i) {
      const double d = std::fabs(dot(pn, pts_[i] - pts_[i0]));
      if (d > far) {
        far = d;
        i3 = i;
      }
    }
    if (far <= min_extent) throw Error(ErrorKind::kDegenerateHull, "points are coplanar");
    if (dot(pn, pts_[i3] - pts_[i0]) > 0) std::swap(i1, i2);
    std::vector<int> fs = {make_face(i0, i1, i2), make_face(i0, i3, i1), make_face(i1, i3, i2),
                           make_face(i2, i3, i0)};
    std::vector<int> rest;
    for (int i = 0; i < n; ++i) {
      if (i != i0 && i != i1 && i != i2 && i != i3) rest.push_back(i);
    }
    assign(rest, fs);
  }

  void add_point(int eye, int start) {
    const Vec3& p = pts_[eye];
    std::vector<int> visible = {start};
    std::vector<char> is_visible(faces_.size(), 0), seen(faces_.size(), 0);
    is_visible[start] = seen[start] = 1;
    std::vector<std::pair<int, int>> horizon;
    for (size_t q = 0; q < visible.size(); ++q) {
      const Face& f = faces_[visible[q]];
      for (int k = 0; k < 3; ++k) {
        const int a = f.v[k], b = f.v[(k + 1) % 3];
        const int nb = edges_.at(edge_key(b, a));
        if (!seen[nb]) {
          seen[nb] = 1;
          if (distance(faces_[nb], p) > tol_) {
            is_visible[nb] = 1;
            visible.push_back(nb);
          }
        }
      }
    }
    for (int fi : visible) {
      const Face& f = faces_[fi];
      for (int k = 0; k < 3; ++k) {
        const int a = f.v[k], b = f.v[(k + 1) % 3];
        if (!is_visible[edges_.at(edge_key(b, a))]) horizon.emplace_back(a, b);
      }
    }
    std::vector<int> orphans;
    for (int fi : visible) {
      for (int q : faces_[fi].outside) {
        if (q != eye) orphans.push_back(q);
      }
      faces_[fi].outside.clear();
      kill_face(fi);
    }
    std::vector<int> fresh;
    for (const auto& [a, b] : horizon) fresh.push_back(make_face(a, b, eye));
    std::sort(orphans.begin(), orphans.end());
    assign(orphans, fresh);
  }

  ConvexHull3 compact() const {
    std::vector<int> used;
    for (const Face& f : faces_) {
      if (f.alive) used.insert(used.end(), f.v.begin(), f.v.end());
    }
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    std::unordered_map<int, int> remap;
    ConvexHull3 h;
    for (int i : used) {
      remap[i] = static_cast<int>(h.vertices.size());
      h.vertices.push_back(pts_[i]);
      h.source.push_back(i);
    }
    for (const Face& f : faces_) {
      if (f.alive) h.faces.push_back({remap[f.v[0]], remap[f.v[1]], remap[f.v[2]]});
    }
    return h;
  }

  const std::vector<Vec3>& pts_;
  std::vector<Face> faces_;
  std::unordered_map<uint64_t, int> edges_;
  double tol_ = 0;
};

}  // namespace

ConvexHull3 convex_hull_3d(const std::vector<Vec3>& points) {
  for (const Vec3& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw Error(ErrorKind::kInvalidArgument, "non-finite hull input");
    }
  }
  return Quickhull(points).run();
}

ConvexHull3 convex_hull_3d_jittered(const std::vector<Vec3>& points) {
  try {
    return convex_hull_3d(points);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerateHull || points.size() < 4) throw;
  }
  std::vector<Vec3> jittered = points;
  for (size_t i = 0; i < jittered.size(); ++i) {
    CounterRng rng(0x51ab1e, i);
    for (int a = 0; a < 3; ++a) jittered[i][a] += (rng.uniform() * 2.0 - 1.0) * 1e-6;
  }
  ConvexHull3 h = convex_hull_3d(jittered);
  for (size_t i = 0; i < h.vertices.size(); ++i) h.vertices[i] = points[h.source[i]];
  return h;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

Vec3 closest_point_on_hull(const ConvexHull3& hull, const Vec3& p, int* face) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 out;
  for (int f = 0; f < static_cast<int>(hull.faces.size()); ++f) {
    const auto& t = hull.faces[f];
    const Vec3 q = closest_point_on_triangle(p, hull.vertices[t[0]], hull.vertices[t[1]],
                                             hull.vertices[t[2]]);
    const double d = squared_norm(q - p);
    if (d < best) {
      best = d;
      out = q;
      if (face) *face = f;
    }
  }
  return out;
}

}  // namespace palette_field
