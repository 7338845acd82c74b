#pragma once

#include <array>
#include <vector>

#include "palette_field/common.hpp"

namespace palette_field {

// Triangulated convex polytope; faces are counter-clockwise seen from outside.
struct ConvexHull3 {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  // Index of each vertex in the input point list.
  std::vector<int> source;

  Vec3 face_normal(int f) const;  // unit, outward
  double face_area(int f) const;
  double signed_distance(int f, const Vec3& p) const;
  // Largest signed distance to any face plane; <= 0 inside.
  double max_signed_distance(const Vec3& p) const;
  double volume() const;
  int edge_count() const { return static_cast<int>(faces.size()) * 3 / 2; }
};

// Quickhull. Throws kDegenerateHull for fewer than 4 points or (near) coplanar input.
ConvexHull3 convex_hull_3d(const std::vector<Vec3>& points);

// As above, but on degeneracy retries once with deterministic 1e-6 coordinate jitter.
ConvexHull3 convex_hull_3d_jittered(const std::vector<Vec3>& points);

// Closest point to p on the hull surface; `face` receives the face index.
Vec3 closest_point_on_hull(const ConvexHull3& hull, const Vec3& p, int* face = nullptr);

// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace palette_field
