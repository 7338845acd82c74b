#include <doctest.h>

#include <cstring>

#include "palette_field/edit.hpp"
#include "palette_field/render.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace palette_field;

TEST_CASE("trilinear interpolation reproduces affine functions") {
  const Aabb box{{-1, 0, 2}, {1, 3, 3}};
  VoxelGrid g({5, 7, 4}, box, 2);
  auto f = [](const Vec3& x) { return std::array<double, 2>{0.3 * x.x - 0.7 * x.y + 0.2 * x.z + 0.1, x.x + x.y + x.z}; };
  for (int z = 0; z < 4; ++z) {
    for (int y = 0; y < 7; ++y) {
      for (int x = 0; x < 5; ++x) {
        const auto v = f(g.voxel_position(x, y, z));
        float* d = g.voxel(g.voxel_index(x, y, z));
        d[0] = static_cast<float>(v[0]);
        d[1] = static_cast<float>(v[1]);
      }
    }
  }
  CounterRng rng(2, 2);
  for (int i = 0; i < 500; ++i) {
    const Vec3 x{-1 + 2 * rng.uniform(), 3 * rng.uniform(), 2 + rng.uniform()};
    const std::vector<double> s = trilinear_sample(g, x);
    CHECK(s[0] == doctest::Approx(f(x)[0]).epsilon(1e-6));
    CHECK(s[1] == doctest::Approx(f(x)[1]).epsilon(1e-6));
  }
}

TEST_CASE("stencils are partitions of unity and clamp outside the box") {
  const GridDims dims{4, 5, 6};
  const Aabb box{{0, 0, 0}, {1, 1, 1}};
  CounterRng rng(8, 8);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x{rng.uniform() * 3 - 1, rng.uniform() * 3 - 1, rng.uniform() * 3 - 1};
    const TrilinearStencil st = trilinear_stencil(dims, box, x);
    double sum = 0;
    for (int k = 0; k < 8; ++k) {
      CHECK(st.weight[k] >= 0.0);
      CHECK(st.voxel[k] < 4u * 5u * 6u);
      sum += st.weight[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const TrilinearStencil clamped = trilinear_stencil(dims, box, cwise_max(cwise_min(x, box.max), box.min));
    CHECK(clamped.voxel == st.voxel);
  }
  const TrilinearStencil corner = trilinear_stencil(dims, box, box.max);
  double w_last = 0;
  for (int k = 0; k < 8; ++k) {
    if (corner.voxel[k] == 4u * 5u * 6u - 1) w_last = corner.weight[k];
  }
  CHECK(w_last == doctest::Approx(1.0));
}

TEST_CASE("trilinear backprop is the adjoint of sampling") {
  VoxelGrid g({3, 3, 3}, Aabb{}, 2);
  CounterRng rng(1, 5);
  for (float& v : g.data) v = static_cast<float>(rng.normal());
  const Vec3 x{0.3, -0.6, 0.45};
  const std::vector<double> up = {0.7, -1.3};
  std::vector<float> grad(g.data.size(), 0.0f);
  trilinear_backprop(g, x, up, grad);
  // <up, sample(g)> = <grad, g> for a linear map.
  const std::vector<double> s = trilinear_sample(g, x);
  double lhs = up[0] * s[0] + up[1] * s[1], rhs = 0;
  for (size_t i = 0; i < g.data.size(); ++i) rhs += static_cast<double>(grad[i]) * g.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
  std::vector<float> wrong(3);
  CHECK_THROWS_AS(trilinear_backprop(g, x, up, wrong), Error);
}

TEST_CASE("spherical harmonics are orthonormal on the sphere") {
  // Fibonacci-sphere quadrature.
  const int n = 40000;
  double gram[kShCoeffs][kShCoeffs] = {};
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    const Vec3 d{r * std::cos(golden * i), r * std::sin(golden * i), z};
    const auto b = sh_basis(d);
    for (int a = 0; a < kShCoeffs; ++a) {
      for (int c = 0; c < kShCoeffs; ++c) gram[a][c] += b[a] * b[c] * 4.0 * M_PI / n;
    }
  }
  for (int a = 0; a < kShCoeffs; ++a) {
    for (int c = 0; c < kShCoeffs; ++c) CHECK(std::abs(gram[a][c] - (a == c ? 1.0 : 0.0)) < 1e-3);
  }
  CHECK(sh_basis({0, 0, 1})[0] == doctest::Approx(0.5 / std::sqrt(M_PI)));
  std::vector<double> coeffs(kViewdepChannels, 0.0);
  coeffs[2] = 1.0;  // red channel, Y_1^0 = c z
  const Vec3 e = sh_eval(coeffs, {0, 0, 1});
  CHECK(e.x == doctest::Approx(std::sqrt(3.0 / (4.0 * M_PI))));
  CHECK(e.y == 0.0);
}

TEST_CASE("compositing matches the literal quadrature over random rays") {
  const palette_field::testing::CompositingCheck c = palette_field::testing::check_compositing(1000, 2024);
  CHECK(c.worst_value <= 1e-6);
  CHECK(c.worst_opacity <= 1e-6);
}

TEST_CASE("sample_ray places bin centers and jitters inside bins") {
  const Ray ray{{0, 0, 0}, {0, 0, 1}, 2.0, 6.0};
  const RaySamples rs = sample_ray(ray, 4, false);
  CHECK(rs.t == std::vector<double>{2.5, 3.5, 4.5, 5.5});
  CHECK(rs.dt == std::vector<double>{0.5, 1.0, 1.0, 1.0});
  CHECK(rs.x[2] == Vec3{0, 0, 4.5});
  CounterRng rng(1, 1);
  const RaySamples j = sample_ray(ray, 8, true, &rng);
  for (int i = 0; i < 8; ++i) {
    CHECK(j.t[i] >= 2.0 + 0.5 * i);
    CHECK(j.t[i] < 2.0 + 0.5 * (i + 1));
  }
  CHECK_THROWS_AS(sample_ray(ray, 0, false), Error);
}

TEST_CASE("an empty field renders the background") {
  FieldParams p = FieldParams::create({4, 4, 4}, Aabb{}, FieldInit{-40.0});
  RenderOptions ro;
  ro.background = {0.1, 0.2, 0.3};
  ro.samples = 32;
  const RayRender r = render_ray(p, Ray{{0, 0, 5}, {0, 0, -1}, 0, 10}, ro);
  CHECK(r.color.x == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.opacity < 1e-12);
  const RayRender miss = render_ray(p, Ray{{5, 5, 5}, {0, 0, 1}, 0, 10}, ro);
  CHECK(miss.color == ro.background);
}

TEST_CASE("point queries compose the palette color") {
  FieldParams p = palette_field::testing::toy_field(8);
  const PointSample ps = query_point(p, {-0.5, 0.1, 0.0}, {0, 0, -1});
  CHECK(ps.n_p == 3);
  double sum = 0;
  for (int i = 0; i < 3; ++i) sum += ps.omega[i];
  CHECK(sum == doctest::Approx(1.0));
  CHECK(ps.omega[0] > 0.99);
  Vec3 soft[3];
  for (int i = 0; i < 3; ++i) soft[i] = p.palette.current[i] + ps.delta[i];
  const Vec3 expect = ps.s + (soft[0] * ps.omega[0] + soft[1] * ps.omega[1] + soft[2] * ps.omega[2]) * ps.intensity;
  CHECK(norm(ps.unclamped - expect) < 1e-12);
  CHECK(ps.composed == clamp01(expect));
  CHECK(ps.intensity == doctest::Approx(sigmoid(1.0)));
}

TEST_CASE("renders are deterministic and independent of the thread count") {
  const FieldParams p = palette_field::testing::toy_field(12);
  const Camera cam = look_at_camera({0, -3, 0.5}, {0, 0, 0}, {0, 0, 1}, 24, 16, 0.7);
  RenderOptions ro;
  ro.near = 1;
  ro.far = 5;
  ro.samples = 48;
  ro.threads = 1;
  const RenderOutput a = render_view(p, cam, ro);
  ro.threads = 3;
  const RenderOutput b = render_view(p, cam, ro);
  CHECK(a.color.data == b.color.data);
  CHECK(a.depth.data == b.depth.data);
  REQUIRE(a.weight_maps.size() == 3);
  CHECK(a.weight_maps[2].data == b.weight_maps[2].data);
  // The ball is hit in the middle of the image, missed at the corner.
  CHECK(a.opacity.at(12, 8, 0) > 0.99f);
  CHECK(a.opacity.at(0, 0, 0) < 1e-2f);
  CHECK(a.weight_maps[0].at(8, 8, 0) > 0.9f);   // x < -0.2 shows palette 0
  CHECK(a.weight_maps[1].at(15, 8, 0) > 0.9f);  // x > 0.2 shows palette 1
}

TEST_CASE("render_function composites an analytic field") {
  // Uniform density 2 over a unit-length slab. The first interval runs from the clipped
  // near bound to the first bin center, so the quadrature covers 1 - 1/(2M) of the slab.
  const Aabb box{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  const FieldFunction fn = [](const Vec3&, const Vec3&, double& sigma, Vec3& c) {
    sigma = 2.0;
    c = {1, 0, 0};
  };
  const Camera cam = look_at_camera({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 1, 1, 0.1);
  RenderOptions ro;
  ro.near = 0;
  ro.far = 10;
  ro.samples = 64;
  const RenderOutput out = render_function(fn, cam, box, ro);
  const double expect = 1.0 - std::exp(-2.0 * (1.0 - 1.0 / 128));
  CHECK(out.opacity.data[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(out.color.data[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(out.depth.data[0] > 0);
}
