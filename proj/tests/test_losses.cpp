#include <doctest.h>

#include "palette_field/losses.hpp"

using namespace palette_field;

TEST_CASE("sparsity of one-hot and uniform weights") {
  double g[8];
  const double one_hot[4] = {0, 1, 0, 0};
  CHECK(sparsity_point(one_hot, 4, g) == doctest::Approx(0.0));
  for (int n = 2; n <= 8; ++n) {
    std::vector<double> u(n, 1.0 / n);
    CHECK(sparsity_point(u.data(), n, g) == doctest::Approx(n - 1.0));
    // Uniform weights are a stationary point along the simplex.
    double along = 0;
    for (int i = 0; i < n; ++i) along += g[i] * (i == 0 ? 1.0 : -1.0 / (n - 1));
    CHECK(std::abs(along) < 1e-12);
  }
}

TEST_CASE("point term values") {
  Vec3 g;
  CHECK(viewdep_point({1, 2, 2}, g) == 9.0);
  CHECK(g == Vec3{2, 4, 4});
  const Vec3 d[2] = {{1, 0, 0}, {0, 2, 0}};
  Vec3 gd[2];
  CHECK(offset_point(d, 2, gd) == doctest::Approx(2.5));
  CHECK(gd[1] == Vec3{0, 2, 0});
  CHECK(smooth_affinity({0, 0, 0}, {0, 0, 0}, {1, 1, 1}, {1, 1, 1}, 1, 1) == 1.0);
  CHECK(smooth_affinity({0, 0, 0}, {1, 0, 0}, {0, 0, 0}, {0, 0, 0}, 2, 1) == doctest::Approx(std::exp(-0.5)));
  CHECK(smooth_affinity({0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0.2, 0}, 1, 0.04) == doctest::Approx(std::exp(-1.0)));
  const double wx[2] = {0.2, 0.8}, wy[2] = {0.5, 0.5};
  double gx[2], gy[2];
  CHECK(smooth_point(0.5, wx, wy, 2, gx, gy) == doctest::Approx(0.5 * 0.18));
  CHECK(gx[0] == doctest::Approx(-gy[0]));
}

TEST_CASE("batch terms are contribution-weighted means") {
  const std::vector<Vec3> s = {{1, 0, 0}, {0, 0, 0}};
  const std::vector<double> a = {3, 1};
  CHECK(loss_viewdep(s, a, nullptr) == doctest::Approx(0.75));
  const std::vector<double> zero = {0, 0};
  std::vector<Vec3> g;
  CHECK(loss_viewdep(s, zero, &g) == 0.0);
  CHECK(g[0] == Vec3{});
  const std::vector<Vec3> ref = {{0, 0, 0}}, color = {{1, 0, 0}}, cds = {{0, 2, 0}};
  CHECK(loss_recon(ref, color, cds).value == doctest::Approx(5.0));
  CHECK(loss_recon(ref, color, {}).value == doctest::Approx(1.0));
  CHECK(loss_recon(ref, color, {}).d_cds.empty());
  const std::vector<double> w = {0.5, 0.5, 1, 0}, t = {1, 0, 1, 0};
  CHECK(loss_weight(w, t, 2, nullptr) == doctest::Approx(0.25));
  const std::vector<Vec3> cols = {{1, 0, 0}, {0, 0, 0}, {0, 1, 0}};
  const std::vector<double> aa = {0.5, 0.5, 1.0};
  const std::vector<size_t> off = {0, 2, 3};
  const std::vector<Vec3> refs = {{0, 0, 0}, {0, 0, 0}};
  CHECK(loss_perpoint(cols, aa, off, refs, nullptr) == doctest::Approx((0.5 + 1.0) / 2));
  CHECK(loss_palette({{1, 1, 1}, {0, 0, 0}}, {{1, 1, 0}, {0, 0, 0}}, nullptr) == doctest::Approx(0.5));
}

TEST_CASE("total loss applies weights and gates") {
  LossBreakdown c;
  c.recon = 1;
  c.s = 2;
  c.sp = 3;
  c.offset = 4;
  c.sm = 5;
  c.palette = 6;
  c.weight = 7;
  c.perpoint = 8;
  LossWeights w;
  const LossBreakdown all = total_loss(c, w, {true, true});
  CHECK(all.total == doctest::Approx(1 + 0.05 * 2 + 0.02 * 3 + 0.1 * 4 + 0.1 * 5 + 0.001 * 6 + 0.05 * 7 + 0.01 * 8));
  const LossBreakdown gated = total_loss(c, w, {false, false});
  CHECK(gated.sm == 0.0);
  CHECK(gated.weight == 0.0);
  CHECK(gated.total == doctest::Approx(all.total - 0.1 * 5 - 0.05 * 7));
  CHECK(gated.s == 2.0);  // components stay unweighted
}

TEST_CASE("loss csv layout") {
  CHECK(loss_csv_header() == "epoch,recon,s,sp,offset,sm,palette,weight,perpoint,total");
  LossBreakdown b;
  b.recon = 0.5;
  b.total = 0.5;
  const std::string row = loss_csv_row(3, b);
  CHECK(row.rfind("3,0.5,0,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 9);
}

TEST_CASE("loss weights: validation, json and scene-relative defaults") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.sp = -1;
  CHECK_THROWS_AS(w.validate(), Error);
  w.sp = 0.02;
  w.sigma_c = 0;
  CHECK_THROWS_AS(w.validate(), Error);
  w.sigma_c = 0.04;
  const LossWeights r = w.resolved(Aabb{{0, 0, 0}, {2, 2, 1}});
  CHECK(r.sigma_x == doctest::Approx(std::pow(3.0 / 32, 2)));
  CHECK(r.eps_std == doctest::Approx(3.0 / 64));
  w.sigma_x = 0.5;
  CHECK(w.resolved(Aabb{}).sigma_x == 0.5);
  w.sm = 0.25;
  const LossWeights back = loss_weights_from_json(loss_weights_to_json(w));
  CHECK(back.sm == 0.25);
  CHECK(back.sigma_x == 0.5);
  CHECK(loss_weights_from_json({{"lambda_sp", 0.0}}).sp == 0.0);
  CHECK(loss_weights_from_json({{"lambda_sp", 0.0}}).s == LossWeights{}.s);
}
