#include <doctest.h>

#include <chrono>

#include "support/gradient_suite.hpp"

using namespace palette_field;
using namespace palette_field::testing;

TEST_CASE("every gradient matches central differences") {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GradientCheck> checks = run_gradient_suite(1e-3, 1e-3, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(checks.size() == 14);
  for (const GradientCheck& c : checks) {
    INFO(c.name << " entries=" << c.entries << " max_rel=" << c.max_rel_error);
    CHECK(c.ok());
  }
  CHECK(secs < 30.0);
}

TEST_CASE("gradient suite holds across fixtures") {
  for (uint64_t seed : {2, 3}) {
    for (const GradientCheck& c : run_gradient_suite(1e-3, 1e-3, seed)) {
      INFO("seed " << seed << " " << c.name << " max_rel=" << c.max_rel_error);
      CHECK(c.ok());
    }
  }
}

TEST_CASE("the checker flags a wrong gradient") {
  GradientChecker ck("probe", 1e-3);
  ck.add(1.0, 1.01);
  ck.add(0.5, 0.5);
  const GradientCheck c = ck.finish();
  CHECK_FALSE(c.ok());
  CHECK(c.max_rel_error == doctest::Approx(0.01 / 1.01));
}
