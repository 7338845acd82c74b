#pragma once

#include <functional>
#include <string>
#include <vector>

#include "palette_field/field.hpp"
#include "palette_field/palette.hpp"
#include "palette_field/scene.hpp"

namespace palette_field::testing {

// A 4^3 field with N_p = 3 and one 4x2 camera (8 rays) looking into the box.
struct FdFixture {
  FieldParams params;
  SceneDataset dataset;
  SupervisionWeights supervision;
  std::vector<uint32_t> pixels;
};

FdFixture make_fd_fixture(uint64_t seed);

struct GradientCheck {
  std::string name;
  size_t entries = 0;
  double max_rel_error = 0;
  double tolerance = 0;
  bool ok() const { return entries > 0 && max_rel_error <= tolerance; }
};

// Relative error |fd - an| / max(|fd|, |an|, 1e-6 * G), G the largest magnitude in the check.
class GradientChecker {
 public:
  explicit GradientChecker(std::string name, double tol) { check_.name = std::move(name), check_.tolerance = tol; }
  void add(double fd, double analytic) { pairs_.emplace_back(fd, analytic); }
  GradientCheck finish();

 private:
  GradientCheck check_;
  std::vector<std::pair<double, double>> pairs_;
};

// Central difference of `loss` w.r.t. x[i], stepping by h in storage precision and
// dividing by the step actually taken.
template <class T>
double central_difference(T& x, double h, const std::function<double()>& loss) {
  const T x0 = x;
  x = static_cast<T>(x0 + h);
  const double hp = static_cast<double>(x) - static_cast<double>(x0);
  const double lp = loss();
  x = static_cast<T>(x0 - h);
  const double hm = static_cast<double>(x0) - static_cast<double>(x);
  const double lm = loss();
  x = x0;
  return (lp - lm) / (hp + hm);
}

// Every loss term and the compositing and color composition forward passes, each
// against central differences (step h, relative tolerance tol).
std::vector<GradientCheck> run_gradient_suite(double h = 1e-3, double tol = 1e-3, uint64_t seed = 1);

}  // namespace palette_field::testing
