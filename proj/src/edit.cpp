#include "palette_field/edit.hpp"

#include <Eigen/Dense>

namespace palette_field {

using nlohmann::json;

void validate_edit(const EditState& edit, int n_p) {
  for (const PaletteEdit& e : edit.palette_edits) {
    if (e.index < 0 || e.index >= n_p) {
      throw Error(ErrorKind::kInvalidArgument,
                  "palette index " + std::to_string(e.index) + " out of range for N_p=" +
                      std::to_string(n_p));
    }
    if (!std::isfinite(e.dh) || !std::isfinite(e.ds) || !std::isfinite(e.dv)) {
      throw Error(ErrorKind::kInvalidArgument, "non-finite HSV delta");
    }
  }
  if (!(edit.k_s >= 0) || !std::isfinite(edit.k_s)) {
    throw Error(ErrorKind::kInvalidArgument, "k_s must be a finite value >= 0");
  }
  if (!(edit.k_delta >= 0) || !std::isfinite(edit.k_delta)) {
    throw Error(ErrorKind::kInvalidArgument, "k_delta must be a finite value >= 0");
  }
  if (edit.style && static_cast<int>(edit.style->size()) != n_p) {
    throw Error(ErrorKind::kInvalidArgument, "style needs one transform per palette");
  }
}

namespace {

Vec3 vec3_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorKind::kInvalidArgument, std::string(what) + " must be [r,g,b]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

double number_or(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number()) {
    throw Error(ErrorKind::kInvalidArgument, std::string(key) + " must be a number");
  }
  return j[key].get<double>();
}

}  // namespace

EditState edit_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidArgument, "edit must be a JSON object");
  EditState e;
  if (j.contains("palette_edits") && !j["palette_edits"].is_null()) {
    if (!j["palette_edits"].is_array()) {
      throw Error(ErrorKind::kInvalidArgument, "palette_edits must be an array");
    }
    for (const json& pe : j["palette_edits"]) {
      if (!pe.is_object() || !pe.contains("i") || !pe["i"].is_number_integer()) {
        throw Error(ErrorKind::kInvalidArgument, "palette edit needs an integer \"i\"");
      }
      PaletteEdit p;
      p.index = pe["i"].get<int>();
      p.dh = number_or(pe, "dh", 0.0);
      p.ds = number_or(pe, "ds", 0.0);
      p.dv = number_or(pe, "dv", 0.0);
      if (pe.contains("target") && !pe["target"].is_null()) {
        p.target = vec3_from_json(pe["target"], "target");
      }
      e.palette_edits.push_back(p);
    }
  }
  e.k_s = number_or(j, "k_s", 1.0);
  e.k_delta = number_or(j, "k_delta", 1.0);
  if (j.contains("style") && !j["style"].is_null()) {
    if (!j["style"].is_array()) throw Error(ErrorKind::kInvalidArgument, "style must be an array");
    std::vector<AffineColorTransform> ts;
    for (const json& t : j["style"]) {
      AffineColorTransform a;
      if (!t.contains("A") || !t["A"].is_array() || t["A"].size() != 9) {
        throw Error(ErrorKind::kInvalidArgument, "style transform needs a 9-element \"A\"");
      }
      for (int k = 0; k < 9; ++k) a.a[k] = t["A"][k].get<double>();
      a.b = vec3_from_json(t.value("b", json::array({0, 0, 0})), "b");
      ts.push_back(a);
    }
    e.style = ts;
  }
  return e;
}

json edit_to_json(const EditState& e) {
  json edits = json::array();
  for (const PaletteEdit& p : e.palette_edits) {
    json pe = {{"i", p.index}, {"dh", p.dh}, {"ds", p.ds}, {"dv", p.dv}};
    if (p.target) pe["target"] = {p.target->x, p.target->y, p.target->z};
    edits.push_back(pe);
  }
  json j = {{"palette_edits", edits}, {"k_s", e.k_s}, {"k_delta", e.k_delta}, {"style", nullptr}};
  if (e.style) {
    json ts = json::array();
    for (const AffineColorTransform& t : *e.style) {
      ts.push_back({{"A", t.a}, {"b", {t.b.x, t.b.y, t.b.z}}});
    }
    j["style"] = ts;
  }
  return j;
}

ResolvedEdit resolve_edit(const EditState& edit, const Palette& palette,
                          const std::vector<PaletteEdit>& baked) {
  const int n = palette.n_p();
  validate_edit(edit, n);
  ResolvedEdit r;
  r.n_p = n;
  r.k_s = edit.k_s;
  r.k_delta = edit.k_delta;
  auto accumulate = [&](const PaletteEdit& e) {
    if (e.index < 0 || e.index >= n) {
      throw Error(ErrorKind::kInvalidArgument, "palette index out of range");
    }
    Hsv& d = r.delta[e.index];
    if (e.target) {
      // Targets are display colors; V differences map back to normalized space.
      const Vec3 shown = palette.display_colors()[e.index];
      const Hsv a = rgb_to_hsv(shown), b = rgb_to_hsv(clamp01(*e.target));
      d.h += b.h - a.h;
      d.s += b.s - a.s;
      d.v += (b.v - a.v) / palette.mean_intensity;
    }
    d.h += e.dh;
    d.s += e.ds;
    d.v += e.dv;
  };
  for (const PaletteEdit& e : baked) accumulate(e);
  for (const PaletteEdit& e : edit.palette_edits) accumulate(e);
  for (int i = 0; i < n; ++i) {
    r.delta[i].h = wrap_hue(r.delta[i].h);
    r.shifted[i] = r.delta[i].h != 0.0 || r.delta[i].s != 0.0 || r.delta[i].v != 0.0;
  }
  if (edit.style) {
    r.has_style = true;
    for (int i = 0; i < n; ++i) r.style[i] = (*edit.style)[i];
  }
  return r;
}

Vec3 shift_hsv(const Vec3& rgb, const Hsv& delta) {
  Hsv h = rgb_to_hsv(rgb);
  h.h = wrap_hue(h.h + delta.h);
  h.s = std::clamp(h.s + delta.s, 0.0, 1.0);
  h.v = std::clamp(h.v + delta.v, 0.0, 1.0);
  return hsv_to_rgb(h);
}

Vec3 apply_edit(const FieldParams& params, const PointSample& ps, const ResolvedEdit& edit) {
  const int n = ps.n_p;
  Vec3 soft[kMaxPalettes];
  for (int i = 0; i < n; ++i) {
    soft[i] = params.palette.current[i] + ps.delta[i] * edit.k_delta;
    if (edit.shifted[i]) soft[i] = shift_hsv(soft[i], edit.delta[i]);
    if (edit.has_style) soft[i] = edit.style[i].apply(soft[i]);
  }
  return clamp01(compose_color(ps.s * edit.k_s, ps.intensity, ps.omega.data(), soft, n));
}

std::vector<Vec3> edited_palette(const Palette& palette, const ResolvedEdit& edit) {
  std::vector<Vec3> out = palette.current;
  for (int i = 0; i < palette.n_p(); ++i) {
    if (edit.shifted[i]) out[i] = shift_hsv(out[i], edit.delta[i]);
  }
  return out;
}

void bake_palette_edit(FieldParams& params, json& extra, const ResolvedEdit& edit) {
  const int n = params.n_p();
  json base = json::array(), edits = json::array();
  for (int i = 0; i < n; ++i) {
    const Vec3& c = params.palette.current[i];
    base.push_back({c.x, c.y, c.z});
    if (edit.shifted[i]) {
      edits.push_back({{"i", i}, {"dh", edit.delta[i].h}, {"ds", edit.delta[i].s}, {"dv", edit.delta[i].v}});
    }
  }
  params.palette.current = edited_palette(params.palette, edit);
  extra["recolor"] = {{"base", base}, {"palette_edits", edits}};
}

std::vector<PaletteEdit> unbake_palette_edit(FieldParams& params, const json& extra) {
  std::vector<PaletteEdit> out;
  if (!extra.is_object() || !extra.contains("recolor")) return out;
  try {
    const json& r = extra["recolor"];
    const json& base = r.at("base");
    if (static_cast<int>(base.size()) != params.n_p()) {
      throw Error(ErrorKind::kCheckpoint, "recolor record does not match the palette size");
    }
    for (int i = 0; i < params.n_p(); ++i) {
      params.palette.current[i] = {base[i].at(0).get<double>(), base[i].at(1).get<double>(),
                                   base[i].at(2).get<double>()};
    }
    for (const json& e : r.at("palette_edits")) {
      PaletteEdit pe;
      pe.index = e.at("i").get<int>();
      pe.dh = e.value("dh", 0.0);
      pe.ds = e.value("ds", 0.0);
      pe.dv = e.value("dv", 0.0);
      if (pe.index < 0 || pe.index >= params.n_p()) {
        throw Error(ErrorKind::kCheckpoint, "recolor record has a bad palette index");
      }
      out.push_back(pe);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kCheckpoint, std::string("malformed recolor record: ") + e.what());
  }
  return out;
}

double local_opacity(const FieldParams& params, const Vec3& x, const Vec3& d) {
  const Vec3 e = params.aabb.extent();
  const double voxel = std::max({e.x / (params.dims[0] - 1), e.y / (params.dims[1] - 1),
                                 e.z / (params.dims[2] - 1)});
  constexpr int kSteps = 16;
  const double half = 2.0 * voxel, dt = 2.0 * half / kSteps;
  double optical = 0;
  for (int k = 0; k < kSteps; ++k) {
    const Vec3 p = x + d * (-half + (k + 0.5) * dt);
    optical += dt * query_point(params, p, d, kEvalDensity).sigma;
  }
  return 1.0 - std::exp(-optical);
}

StyleFit fit_style_transforms(const std::vector<StyleCorrespondence>& corr,
                              const FieldParams& params, double ridge) {
  if (corr.size() < 4) {
    throw Error(ErrorKind::kInsufficientData,
                "style transfer needs at least 4 correspondences, got " + std::to_string(corr.size()));
  }
  if (!params.has_palette()) throw Error(ErrorKind::kInvalidArgument, "checkpoint has no palette");
  const int n = params.n_p();
  const int rows = static_cast<int>(corr.size());
  std::vector<PointSample> samples;
  samples.reserve(rows);
  for (const StyleCorrespondence& c : corr) {
    const Vec3 d = normalized(c.direction);
    if (local_opacity(params, c.point, d) < 0.5) {
      throw Error(ErrorKind::kInvalidArgument, "correspondence point is not on a surface");
    }
    samples.push_back(query_point(params, c.point, d));
  }

  // Full model per output channel: 4 unknowns per palette (row of A_i, then b_i).
  const int full = 4 * n;
  StyleFit fit;
  fit.transforms.assign(n, AffineColorTransform{});
  std::array<Eigen::MatrixXd, 3> xs;
  std::array<Eigen::VectorXd, 3> ys;
  bool deficient = false;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, full);
    Eigen::VectorXd y(rows);
    for (int r = 0; r < rows; ++r) {
      const PointSample& ps = samples[r];
      y[r] = corr[r].target[c] - ps.s[c];
      for (int i = 0; i < n; ++i) {
        const Vec3 soft = params.palette.current[i] + ps.delta[i];
        const double g = ps.intensity * ps.omega[i];
        x(r, 4 * i) = g * soft.x;
        x(r, 4 * i + 1) = g * soft.y;
        x(r, 4 * i + 2) = g * soft.z;
        x(r, 4 * i + 3) = g;
      }
    }
    const Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(top > 0) || eig.eigenvalues().minCoeff() <= 1e-9 * top) deficient = true;
    xs[c] = std::move(x);
    ys[c] = std::move(y);
  }

  fit.diagonal_fallback = deficient;
  for (int c = 0; c < 3; ++c) {
    const Eigen::MatrixXd& x = xs[c];
    if (!deficient) {
      Eigen::VectorXd prior = Eigen::VectorXd::Zero(full);
      for (int i = 0; i < n; ++i) prior[4 * i + c] = 1.0;
      Eigen::MatrixXd lhs = x.transpose() * x;
      lhs.diagonal().array() += ridge;
      const Eigen::VectorXd theta = lhs.ldlt().solve(x.transpose() * ys[c] + ridge * prior);
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) fit.transforms[i].a[3 * c + k] = theta[4 * i + k];
        fit.transforms[i].b[c] = theta[4 * i + 3];
      }
    } else {
      // One scale per palette and channel, pulled toward 1.
      Eigen::MatrixXd xd(rows, n);
      for (int i = 0; i < n; ++i) xd.col(i) = x.col(4 * i + c);
      Eigen::MatrixXd lhs = xd.transpose() * xd;
      lhs.diagonal().array() += ridge;
      const Eigen::VectorXd theta =
          lhs.ldlt().solve(xd.transpose() * ys[c] + ridge * Eigen::VectorXd::Ones(n));
      for (int i = 0; i < n; ++i) fit.transforms[i].a[4 * c] = theta[i];
    }
  }
  return fit;
}

}  // namespace palette_field
