#include "palette_field/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "palette_field/losses.hpp"
#include "palette_field/render.hpp"

namespace palette_field {

using nlohmann::json;

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::kInvalidArgument, "psnr: image shapes differ");
  if (a.data.empty()) throw Error(ErrorKind::kInvalidArgument, "psnr: empty image");
  double se = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double sparsity_metric(const FieldParams& params, const SceneDataset& dataset, int n_rays,
                       uint64_t seed, int samples, int threads) {
  if (!params.has_palette()) throw Error(ErrorKind::kInvalidArgument, "sparsity needs a palette");
  if (n_rays < 1 || dataset.pixel_count() == 0) {
    throw Error(ErrorKind::kInvalidArgument, "sparsity needs at least one ray");
  }
  const int n = params.n_p();
  const int workers = resolve_threads(threads);
  std::vector<double> num(workers, 0.0), den(workers, 0.0);
  parallel_for(n_rays, workers, [&](int64_t b, int64_t e, int wk) {
    double g[kMaxPalettes];
    for (int64_t r = b; r < e; ++r) {
      CounterRng rng(seed, 0x5ba5, static_cast<uint64_t>(r));
      const size_t pix = static_cast<size_t>(rng.uniform() * dataset.pixel_count());
      Ray ray = dataset.pixel_ray(pix);
      if (!clip_to_aabb(ray, params.aabb)) continue;
      const RaySamples rs = sample_ray(ray, samples, false);
      double trans = 1.0;
      for (int i = 0; i < samples; ++i) {
        const PointSample ps = query_point(params, rs.x[i], ray.direction, kEvalDensity | kEvalOmega);
        const double w = std::exp(-rs.dt[i] * ps.sigma);
        const double a = trans * (1.0 - w);
        trans *= w;
        if (a > 0) {
          num[wk] += a * sparsity_point(ps.omega.data(), n, g);
          den[wk] += a;
        }
        if (trans < 1e-4) break;
      }
    }
  });
  const double tn = std::accumulate(num.begin(), num.end(), 0.0);
  const double td = std::accumulate(den.begin(), den.end(), 0.0);
  return td > 0 ? tn / td : 0.0;
}

double tv_metric(const std::vector<Image>& maps) {
  if (maps.empty()) return 0.0;
  double total = 0;
  for (const Image& m : maps) {
    if (m.channels != 1 || !m.same_shape(maps.front())) {
      throw Error(ErrorKind::kInvalidArgument, "tv: weight maps must be single-channel, same shape");
    }
    double s = 0;
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        if (x + 1 < m.width) s += std::abs(static_cast<double>(m.at(x + 1, y, 0)) - m.at(x, y, 0));
        if (y + 1 < m.height) s += std::abs(static_cast<double>(m.at(x, y + 1, 0)) - m.at(x, y, 0));
      }
    }
    total += s / static_cast<double>(m.pixel_count());
  }
  return total / static_cast<double>(maps.size());
}

double palette_error(const std::vector<Vec3>& p, const std::vector<Vec3>& truth) {
  if (p.size() != truth.size() || p.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "palette_error: sizes differ or are empty");
  }
  if (p.size() > static_cast<size_t>(kMaxPalettes)) {
    throw Error(ErrorKind::kInvalidArgument, "palette_error: at most 8 colors");
  }
  std::vector<int> perm(p.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (size_t i = 0; i < p.size(); ++i) s += norm(p[i] - truth[perm[i]]);
    best = std::min(best, s / static_cast<double>(p.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

namespace {

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::kInvalidArgument, "bad metric value " + s);
  }
  return j.get<double>();
}

}  // namespace

json metrics_to_json(const MetricsReport& r) {
  json j{{"psnr", number_or_inf(r.psnr)}, {"sparsity", r.sparsity}, {"tv", r.tv}};
  j["palette_err"] = r.palette_err ? json(*r.palette_err) : json(nullptr);
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport r;
  try {
    r.psnr = number_from(j.at("psnr"));
    r.sparsity = j.at("sparsity").get<double>();
    r.tv = j.at("tv").get<double>();
    if (j.contains("palette_err") && !j["palette_err"].is_null()) r.palette_err = j["palette_err"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

MetricsReport evaluate(const FieldParams& params, const SceneDataset& train, const SceneDataset& eval,
                       const MetricsOptions& opts, const std::vector<Vec3>* truth) {
  MetricsReport r;
  RenderOptions ro = render_options_for(eval, opts.samples);
  ro.threads = opts.threads;
  double mse = 0;
  size_t values = 0;
  double tv = 0;
  for (size_t v = 0; v < eval.cameras.size(); ++v) {
    const RenderOutput out = render_view(params, eval.cameras[v], ro);
    const Image& ref = eval.images[v];
    if (!out.color.same_shape(ref)) throw Error(ErrorKind::kInvalidArgument, "eval image shape mismatch");
    for (size_t i = 0; i < ref.data.size(); ++i) {
      const double d = static_cast<double>(out.color.data[i]) - ref.data[i];
      mse += d * d;
    }
    values += ref.data.size();
    if (params.has_palette()) tv += tv_metric(out.weight_maps);
  }
  if (values > 0) {
    mse /= static_cast<double>(values);
    r.psnr = mse == 0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
  }
  if (params.has_palette()) {
    r.tv = eval.cameras.empty() ? 0.0 : tv / static_cast<double>(eval.cameras.size());
    r.sparsity = sparsity_metric(params, train, opts.sparsity_rays, opts.seed, opts.samples, opts.threads);
    if (truth) r.palette_err = palette_error(params.palette.current, *truth);
  }
  return r;
}

}  // namespace palette_field
