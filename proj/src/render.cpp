#include "palette_field/render.hpp"

#include "palette_field/edit.hpp"

namespace palette_field {

RaySamples sample_ray(const Ray& ray, int samples, bool jitter, CounterRng* rng) {
  if (samples < 1) throw Error(ErrorKind::kInvalidArgument, "need at least one sample per ray");
  RaySamples rs;
  rs.t.resize(samples);
  rs.dt.resize(samples);
  rs.x.resize(samples);
  const double bin = (ray.t_far - ray.t_near) / samples;
  double prev = ray.t_near;
  for (int i = 0; i < samples; ++i) {
    const double u = (jitter && rng) ? rng->uniform() : 0.5;
    const double t = ray.t_near + (i + u) * bin;
    rs.t[i] = t;
    rs.dt[i] = t - prev;
    rs.x[i] = ray.origin + ray.direction * t;
    prev = t;
  }
  return rs;
}

CompositeResult composite(std::span<const double> values, int channels,
                          std::span<const double> sigmas, std::span<const double> dts,
                          std::span<const double> background) {
  const size_t m = sigmas.size();
  CompositeResult r;
  r.value.assign(channels, 0.0);
  r.contribution.resize(m);
  double trans = 1.0;
  for (size_t i = 0; i < m; ++i) {
    const double w = std::exp(-dts[i] * sigmas[i]);
    const double a = trans * (1.0 - w);
    r.contribution[i] = a;
    for (int c = 0; c < channels; ++c) r.value[c] += a * values[i * channels + c];
    r.opacity += a;
    trans *= w;
  }
  r.transmittance = trans;
  if (!background.empty()) {
    for (int c = 0; c < channels; ++c) r.value[c] += trans * background[c];
  }
  return r;
}

CompositeGrads composite_backprop(std::span<const double> values, int channels,
                                  std::span<const double> sigmas, std::span<const double> dts,
                                  std::span<const double> upstream,
                                  std::span<const double> background) {
  const size_t m = sigmas.size();
  CompositeGrads g;
  g.dvalues.assign(m * channels, 0.0);
  g.dsigmas.assign(m, 0.0);
  std::vector<double> trans(m), w(m), a(m), gv(m);
  double t = 1.0;
  for (size_t i = 0; i < m; ++i) {
    trans[i] = t;
    w[i] = std::exp(-dts[i] * sigmas[i]);
    a[i] = t * (1.0 - w[i]);
    double dotv = 0;
    for (int c = 0; c < channels; ++c) dotv += upstream[c] * values[i * channels + c];
    gv[i] = dotv;
    t *= w[i];
  }
  // suffix = sum_{j>i} a_j (g . v_j) + T_final (g . bg)
  double suffix = 0;
  if (!background.empty()) {
    for (int c = 0; c < channels; ++c) suffix += t * upstream[c] * background[c];
  }
  for (size_t k = m; k-- > 0;) {
    for (int c = 0; c < channels; ++c) g.dvalues[k * channels + c] = a[k] * upstream[c];
    g.dsigmas[k] = dts[k] * (trans[k] * w[k] * gv[k] - suffix);
    suffix += a[k] * gv[k];
  }
  return g;
}

RayRender render_ray(const FieldParams& params, Ray ray, const RenderOptions& opts) {
  RayRender out;
  ray.t_near = std::max(ray.t_near, opts.near);
  ray.t_far = std::min(ray.t_far, opts.far);
  if (!clip_to_aabb(ray, params.aabb)) {
    out.color = opts.background;
    return out;
  }
  const RaySamples rs = sample_ray(ray, opts.samples, false);
  const int n = params.n_p();
  double trans = 1.0;
  for (int i = 0; i < opts.samples; ++i) {
    PointSample ps;
    ps.stencil = trilinear_stencil(params.dims, params.aabb, rs.x[i]);
    complete_point(params, ps, ray.direction, kEvalDensity);
    const double w = std::exp(-rs.dt[i] * ps.sigma);
    const double a = trans * (1.0 - w);
    trans *= w;
    if (a > 0.0 && a >= opts.min_contribution) {
      complete_point(params, ps, ray.direction, kEvalDiffuse | kEvalViewdep | kEvalPalette);
      Vec3 c;
      if (n > 0) {
        c = opts.edit ? apply_edit(params, ps, *opts.edit) : ps.composed;
      } else {
        c = clamp01(ps.c_d + ps.s);
      }
      out.color += c * a;
      out.diffuse += ps.c_d * a;
      out.viewdep += ps.s * a;
      out.depth += a * rs.t[i];
      for (int k = 0; k < n; ++k) out.weights[k] += a * ps.omega[k];
    }
    out.opacity += a;
    if (trans < opts.transmittance_cutoff) break;
  }
  out.color += opts.background * trans;
  return out;
}

namespace {

RenderOutput make_output(int w, int h, int n_p) {
  RenderOutput out;
  out.width = w;
  out.height = h;
  out.color = Image(w, h, 3);
  out.diffuse = Image(w, h, 3);
  out.viewdep = Image(w, h, 3);
  out.depth = Image(w, h, 1);
  out.opacity = Image(w, h, 1);
  out.weight_maps.assign(n_p, Image(w, h, 1));
  return out;
}

}  // namespace

RenderOutput render_view(const FieldParams& params, const Camera& cam, const RenderOptions& opts) {
  const int n = params.n_p();
  RenderOutput out = make_output(cam.width, cam.height, n);
  parallel_for(cam.height, opts.threads, [&](int64_t y0, int64_t y1, int) {
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const RayRender r = render_ray(params, camera_ray(cam, x, static_cast<double>(y)), opts);
        const size_t p = static_cast<size_t>(y) * cam.width + x;
        for (int c = 0; c < 3; ++c) {
          out.color.data[p * 3 + c] = static_cast<float>(r.color[c]);
          out.diffuse.data[p * 3 + c] = static_cast<float>(r.diffuse[c]);
          out.viewdep.data[p * 3 + c] = static_cast<float>(r.viewdep[c]);
        }
        out.depth.data[p] = static_cast<float>(r.depth);
        out.opacity.data[p] = static_cast<float>(r.opacity);
        for (int k = 0; k < n; ++k) out.weight_maps[k].data[p] = static_cast<float>(r.weights[k]);
      }
    }
  });
  return out;
}

RenderOptions render_options_for(const SceneDataset& dataset, int samples) {
  RenderOptions opts;
  opts.samples = samples;
  opts.near = dataset.near;
  opts.far = dataset.far;
  opts.background = dataset.background;
  return opts;
}

RenderOutput render_function(const FieldFunction& fn, const Camera& cam, const Aabb& box,
                             const RenderOptions& opts) {
  RenderOutput out = make_output(cam.width, cam.height, 0);
  parallel_for(cam.height, opts.threads, [&](int64_t y0, int64_t y1, int) {
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        Ray ray = camera_ray(cam, x, static_cast<double>(y));
        ray.t_near = opts.near;
        ray.t_far = opts.far;
        Vec3 color;
        double depth = 0, opacity = 0, trans = 1.0;
        if (clip_to_aabb(ray, box)) {
          const RaySamples rs = sample_ray(ray, opts.samples, false);
          for (int i = 0; i < opts.samples; ++i) {
            double sigma = 0;
            Vec3 c;
            fn(rs.x[i], ray.direction, sigma, c);
            const double w = std::exp(-rs.dt[i] * sigma);
            const double a = trans * (1.0 - w);
            color += c * a;
            depth += a * rs.t[i];
            opacity += a;
            trans *= w;
            if (trans < opts.transmittance_cutoff) break;
          }
        }
        color += opts.background * trans;
        const size_t p = static_cast<size_t>(y) * cam.width + x;
        for (int c = 0; c < 3; ++c) out.color.data[p * 3 + c] = static_cast<float>(color[c]);
        out.depth.data[p] = static_cast<float>(depth);
        out.opacity.data[p] = static_cast<float>(opacity);
      }
    }
  });
  return out;
}

}  // namespace palette_field
