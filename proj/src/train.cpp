#include "palette_field/train.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "palette_field/render.hpp"

namespace palette_field {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorKind::kInvalidArgument, "epochs must be >= 0");
  if (batch_rays < 1) throw Error(ErrorKind::kInvalidArgument, "batch_rays must be >= 1");
  if (samples < 1) throw Error(ErrorKind::kInvalidArgument, "samples must be >= 1");
  if (!(lr > 0)) throw Error(ErrorKind::kInvalidArgument, "lr must be > 0");
  if (!(grid_lr_scale > 0)) throw Error(ErrorKind::kInvalidArgument, "grid_lr_scale must be > 0");
  if (palette_freeze_epochs < 0 || palette_freeze_epochs > epochs) {
    throw Error(ErrorKind::kInvalidArgument, "palette_freeze_epochs must lie in [0, epochs]");
  }
  if (sm_delay_epochs < 0 || sm_delay_epochs > epochs) {
    throw Error(ErrorKind::kInvalidArgument, "sm_delay_epochs must lie in [0, epochs]");
  }
  for (int d : grid) {
    if (d < 2) throw Error(ErrorKind::kInvalidArgument, "grid dims must be >= 2");
  }
  if (!(skip_alpha >= 0 && skip_alpha < 1)) {
    throw Error(ErrorKind::kInvalidArgument, "skip_alpha must lie in [0, 1)");
  }
  if (!(prune_alpha >= 0 && prune_alpha < 1) || prune_interval < 1) {
    throw Error(ErrorKind::kInvalidArgument, "prune_alpha must lie in [0, 1) and prune_interval be >= 1");
  }
  weights.validate();
}

json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_rays", c.batch_rays},
          {"samples", c.samples},
          {"lr", c.lr},
          {"grid_lr_scale", c.grid_lr_scale},
          {"seed", c.seed},
          {"weights", loss_weights_to_json(c.weights)},
          {"schedule", {{"palette_freeze_epochs", c.palette_freeze_epochs}, {"sm_delay_epochs", c.sm_delay_epochs}}},
          {"stage2_freeze_density", c.stage2_freeze_density},
          {"grad_clip", c.grad_clip},
          {"masked_adam", c.masked_adam},
          {"weighted_regularizers", c.weighted_regularizers},
          {"min_contribution", c.min_contribution},
          {"skip_alpha", c.skip_alpha},
          {"skip_warmup_epochs", c.skip_warmup_epochs},
          {"prune_alpha", c.prune_alpha},
          {"prune_interval", c.prune_interval},
          {"grid", c.grid},
          {"init",
           {{"density", c.init.density},
            {"diffuse", c.init.diffuse},
            {"viewdep", c.init.viewdep},
            {"intensity", c.init.intensity}}},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_rays = j.value("batch_rays", c.batch_rays);
    c.samples = j.value("samples", c.samples);
    c.lr = j.value("lr", c.lr);
    c.grid_lr_scale = j.value("grid_lr_scale", c.grid_lr_scale);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) c.weights = loss_weights_from_json(j["weights"]);
    if (j.contains("schedule")) {
      c.palette_freeze_epochs = j["schedule"].value("palette_freeze_epochs", c.palette_freeze_epochs);
      c.sm_delay_epochs = j["schedule"].value("sm_delay_epochs", c.sm_delay_epochs);
    }
    // Short schedules clamp the windows rather than failing validation.
    if (!j.contains("schedule") || !j["schedule"].contains("palette_freeze_epochs")) {
      c.palette_freeze_epochs = std::min(c.palette_freeze_epochs, c.epochs);
    }
    if (!j.contains("schedule") || !j["schedule"].contains("sm_delay_epochs")) {
      c.sm_delay_epochs = std::min(c.sm_delay_epochs, c.epochs);
    }
    c.stage2_freeze_density = j.value("stage2_freeze_density", c.stage2_freeze_density);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.masked_adam = j.value("masked_adam", c.masked_adam);
    c.weighted_regularizers = j.value("weighted_regularizers", c.weighted_regularizers);
    c.min_contribution = j.value("min_contribution", c.min_contribution);
    c.skip_alpha = j.value("skip_alpha", c.skip_alpha);
    c.skip_warmup_epochs = j.value("skip_warmup_epochs", c.skip_warmup_epochs);
    c.prune_alpha = j.value("prune_alpha", c.prune_alpha);
    c.prune_interval = j.value("prune_interval", c.prune_interval);
    if (j.contains("grid")) c.grid = j["grid"].get<GridDims>();
    if (j.contains("init")) {
      const json& i = j["init"];
      c.init.density = i.value("density", c.init.density);
      c.init.diffuse = i.value("diffuse", c.init.diffuse);
      c.init.viewdep = i.value("viewdep", c.init.viewdep);
      c.init.intensity = i.value("intensity", c.init.intensity);
    }
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

size_t prune_density(FieldParams& p, double alpha, double step, AdamState* state) {
  const GridDims d = p.dims;
  std::vector<float>& raw = p.density.data;
  // Raw threshold equivalent to alpha over the step, and the near-empty reset value.
  auto raw_for = [&](double a) {
    const double sp = -std::log1p(-a) / (step * p.density_scale);
    return std::log(std::expm1(sp));
  };
  const float thr = static_cast<float>(raw_for(alpha));
  const float empty = static_cast<float>(raw_for(1e-6));
  std::vector<char> occupied(raw.size());
  for (size_t v = 0; v < raw.size(); ++v) occupied[v] = raw[v] >= thr;
  size_t n = 0;
  for (int z = 0; z < d[2]; ++z) {
    for (int y = 0; y < d[1]; ++y) {
      for (int x = 0; x < d[0]; ++x) {
        bool near = false;
        for (int dz = -1; dz <= 1 && !near; ++dz) {
          for (int dy = -1; dy <= 1 && !near; ++dy) {
            for (int dx = -1; dx <= 1 && !near; ++dx) {
              const int xx = x + dx, yy = y + dy, zz = z + dz;
              if (xx < 0 || yy < 0 || zz < 0 || xx >= d[0] || yy >= d[1] || zz >= d[2]) continue;
              near = occupied[p.density.voxel_index(xx, yy, zz)];
            }
          }
        }
        const size_t v = p.density.voxel_index(x, y, z);
        if (near || raw[v] <= empty) continue;
        raw[v] = empty;
        if (state && state->m.size() == raw.size()) state->m[v] = state->v[v] = 0.0;
        ++n;
      }
    }
  }
  return n;
}

void write_loss_csv(const std::vector<LossBreakdown>& history, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f << loss_csv_header() << "\n";
  for (size_t e = 0; e < history.size(); ++e) f << loss_csv_row(static_cast<int>(e), history[e]) << "\n";
}

namespace {

constexpr uint64_t kJitterStream = 0x6a177e5;
constexpr uint64_t kShuffleStream = 0x5ff1e;
constexpr uint64_t kEpsStream = 0xe95;
constexpr double kTransmittanceCutoff = 1e-4;

std::vector<uint32_t> shuffled_pixels(size_t n, uint64_t seed, int epoch) {
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
  CounterRng rng(seed, kShuffleStream, static_cast<uint64_t>(epoch));
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform() * i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// Jittered stratified samples over the ray's clipped interval, written into reusable buffers.
void jittered_samples(const Ray& ray, int m, CounterRng& rng, std::vector<double>& t,
                      std::vector<double>& dt) {
  t.resize(m);
  dt.resize(m);
  const double bin = (ray.t_far - ray.t_near) / m;
  double prev = ray.t_near;
  for (int i = 0; i < m; ++i) {
    t[i] = ray.t_near + (i + rng.uniform()) * bin;
    dt[i] = t[i] - prev;
    prev = t[i];
  }
}

struct Trainable {
  std::string name;
  std::vector<float>* param;
  std::vector<float>* grad;
};

double squared_sum(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

// Sum of squares over `rows` (ascending) of a block with v.size() / voxels entries per row.
double squared_sum(const std::vector<float>& v, const std::vector<uint32_t>& rows, size_t voxels) {
  const size_t width = v.size() / voxels;
  double s = 0;
  for (uint32_t r : rows) {
    for (size_t i = r * width; i < (r + 1) * width; ++i) s += static_cast<double>(v[i]) * v[i];
  }
  return s;
}

// Clips by global norm, then steps Adam on every listed block and (optionally) the palette.
// With masked Adam and touched-voxel tracking only the touched voxels are visited; the
// result is the same because every other gradient entry is zero.
void optimizer_step(FieldParams& params, FieldGrads& g, const std::vector<Trainable>& blocks,
                    bool palette_trainable, std::map<std::string, AdamState>& states,
                    const TrainConfig& cfg) {
  const bool sparse = cfg.masked_adam && g.tracking();
  const std::vector<uint32_t> rows = sparse ? g.touched_rows() : std::vector<uint32_t>{};
  const size_t voxels = params.density.voxel_count();
  auto block_sq = [&](const Trainable& b) {
    return sparse ? squared_sum(*b.grad, rows, voxels) : squared_sum(*b.grad);
  };
  double sq = 0;
  for (const Trainable& b : blocks) sq += block_sq(b);
  if (palette_trainable) {
    for (double x : g.palette) sq += x * x;
  }
  const double total = std::sqrt(sq);
  if (!std::isfinite(total)) {
    for (const Trainable& b : blocks) {
      if (!std::isfinite(block_sq(b))) {
        throw Error(ErrorKind::kNonFiniteGradient, "non-finite gradient in " + b.name);
      }
    }
    throw Error(ErrorKind::kNonFiniteGradient, "non-finite gradient in palette");
  }
  if (cfg.grad_clip > 0 && total > cfg.grad_clip) {
    const double s = cfg.grad_clip / total;
    for (const Trainable& b : blocks) {
      if (sparse) {
        const size_t width = b.grad->size() / voxels;
        for (uint32_t r : rows) {
          for (size_t i = r * width; i < (r + 1) * width; ++i) {
            (*b.grad)[i] = static_cast<float>((*b.grad)[i] * s);
          }
        }
      } else {
        for (float& x : *b.grad) x = static_cast<float>(x * s);
      }
    }
    for (double& x : g.palette) x *= s;
  }
  AdamConfig ac;
  ac.lr = cfg.lr * cfg.grid_lr_scale;
  ac.skip_zero_grad = cfg.masked_adam;
  for (const Trainable& b : blocks) {
    if (sparse) {
      adam_step_rows(*b.param, *b.grad, rows, b.grad->size() / voxels, states[b.name], ac, b.name);
    } else {
      adam_step(*b.param, *b.grad, states[b.name], ac, b.name);
    }
  }
  ac.lr = cfg.lr;
  ac.skip_zero_grad = false;
  if (palette_trainable) {
    std::vector<double> flat(3 * params.n_p());
    for (int i = 0; i < params.n_p(); ++i) {
      for (int c = 0; c < 3; ++c) flat[3 * i + c] = params.palette.current[i][c];
    }
    adam_step(std::span<double>(flat), std::span<const double>(g.palette), states["palette"], ac, "palette");
    for (int i = 0; i < params.n_p(); ++i) params.palette.current[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
  }
}

void accumulate(LossBreakdown& into, const LossBreakdown& b, double w) {
  into.recon += w * b.recon;
  into.s += w * b.s;
  into.sp += w * b.sp;
  into.offset += w * b.offset;
  into.sm += w * b.sm;
  into.palette += w * b.palette;
  into.weight += w * b.weight;
  into.perpoint += w * b.perpoint;
}

// ---------------- stage 1 ----------------

struct GeometryScratch {
  std::vector<double> t, dt, trans, w, a;
  std::vector<char> skipped;
  std::vector<PointSample> ps;
  std::vector<Vec3> v, u;
};

void geometry_ray(const FieldParams& p, const SceneDataset& ds, uint32_t pix, int epoch,
                  const TrainConfig& cfg, double inv_b, GeometryScratch& sc, FieldGrads& g,
                  LossBreakdown& acc) {
  Ray ray = ds.pixel_ray(pix);
  const Vec3 ref = ds.pixel_color(pix);
  const Vec3 bg = ds.background;
  if (!clip_to_aabb(ray, p.aabb)) {
    acc.recon += squared_norm(bg - ref) * inv_b;
    return;
  }
  const int m_max = cfg.samples;
  CounterRng rng(cfg.seed, kJitterStream + static_cast<uint64_t>(epoch), pix);
  jittered_samples(ray, m_max, rng, sc.t, sc.dt);
  sc.trans.resize(m_max);
  sc.w.resize(m_max);
  sc.a.resize(m_max);
  sc.ps.resize(m_max);
  sc.v.resize(m_max);
  sc.u.resize(m_max);
  sc.skipped.resize(m_max);
  const bool skipping = cfg.skip_alpha > 0 && epoch >= cfg.skip_warmup_epochs;
  // Largest raw density whose opacity over a step stays below skip_alpha, per unit step.
  const double skip_optical = -std::log1p(-cfg.skip_alpha) / p.density_scale;
  double trans = 1.0;
  Vec3 color;
  int m = 0;
  while (m < m_max) {
    PointSample& ps = sc.ps[m];
    ps.stencil = trilinear_stencil(p.dims, p.aabb, ray.origin + ray.direction * sc.t[m]);
    complete_point(p, ps, ray.direction, kEvalDensity);
    bool skip = false;
    if (skipping) {
      float mx = -std::numeric_limits<float>::infinity();
      for (int k = 0; k < 8; ++k) {
        if (ps.stencil.weight[k] != 0.0) mx = std::max(mx, p.density.data[ps.stencil.voxel[k]]);
      }
      skip = sc.dt[m] * softplus(mx) < skip_optical;
    }
    const double w = std::exp(-sc.dt[m] * ps.sigma);
    sc.skipped[m] = skip;
    sc.trans[m] = trans;
    sc.w[m] = w;
    sc.a[m] = trans * (1.0 - w);
    if (!skip) {
      complete_point(p, ps, ray.direction, kEvalDiffuse | kEvalViewdep);
      sc.u[m] = ps.c_d + ps.s;
      sc.v[m] = clamp01(sc.u[m]);
      color += sc.v[m] * sc.a[m];
    }
    trans *= w;
    ++m;
    if (trans < kTransmittanceCutoff) break;
  }
  color += bg * trans;
  const Vec3 g1 = (color - ref) * (2.0 * inv_b);
  acc.recon += squared_norm(color - ref) * inv_b;
  double suffix = trans * dot(g1, bg);
  const double lpp = cfg.weights.perpoint;
  for (int k = m - 1; k >= 0; --k) {
    if (sc.skipped[k]) continue;
    const double gv = dot(g1, sc.v[k]);
    PointGrad pg;
    pg.sigma = sc.dt[k] * (sc.trans[k] * sc.w[k] * gv - suffix);
    suffix += sc.a[k] * gv;
    const Vec3 e = sc.v[k] - ref;
    acc.perpoint += sc.a[k] * squared_norm(e) * inv_b;
    Vec3 dv = g1 * sc.a[k] + e * (lpp * 2.0 * sc.a[k] * inv_b);
    for (int c = 0; c < 3; ++c) {
      if (sc.u[k][c] < 0.0 || sc.u[k][c] > 1.0) dv[c] = 0.0;
    }
    pg.c_d = dv;
    pg.s = dv;
    backprop_point(p, sc.ps[k], pg, g);
  }
}

// ---------------- stage 2 ----------------

struct CachedPoint {
  TrilinearStencil stencil;
  Vec3 x;
  double a, trans, w, dt, raw_density;
};

struct CachedRay {
  uint32_t pix;
  uint32_t first, count;
  double trans_final;
  bool hit;
};

struct DecompScratch {
  std::vector<double> t, dt;
  std::vector<CachedPoint> points;
  std::vector<CachedRay> rays;
  std::vector<PointSample> ps;
  double contribution = 0;
  size_t shaded = 0;
};

void decomposition_pass1(const FieldParams& p, const SceneDataset& ds, uint32_t pix, int epoch,
                         const TrainConfig& cfg, bool density_trainable, DecompScratch& sc) {
  CachedRay cr{pix, static_cast<uint32_t>(sc.points.size()), 0, 1.0, false};
  Ray ray = ds.pixel_ray(pix);
  if (clip_to_aabb(ray, p.aabb)) {
    cr.hit = true;
    CounterRng rng(cfg.seed, kJitterStream + static_cast<uint64_t>(epoch), pix);
    jittered_samples(ray, cfg.samples, rng, sc.t, sc.dt);
    double trans = 1.0;
    const double min_c = density_trainable ? 0.0 : cfg.min_contribution;
    for (int i = 0; i < cfg.samples; ++i) {
      CachedPoint cp;
      cp.x = ray.origin + ray.direction * sc.t[i];
      cp.stencil = trilinear_stencil(p.dims, p.aabb, cp.x);
      gather(p.density.data.data(), 1, cp.stencil, &cp.raw_density);
      const double sigma = p.density_scale * softplus(cp.raw_density);
      cp.w = std::exp(-sc.dt[i] * sigma);
      cp.trans = trans;
      cp.a = trans * (1.0 - cp.w);
      cp.dt = sc.dt[i];
      trans *= cp.w;
      if (density_trainable || (cp.a > 0.0 && cp.a >= min_c)) {
        sc.points.push_back(cp);
        sc.contribution += cp.a;
        ++sc.shaded;
      }
      if (trans < kTransmittanceCutoff) break;
    }
    cr.trans_final = trans;
  }
  cr.count = static_cast<uint32_t>(sc.points.size()) - cr.first;
  sc.rays.push_back(cr);
}

struct DecompContext {
  const FieldParams* params;
  const SceneDataset* ds;
  const SupervisionWeights* sup;
  const TrainConfig* cfg;
  LossWeights lw;  // resolved
  ScheduleFlags flags;
  bool density_trainable;
  int epoch;
  double inv_b;
  double inv_sup;   // 1 / supervised rays in the batch
  double reg_norm;  // 1 / (total contribution) or 1 / (shaded points)
};

void decomposition_ray(const DecompContext& ctx, const CachedRay& cr, DecompScratch& sc,
                       FieldGrads& g, LossBreakdown& acc) {
  const FieldParams& p = *ctx.params;
  const int n = p.n_p();
  const Vec3 ref = ctx.ds->pixel_color(cr.pix);
  const Vec3 bg = ctx.ds->background;
  const Vec3 dir = ctx.ds->pixel_ray(cr.pix).direction;
  const float* target = ctx.sup->row(cr.pix);
  bool supervised = false;
  for (int i = 0; i < n; ++i) supervised |= target[i] != 0.0f;
  const bool use_weight = supervised && ctx.flags.weight_active;

  sc.ps.resize(cr.count);
  Vec3 color, cds;
  std::array<double, kMaxPalettes> wmap{};
  for (uint32_t k = 0; k < cr.count; ++k) {
    const CachedPoint& cp = sc.points[cr.first + k];
    PointSample& ps = sc.ps[k];
    ps.stencil = cp.stencil;
    ps.raw_density = cp.raw_density;
    complete_point(p, ps, dir, kEvalDiffuse | kEvalViewdep | kEvalPalette);
    color += ps.composed * cp.a;
    cds += (ps.c_d + ps.s) * cp.a;
    for (int i = 0; i < n; ++i) wmap[i] += cp.a * ps.omega[i];
  }
  color += bg * cr.trans_final;
  cds += bg * cr.trans_final;
  const Vec3 g1 = (color - ref) * (2.0 * ctx.inv_b);
  const Vec3 g2 = (cds - ref) * (2.0 * ctx.inv_b);
  acc.recon += (squared_norm(color - ref) + squared_norm(cds - ref)) * ctx.inv_b;
  std::array<double, kMaxPalettes> gw{};
  if (use_weight) {
    double v = 0;
    for (int i = 0; i < n; ++i) {
      const double d = wmap[i] - target[i];
      v += d * d;
      gw[i] = ctx.lw.weight * 2.0 * d * ctx.inv_sup;
    }
    acc.weight += v * ctx.inv_sup;
  }

  double suffix = 0;
  if (ctx.density_trainable) suffix = cr.trans_final * (dot(g1, bg) + dot(g2, bg));
  const uint64_t eps_seed = ctx.cfg->seed ^ kEpsStream;
  CounterRng eps_rng(eps_seed, static_cast<uint64_t>(ctx.epoch), cr.pix);
  for (int k = static_cast<int>(cr.count) - 1; k >= 0; --k) {
    const CachedPoint& cp = sc.points[cr.first + k];
    const PointSample& ps = sc.ps[k];
    const double q = ctx.cfg->weighted_regularizers ? cp.a * ctx.reg_norm : ctx.reg_norm;
    PointGrad pg;
    pg.composed = g1 * cp.a;
    pg.c_d = g2 * cp.a;
    pg.s = g2 * cp.a;
    for (int i = 0; i < n; ++i) pg.omega[i] = gw[i] * cp.a;

    if (ctx.density_trainable) {
      double gv = dot(g1, ps.composed) + dot(g2, ps.c_d + ps.s);
      for (int i = 0; i < n; ++i) gv += gw[i] * ps.omega[i];
      pg.sigma = cp.dt * (cp.trans * cp.w * gv - suffix);
      suffix += cp.a * gv;
    }

    Vec3 gs;
    acc.s += q * viewdep_point(ps.s, gs);
    pg.s += gs * (ctx.lw.s * q);

    double gsp[kMaxPalettes];
    acc.sp += q * sparsity_point(ps.omega.data(), n, gsp);
    for (int i = 0; i < n; ++i) pg.omega[i] += ctx.lw.sp * q * gsp[i];

    Vec3 goff[kMaxPalettes];
    acc.offset += q * offset_point(ps.delta.data(), n, goff);
    for (int i = 0; i < n; ++i) pg.delta[i] += goff[i] * (ctx.lw.offset * q);

    if (ctx.flags.sm_active) {
      const Vec3 eps{eps_rng.normal() * ctx.lw.eps_std, eps_rng.normal() * ctx.lw.eps_std,
                     eps_rng.normal() * ctx.lw.eps_std};
      const Vec3 y = cp.x + eps;
      PointSample py = query_point(p, y, dir, kEvalDiffuse | kEvalOmega);
      const double xi = smooth_affinity(cp.x, y, ps.c_d, py.c_d, ctx.lw.sigma_x, ctx.lw.sigma_c);
      double gx[kMaxPalettes], gy[kMaxPalettes];
      acc.sm += q * smooth_point(xi, ps.omega.data(), py.omega.data(), n, gx, gy);
      PointGrad pgy;
      for (int i = 0; i < n; ++i) {
        pg.omega[i] += ctx.lw.sm * q * gx[i];
        pgy.omega[i] = ctx.lw.sm * q * gy[i];
      }
      backprop_point(p, py, pgy, g);
    }
    backprop_point(p, ps, pg, g);
  }
}

std::vector<Trainable> trainables(FieldParams& p, FieldGrads& g) {
  std::vector<Trainable> out;
  if (!g.density.empty()) out.push_back({"density", &p.density.data, &g.density});
  out.push_back({"diffuse", &p.diffuse.data, &g.diffuse});
  out.push_back({"viewdep_sh", &p.viewdep_sh.data, &g.viewdep_sh});
  if (!g.weight_logits.empty()) {
    out.push_back({"weight_logits", &p.weight_logits.data, &g.weight_logits});
    out.push_back({"offsets", &p.offsets.data, &g.offsets});
    out.push_back({"intensity", &p.intensity.data, &g.intensity});
  }
  return out;
}

// Per-worker buffers for one stage-1 batch; grads[0] holds the merged gradient afterwards.
struct GeometryRunner {
  int threads;
  std::vector<FieldGrads> grads;
  std::vector<GeometryScratch> scratch;

  GeometryRunner(const FieldParams& p, int threads_)
      : threads(threads_), grads(threads_, FieldGrads::like(p, true, false)), scratch(threads_) {
    for (FieldGrads& g : grads) g.track_touched(p.density.voxel_count());
  }

  LossBreakdown run(const FieldParams& p, const SceneDataset& ds, std::span<const uint32_t> pixels,
                    int epoch, const TrainConfig& cfg) {
    const double inv_b = 1.0 / static_cast<double>(pixels.size());
    std::vector<LossBreakdown> acc(threads);
    for (FieldGrads& g : grads) g.zero();
    parallel_for(static_cast<int64_t>(pixels.size()), threads, [&](int64_t s, int64_t e, int wk) {
      for (int64_t r = s; r < e; ++r) {
        geometry_ray(p, ds, pixels[r], epoch, cfg, inv_b, scratch[wk], grads[wk], acc[wk]);
      }
    });
    for (int wk = 1; wk < threads; ++wk) grads[0].add(grads[wk]);
    LossBreakdown batch;
    for (const LossBreakdown& a : acc) accumulate(batch, a, 1.0);
    return batch;
  }
};

LossWeights geometry_weights(const TrainConfig& cfg) {
  LossWeights w;
  w.s = w.sp = w.offset = w.sm = w.palette = w.weight = 0;
  w.perpoint = cfg.weights.perpoint;
  return w;
}

struct DecompRunner {
  int threads;
  bool density_trainable;
  std::vector<FieldGrads> grads;
  std::vector<DecompScratch> scratch;

  DecompRunner(const FieldParams& p, int threads_, bool density_trainable_)
      : threads(threads_),
        density_trainable(density_trainable_),
        grads(threads_, FieldGrads::like(p, density_trainable_, true)),
        scratch(threads_) {
    for (FieldGrads& g : grads) g.track_touched(p.density.voxel_count());
  }

  // Gradients of every term except the palette prior land in grads[0]; the prior's
  // gradient (unweighted) goes to `palette_grad`.
  LossBreakdown run(const FieldParams& p, const SceneDataset& ds, const SupervisionWeights& sup,
                    std::span<const uint32_t> pixels, int epoch, const TrainConfig& cfg,
                    const LossWeights& lw, std::vector<Vec3>& palette_grad) {
    const int n = p.n_p();
    const int64_t nb = static_cast<int64_t>(pixels.size());
    size_t n_sup = 0;
    for (uint32_t pix : pixels) {
      const float* row = sup.row(pix);
      for (int i = 0; i < n; ++i) {
        if (row[i] != 0.0f) {
          ++n_sup;
          break;
        }
      }
    }
    for (DecompScratch& sc : scratch) {
      sc.points.clear();
      sc.rays.clear();
      sc.contribution = 0;
      sc.shaded = 0;
    }
    parallel_for(nb, threads, [&](int64_t s, int64_t e, int wk) {
      for (int64_t r = s; r < e; ++r) {
        decomposition_pass1(p, ds, pixels[r], epoch, cfg, density_trainable, scratch[wk]);
      }
    });
    double total_a = 0;
    size_t total_shaded = 0;
    for (const DecompScratch& sc : scratch) {
      total_a += sc.contribution;
      total_shaded += sc.shaded;
    }
    DecompContext ctx;
    ctx.params = &p;
    ctx.ds = &ds;
    ctx.sup = &sup;
    ctx.cfg = &cfg;
    ctx.lw = lw;
    ctx.flags = decomposition_flags(cfg, epoch);
    ctx.density_trainable = density_trainable;
    ctx.epoch = epoch;
    ctx.inv_b = 1.0 / static_cast<double>(nb);
    ctx.inv_sup = n_sup ? 1.0 / static_cast<double>(n_sup) : 0.0;
    if (cfg.weighted_regularizers) {
      ctx.reg_norm = total_a > 0 ? 1.0 / total_a : 0.0;
    } else {
      ctx.reg_norm = total_shaded ? 1.0 / static_cast<double>(total_shaded) : 0.0;
    }
    std::vector<LossBreakdown> acc(threads);
    for (FieldGrads& g : grads) g.zero();
    parallel_for(nb, threads, [&](int64_t, int64_t, int wk) {
      DecompScratch& sc = scratch[wk];
      for (const CachedRay& cr : sc.rays) decomposition_ray(ctx, cr, sc, grads[wk], acc[wk]);
    });
    for (int wk = 1; wk < threads; ++wk) grads[0].add(grads[wk]);
    LossBreakdown batch;
    for (const LossBreakdown& a : acc) accumulate(batch, a, 1.0);
    batch.palette = loss_palette(p.palette.current, p.palette.extracted, &palette_grad);
    return batch;
  }
};

}  // namespace

ScheduleFlags decomposition_flags(const TrainConfig& cfg, int epoch) {
  ScheduleFlags f;
  f.weight_active = epoch < cfg.palette_freeze_epochs;
  f.sm_active = epoch >= cfg.sm_delay_epochs;
  return f;
}

BatchResult geometry_batch(const FieldParams& params, const SceneDataset& dataset,
                           std::span<const uint32_t> pixels, int epoch, const TrainConfig& config) {
  if (pixels.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  GeometryRunner runner(params, 1);
  BatchResult r;
  r.loss = total_loss(runner.run(params, dataset, pixels, epoch, config), geometry_weights(config),
                      ScheduleFlags{false, false});
  r.grads = std::move(runner.grads[0]);
  return r;
}

BatchResult decomposition_batch(const FieldParams& params, const SceneDataset& dataset,
                                const SupervisionWeights& supervision,
                                std::span<const uint32_t> pixels, int epoch,
                                const TrainConfig& config) {
  if (pixels.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  if (!params.has_palette()) throw Error(ErrorKind::kInvalidArgument, "parameters carry no palette");
  DecompRunner runner(params, 1, !config.stage2_freeze_density);
  const LossWeights lw = config.weights.resolved(params.aabb);
  std::vector<Vec3> gp;
  const LossBreakdown raw = runner.run(params, dataset, supervision, pixels, epoch, config, lw, gp);
  BatchResult r;
  r.loss = total_loss(raw, lw, decomposition_flags(config, epoch));
  r.grads = std::move(runner.grads[0]);
  for (int i = 0; i < params.n_p(); ++i) {
    for (int c = 0; c < 3; ++c) r.grads.palette[3 * i + c] += lw.palette * gp[i][c];
  }
  return r;
}

TrainResult train_geometry(const SceneDataset& dataset, const TrainConfig& config,
                           const EpochCallback& on_epoch, const FieldParams* start) {
  config.validate();
  if (dataset.images.empty()) throw Error(ErrorKind::kInconsistentDataset, "dataset has no images");
  TrainResult res;
  res.params = start ? *start : FieldParams::create(config.grid, dataset.scene_aabb, config.init);
  FieldParams& p = res.params;
  GeometryRunner runner(p, resolve_threads(config.threads));
  std::map<std::string, AdamState> states;
  const size_t n_pix = dataset.pixel_count();
  const double prune_step = p.aabb.diagonal() / config.samples;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.prune_alpha > 0 && epoch >= config.skip_warmup_epochs &&
        (epoch - config.skip_warmup_epochs) % config.prune_interval == 0) {
      prune_density(p, config.prune_alpha, prune_step, &states["density"]);
    }
    const std::vector<uint32_t> order = shuffled_pixels(n_pix, config.seed, epoch);
    LossBreakdown epoch_loss;
    for (size_t b0 = 0; b0 < n_pix; b0 += config.batch_rays) {
      const size_t b1 = std::min(n_pix, b0 + config.batch_rays);
      const LossBreakdown batch =
          runner.run(p, dataset, std::span<const uint32_t>(order).subspan(b0, b1 - b0), epoch, config);
      optimizer_step(p, runner.grads[0], trainables(p, runner.grads[0]), false, states, config);
      accumulate(epoch_loss, batch, static_cast<double>(b1 - b0) / n_pix);
    }
    res.history.push_back(total_loss(epoch_loss, geometry_weights(config), ScheduleFlags{false, false}));
    if (on_epoch) on_epoch(epoch, p, res.history.back());
  }
  return res;
}

TrainResult train_decomposition(const SceneDataset& dataset, const FieldParams& stage1,
                                const Palette& palette, const SupervisionWeights& supervision,
                                const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (palette.n_p() < 1) throw Error(ErrorKind::kInvalidArgument, "empty palette");
  if (supervision.n_p != palette.n_p() || supervision.size() != dataset.pixel_count()) {
    throw Error(ErrorKind::kInvalidArgument,
                "supervision weights must hold one N_p row per training pixel");
  }
  TrainResult res;
  res.params = stage1;
  FieldParams& p = res.params;
  p.attach_palette(palette, config.init);
  const int n = p.n_p();
  DecompRunner runner(p, resolve_threads(config.threads), !config.stage2_freeze_density);
  std::map<std::string, AdamState> states;
  const LossWeights lw = config.weights.resolved(p.aabb);
  const size_t n_pix = dataset.pixel_count();
  std::vector<Vec3> gp;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const ScheduleFlags flags = decomposition_flags(config, epoch);
    const bool palette_trainable = epoch >= config.palette_freeze_epochs;
    const std::vector<uint32_t> order = shuffled_pixels(n_pix, config.seed, epoch);
    LossBreakdown epoch_loss;
    for (size_t b0 = 0; b0 < n_pix; b0 += config.batch_rays) {
      const size_t b1 = std::min(n_pix, b0 + config.batch_rays);
      const LossBreakdown batch = runner.run(
          p, dataset, supervision, std::span<const uint32_t>(order).subspan(b0, b1 - b0), epoch,
          config, lw, gp);
      FieldGrads& g = runner.grads[0];
      if (palette_trainable) {
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < 3; ++c) g.palette[3 * i + c] += lw.palette * gp[i][c];
        }
      }
      optimizer_step(p, g, trainables(p, g), palette_trainable, states, config);
      accumulate(epoch_loss, batch, static_cast<double>(b1 - b0) / n_pix);
    }
    LossWeights w = lw;
    w.perpoint = 0;
    res.history.push_back(total_loss(epoch_loss, w, flags));
    if (on_epoch) on_epoch(epoch, p, res.history.back());
  }
  return res;
}

}  // namespace palette_field
