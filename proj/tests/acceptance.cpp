// Acceptance run: prints one PASS/FAIL line per criterion, exits non-zero on any FAIL.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "palette_field/checkpoint.hpp"
#include "palette_field/color.hpp"
#include "palette_field/edit.hpp"
#include "palette_field/metrics.hpp"
#include "palette_field/palette.hpp"
#include "palette_field/render.hpp"
#include "palette_field/synthetic.hpp"
#include "palette_field/train.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace palette_field;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Report {
  std::vector<std::pair<int, bool>> results;
  void line(int id, bool pass, const std::string& detail) {
    results.emplace_back(id, pass);
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
  }
  bool all_pass() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.second; });
  }
};

void progress(const char* what) {
  std::fprintf(stderr, "[acceptance] %s\n", what);
}

EpochCallback epoch_logger(const char* stage, int every) {
  return [stage, every, t0 = Clock::now()](int epoch, const FieldParams&, const LossBreakdown& l) {
    if (epoch % every == 0) {
      std::fprintf(stderr, "[%s] epoch %d total %.6f recon %.6f (%.0fs)\n", stage, epoch, l.total,
                   l.recon, seconds_since(t0));
    }
  };
}

bool same_bits(const FieldParams& a, const FieldParams& b) {
  auto ga = a.named_grids();
  auto gb = b.named_grids();
  if (ga.size() != gb.size() || a.density_scale != b.density_scale || !(a.aabb == b.aabb)) return false;
  for (size_t i = 0; i < ga.size(); ++i) {
    const auto& x = ga[i].second->data;
    const auto& y = gb[i].second->data;
    if (ga[i].first != gb[i].first || x.size() != y.size()) return false;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return a.palette == b.palette;
}

// Best assignment by mean distance, then the largest matched distance.
std::pair<double, double> matched_palette_distance(const std::vector<Vec3>& p, const std::vector<Vec3>& truth) {
  if (p.size() != truth.size()) return {INFINITY, INFINITY};
  std::vector<int> perm(p.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best_mean = INFINITY, best_max = INFINITY;
  do {
    double sum = 0, worst = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      const double d = norm(p[i] - truth[perm[i]]);
      sum += d;
      worst = std::max(worst, d);
    }
    if (sum / p.size() < best_mean) {
      best_mean = sum / p.size();
      best_max = worst;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_mean, best_max};
}

// Splits a loss CSV into its header and rows of raw cell strings.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::vector<std::string>& header) {
  std::ifstream f(path);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  if (std::getline(f, line)) header = split(line);
  while (std::getline(f, line)) rows.push_back(split(line));
  return rows;
}

int column(const std::vector<std::string>& header, const std::string& name) {
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_artifacts";
  int threads = 0;
  bool quick = false;
  app.add_option("--workdir", workdir, "Directory for checkpoints, CSVs and metrics");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  app.add_flag("--quick", quick, "Reduced grid and epochs (not the acceptance configuration)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  const fs::path wd(workdir);
  Report report;
  if (quick) std::printf("quick mode: reduced settings, results are not acceptance results\n");

  // 1. Gradient suite.
  {
    const auto t0 = Clock::now();
    const auto checks = palette_field::testing::run_gradient_suite(1e-3, 1e-3, 1);
    const double secs = seconds_since(t0);
    double worst = 0;
    bool ok = !checks.empty();
    std::string failed;
    for (const auto& c : checks) {
      worst = std::max(worst, c.max_rel_error);
      if (!c.ok()) {
        ok = false;
        failed += " " + c.name;
      }
    }
    report.line(1, ok && secs < 30.0,
                fmt("%zu checks, max rel err %.2e (tol 1e-3), %.1fs (limit 30s)%s", checks.size(), worst,
                    secs, failed.empty() ? "" : (" failed:" + failed).c_str()));
  }

  // 2. Compositing oracle.
  {
    const auto c = palette_field::testing::check_compositing(1000, 2024);
    report.line(2, c.worst_value <= 1e-6 && c.worst_opacity <= 1e-6,
                fmt("1000 rays, max color err %.2e, max opacity err %.2e (tol 1e-6)", c.worst_value,
                    c.worst_opacity));
  }

  // 3. Hull oracle and blending weights.
  {
    const int mismatches = palette_field::testing::hull_oracle_mismatches(100);
    const auto b = palette_field::testing::check_blending_weights(100);
    report.line(3, mismatches == 0 && b.worst_reconstruction <= 1e-5 && b.worst_simplex <= 1e-5,
                fmt("hull mismatches %d/100 seeds, max reconstruction %.2e, max simplex violation %.2e "
                    "(tol 1e-5)",
                    mismatches, b.worst_reconstruction, b.worst_simplex));
  }

  // 4. End-to-end synthetic run.
  SyntheticSceneSpec spec = default_synthetic_spec(7);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.threads = threads;
  if (quick) {
    spec.image_size = 32;
    spec.grid_resolution = 32;
    cfg.grid = {32, 32, 32};
    cfg.epochs = 80;
    cfg.palette_freeze_epochs = 20;
    cfg.sm_delay_epochs = 6;
  }
  const auto t_e2e = Clock::now();
  progress("generating the synthetic scene");
  const SyntheticScene scene = generate_synthetic_scene(spec, threads);
  write_synthetic_scene(scene, wd / "scene");
  progress("stage 1");
  const TrainResult s1 = train_geometry(scene.train, cfg, epoch_logger("geometry", 10));
  write_loss_csv(s1.history, wd / "stage1_loss.csv");
  save_checkpoint({s1.params, {{"stage", 1}}}, wd / "stage1.ckpt");
  progress("extracting palettes");
  ExtractOptions eo;
  eo.n_p = 4;
  eo.threads = threads;
  const Extraction ex = extract_palettes(scene.train, s1.params, eo);
  write_palette_json(ex.palette, wd / "palette.json");
  write_weights(ex.weights, wd / "weights.pltw");

  progress("stage 2");
  std::vector<char> palette_unchanged;  // per epoch: palette bit-equal to the extracted one
  const EpochCallback log2 = epoch_logger("decomposition", 10);
  const TrainResult s2 = train_decomposition(
      scene.train, s1.params, ex.palette, ex.weights, cfg,
      [&](int epoch, const FieldParams& p, const LossBreakdown& l) {
        palette_unchanged.push_back(p.palette.current == ex.palette.current);
        log2(epoch, p, l);
      });
  const double e2e_secs = seconds_since(t_e2e);
  write_loss_csv(s2.history, wd / "stage2_loss.csv");
  Checkpoint ck2{s2.params, {{"stage", 2}, {"background", {scene.train.background.x, scene.train.background.y, scene.train.background.z}}}};
  save_checkpoint(ck2, wd / "stage2.ckpt");

  progress("metrics");
  MetricsOptions mo;
  mo.threads = threads;
  const MetricsReport m1 = evaluate(s1.params, scene.train, scene.test, mo);
  const MetricsReport m2 = evaluate(s2.params, scene.train, scene.test, mo, &scene.truth.normalized_colors);
  std::ofstream(wd / "metrics_stage1.json") << metrics_to_json(m1).dump(2) << "\n";
  std::ofstream(wd / "metrics_stage2.json") << metrics_to_json(m2).dump(2) << "\n";
  const auto [pal_mean, pal_max] = matched_palette_distance(ex.palette.current, scene.truth.normalized_colors);
  {
    const bool ok = m1.psnr >= 30.0 && pal_max <= 0.1 && m2.sparsity <= 0.6 && e2e_secs < 1800.0;
    report.line(4, ok,
                fmt("stage-1 held-out PSNR %.2f dB (>= 30), palette L2 max %.4f mean %.4f (<= 0.1), "
                    "stage-2 sparsity %.4f (<= 0.6), pipeline %.1f min (< 30) on %d thread(s)",
                    m1.psnr, pal_max, pal_mean, m2.sparsity, e2e_secs / 60.0, resolve_threads(threads)));
  }

  // 5. Ablations, same seed, stage 1 and palette reused.
  {
    TrainConfig no_sp = cfg, no_sm = cfg;
    no_sp.weights.sp = 0;
    no_sm.weights.sm = 0;
    progress("ablation lambda_sp = 0");
    const TrainResult a_sp = train_decomposition(scene.train, s1.params, ex.palette, ex.weights, no_sp,
                                                 epoch_logger("no-sp", 50));
    progress("ablation lambda_sm = 0");
    const TrainResult a_sm = train_decomposition(scene.train, s1.params, ex.palette, ex.weights, no_sm,
                                                 epoch_logger("no-sm", 50));
    save_checkpoint({a_sp.params, ck2.extra}, wd / "stage2_no_sp.ckpt");
    save_checkpoint({a_sm.params, ck2.extra}, wd / "stage2_no_sm.ckpt");
    const MetricsReport r_sp = evaluate(a_sp.params, scene.train, scene.test, mo);
    const MetricsReport r_sm = evaluate(a_sm.params, scene.train, scene.test, mo);
    std::ofstream(wd / "metrics_no_sp.json") << metrics_to_json(r_sp).dump(2) << "\n";
    std::ofstream(wd / "metrics_no_sm.json") << metrics_to_json(r_sm).dump(2) << "\n";
    const double sp_margin = r_sp.sparsity > 0 ? 1.0 - m2.sparsity / r_sp.sparsity : -INFINITY;
    const double tv_margin = r_sm.tv > 0 ? 1.0 - m2.tv / r_sm.tv : -INFINITY;
    report.line(5, sp_margin >= 0.2 && tv_margin >= 0.2,
                fmt("sparsity full %.4f vs no-sp %.4f (margin %.1f%%), tv full %.5f vs no-sm %.5f "
                    "(margin %.1f%%), need >= 20%%",
                    m2.sparsity, r_sp.sparsity, 100 * sp_margin, m2.tv, r_sm.tv, 100 * tv_margin));
  }

  // 6. Edit invariants on the trained model, compared as 8-bit PNG bytes.
  {
    progress("edit invariants");
    RenderOptions ro = render_options_for(scene.test, 128);
    ro.threads = threads;
    const Camera& cam = scene.test.cameras.front();
    const FieldParams& p = s2.params;
    auto render_with = [&](const ResolvedEdit* e) {
      RenderOptions o = ro;
      o.edit = e;
      return render_view(p, cam, o);
    };
    const RenderOutput base = render_with(nullptr);
    const std::vector<uint8_t> base_png = encode_png(base.color);
    const ResolvedEdit id = resolve_edit(EditState{}, p.palette);
    const bool identity = encode_png(render_with(&id).color) == base_png;

    double worst_far = 0;
    for (int i = 0; i < p.n_p(); ++i) {
      EditState e;
      e.palette_edits.push_back({i, 180, 0, 0, std::nullopt});
      const ResolvedEdit r = resolve_edit(e, p.palette);
      const RenderOutput ed = render_with(&r);
      double sum = 0;
      size_t n = 0;
      for (size_t px = 0; px < base.color.pixel_count(); ++px) {
        if (base.weight_maps[i].data[px] >= 0.05f) continue;
        for (int c = 0; c < 3; ++c) sum += std::abs(ed.color.data[px * 3 + c] - base.color.data[px * 3 + c]);
        n += 3;
      }
      if (n) worst_far = std::max(worst_far, sum / n);
    }

    bool wrap = true;
    for (double dh : {37.5, 180.0, -90.0}) {
      EditState a, b;
      a.palette_edits.push_back({0, dh, 0, 0, std::nullopt});
      b.palette_edits.push_back({0, dh + 360, 0, 0, std::nullopt});
      const ResolvedEdit ra = resolve_edit(a, p.palette), rb = resolve_edit(b, p.palette);
      wrap = wrap && encode_png(render_with(&ra).color) == encode_png(render_with(&rb).color);
    }

    long round_trip_bad = 0;
    for (int r = 0; r < 256; ++r) {
      for (int g = 0; g < 256; ++g) {
        for (int b = 0; b < 256; ++b) {
          const Vec3 c = shift_hsv({r / 255.0, g / 255.0, b / 255.0}, Hsv{0, 0, 0});
          round_trip_bad += std::lround(c.x * 255) != r || std::lround(c.y * 255) != g || std::lround(c.z * 255) != b;
        }
      }
    }
    report.line(6, identity && worst_far < 2.0 / 255 && wrap && round_trip_bad == 0,
                fmt("identity bytes %s, recolor change where weight < 0.05: max over palettes %.5f "
                    "(< %.5f), dh vs dh+360 bytes %s, zero-delta round trip failures %ld/16777216",
                    identity ? "equal" : "DIFFER", worst_far, 2.0 / 255, wrap ? "equal" : "DIFFER",
                    round_trip_bad));
  }

  // 7. Schedule, from the stage-2 run and its CSV.
  {
    const int freeze = cfg.palette_freeze_epochs, delay = cfg.sm_delay_epochs;
    bool frozen = palette_unchanged.size() == static_cast<size_t>(cfg.epochs);
    for (int e = 0; e < freeze && frozen; ++e) frozen = palette_unchanged[e];
    const bool moves = freeze < cfg.epochs && !palette_unchanged[freeze];
    std::vector<std::string> header;
    const auto rows = read_csv(wd / "stage2_loss.csv", header);
    const int w_col = column(header, "weight"), sm_col = column(header, "sm");
    bool weight_zero = w_col >= 0 && rows.size() == static_cast<size_t>(cfg.epochs);
    bool sm_zero = sm_col >= 0 && weight_zero;
    bool sm_later = false, weight_before = false;
    for (size_t e = 0; e < rows.size() && weight_zero && sm_zero; ++e) {
      const double w = std::stod(rows[e][w_col]), sm = std::stod(rows[e][sm_col]);
      if (static_cast<int>(e) >= freeze) weight_zero = w == 0.0;
      else weight_before = weight_before || w != 0.0;
      if (static_cast<int>(e) < delay) sm_zero = sm == 0.0;
      else sm_later = sm_later || sm != 0.0;
    }
    report.line(7, frozen && moves && weight_zero && sm_zero,
                fmt("palette bit-identical for epochs [0, %d): %s, changes at epoch %d: %s; weight column "
                    "0 from epoch %d: %s (non-zero before: %s); sm column 0 before epoch %d: %s "
                    "(non-zero after: %s)",
                    freeze, frozen ? "yes" : "NO", freeze, moves ? "yes" : "NO", freeze,
                    weight_zero ? "yes" : "NO", weight_before ? "yes" : "no", delay, sm_zero ? "yes" : "NO",
                    sm_later ? "yes" : "no"));
  }

  // 8. Persistence.
  {
    const Checkpoint back = load_checkpoint(wd / "stage2.ckpt");
    const bool ckpt_ok = same_bits(back.params, s2.params) && encode_checkpoint(back) == encode_checkpoint(ck2);
    const Palette pal_back = read_palette_json(wd / "palette.json");
    const SupervisionWeights w_back = read_weights(wd / "weights.pltw");
    const bool pal_ok = pal_back == ex.palette;
    const bool w_ok = w_back.n_p == ex.weights.n_p && w_back.rows.size() == ex.weights.rows.size() &&
                      std::memcmp(w_back.rows.data(), ex.weights.rows.data(), w_back.rows.size() * sizeof(float)) == 0;
    bool render_ok = true;
    RenderOptions ro = render_options_for(scene.test, 128);
    ro.threads = threads;
    for (const Camera& cam : scene.test.cameras) {
      const RenderOutput a = render_view(s2.params, cam, ro);
      const RenderOutput b = render_view(back.params, cam, ro);
      render_ok = render_ok && encode_png(a.color) == encode_png(b.color) && a.color.data == b.color.data;
      for (int i = 0; i < s2.params.n_p(); ++i) render_ok = render_ok && a.weight_maps[i].data == b.weight_maps[i].data;
    }
    report.line(8, ckpt_ok && pal_ok && w_ok && render_ok,
                fmt("checkpoint %s, palette file %s, weights file %s, reloaded renders %s",
                    ckpt_ok ? "bit-exact" : "DIFFERS", pal_ok ? "bit-exact" : "DIFFERS",
                    w_ok ? "bit-exact" : "DIFFERS", render_ok ? "byte-identical" : "DIFFER"));
  }

  const bool ok = report.all_pass();
  std::printf("acceptance: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}
