// palette-field: command-line front end for the pipeline stages.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <CLI11.hpp>

#include "palette_field/checkpoint.hpp"
#include "palette_field/edit.hpp"
#include "palette_field/metrics.hpp"
#include "palette_field/palette.hpp"
#include "palette_field/render.hpp"
#include "palette_field/service.hpp"
#include "palette_field/synthetic.hpp"
#include "palette_field/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace palette_field;

namespace {

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorKind::kIo, "cannot read " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidArgument, p.string() + ": " + e.what());
  }
}

TrainConfig load_config(const std::string& path, int threads) {
  TrainConfig c = path.empty() ? TrainConfig{} : read_train_config(path);
  if (threads > 0) c.threads = threads;
  return c;
}

json dataset_extra(const SceneDataset& ds, const std::string& dir) {
  return {{"background", {ds.background.x, ds.background.y, ds.background.z}},
          {"near", ds.near},
          {"far", ds.far},
          {"data_dir", fs::absolute(dir).string()}};
}

EpochCallback progress(const char* stage) {
  const auto start = std::chrono::steady_clock::now();
  return [stage, start](int epoch, const FieldParams&, const LossBreakdown& l) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "[%s] epoch %d total %.6g recon %.6g (%.1fs)\n", stage, epoch, l.total, l.recon, secs);
  };
}

SceneDataset load_split(const std::string& dir, const std::string& split) {
  if (split == "test" && !fs::exists(fs::path(dir) / "transforms_test.json")) {
    throw Error(ErrorKind::kDatasetFormat, "no transforms_test.json in " + dir);
  }
  return load_blender_dataset(dir, split);
}

// Restores any recolor record so renders match the exporting session.
struct LoadedCheckpoint {
  Checkpoint ck;
  std::vector<PaletteEdit> baked;
};

LoadedCheckpoint load_for_render(const std::string& path) {
  LoadedCheckpoint l{load_checkpoint(path), {}};
  if (l.ck.params.has_palette()) l.baked = unbake_palette_edit(l.ck.params, l.ck.extra);
  return l;
}

std::string data_dir_for(const std::string& given, const Checkpoint& ck) {
  if (!given.empty()) return given;
  if (ck.extra.contains("data_dir")) return ck.extra["data_dir"].get<std::string>();
  throw Error(ErrorKind::kInvalidArgument, "--data is required (checkpoint records no data_dir)");
}

Image pick_channel(const RenderOutput& out, const std::string& channel, double far) {
  if (channel == "color") return out.color;
  if (channel == "diffuse") return out.diffuse;
  if (channel == "viewdep") return out.viewdep;
  if (channel == "opacity") return out.opacity;
  if (channel == "depth") {
    Image d = out.depth;
    for (float& v : d.data) v = static_cast<float>(v / far);
    return d;
  }
  if (channel.rfind("weight_", 0) == 0) {
    const int i = std::stoi(channel.substr(7));
    if (i < 0 || i >= static_cast<int>(out.weight_maps.size())) {
      throw Error(ErrorKind::kInvalidArgument, "no weight map " + channel);
    }
    return out.weight_maps[i];
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown channel " + channel);
}

void write_image(const std::string& path, const Image& img) {
  if (fs::path(path).extension() == ".plti") {
    write_raw_image(path, img);
  } else {
    write_png(path, img);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Palette-based appearance decomposition and editing of radiance fields"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic multi-color scene");
  std::string synth_out, synth_spec;
  uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "Scene seed");
  synth->add_option("--spec", synth_spec, "Scene spec JSON (overrides defaults)");

  // train-geometry
  auto* tg = app.add_subcommand("train-geometry", "Stage 1: density and color grids");
  std::string tg_data, tg_out, tg_config, tg_csv;
  tg->add_option("--data", tg_data, "Dataset directory")->required();
  tg->add_option("--out", tg_out, "Output checkpoint")->required();
  tg->add_option("--config", tg_config, "TrainConfig JSON");
  tg->add_option("--loss-csv", tg_csv, "Per-epoch loss CSV");

  // extract
  auto* ex = app.add_subcommand("extract", "Extract palettes and supervision weights from a stage-1 field");
  std::string ex_data, ex_stage1, ex_palette, ex_weights;
  ExtractOptions ex_opts;
  ex->add_option("--data", ex_data, "Dataset directory")->required();
  ex->add_option("--stage1", ex_stage1, "Stage-1 checkpoint")->required();
  ex->add_option("--palette", ex_palette, "Output palette JSON")->required();
  ex->add_option("--weights", ex_weights, "Output supervision weights (PLTW)")->required();
  ex->add_option("--n-p", ex_opts.n_p, "Number of palettes")->check(CLI::Range(1, kMaxPalettes));
  ex->add_option("--opacity-threshold", ex_opts.opacity_threshold);
  ex->add_option("--intensity-floor", ex_opts.intensity_floor);
  ex->add_option("--seed", ex_opts.seed);

  // train-decomp
  auto* td = app.add_subcommand("train-decomp", "Stage 2: palette decomposition");
  std::string td_data, td_stage1, td_palette, td_weights, td_out, td_config, td_csv;
  td->add_option("--data", td_data, "Dataset directory")->required();
  td->add_option("--stage1", td_stage1, "Stage-1 checkpoint")->required();
  td->add_option("--palette", td_palette, "Palette JSON")->required();
  td->add_option("--weights", td_weights, "Supervision weights (PLTW)")->required();
  td->add_option("--out", td_out, "Output checkpoint")->required();
  td->add_option("--config", td_config, "TrainConfig JSON");
  td->add_option("--loss-csv", td_csv, "Per-epoch loss CSV");

  // recolor / render
  auto* rc = app.add_subcommand("recolor", "Render a dataset pose with an edit applied");
  auto* rd = app.add_subcommand("render", "Render one channel at a dataset pose");
  std::string r_ckpt, r_edit, r_out, r_data, r_split = "train", r_channel = "color";
  int r_pose = 0, r_samples = 128;
  for (CLI::App* sc : {rc, rd}) {
    sc->add_option("--ckpt", r_ckpt, "Checkpoint")->required();
    sc->add_option("--pose", r_pose, "Camera index in the split")->required();
    sc->add_option("--out", r_out, "Output image (.png, or .plti for raw f32)")->required();
    sc->add_option("--data", r_data, "Dataset directory (defaults to the one recorded in the checkpoint)");
    sc->add_option("--split", r_split, "train or test")->check(CLI::IsMember({"train", "test"}));
    sc->add_option("--samples", r_samples, "Samples per ray");
  }
  rc->add_option("--edit", r_edit, "Edit JSON")->required();
  rd->add_option("--channel", r_channel, "color, diffuse, viewdep, depth, opacity or weight_<i>");

  // style-fit
  auto* sf = app.add_subcommand("style-fit", "Fit per-palette affine color transforms to correspondences");
  std::string sf_ckpt, sf_corr, sf_out;
  sf->add_option("--ckpt", sf_ckpt, "Checkpoint")->required();
  sf->add_option("--corr", sf_corr,
                 "JSON list of {point:[x,y,z], target:[r,g,b], direction?:[x,y,z]}")
      ->required();
  sf->add_option("--out", sf_out, "Output edit JSON")->required();

  // metrics
  auto* mt = app.add_subcommand("metrics", "PSNR, sparsity, TV and palette error");
  std::string mt_ckpt, mt_data, mt_out;
  MetricsOptions mt_opts;
  mt->add_option("--ckpt", mt_ckpt, "Checkpoint")->required();
  mt->add_option("--data", mt_data, "Dataset directory")->required();
  mt->add_option("--out", mt_out, "Report JSON")->required();
  mt->add_option("--rays", mt_opts.sparsity_rays, "Rays for the sparsity metric");
  mt->add_option("--seed", mt_opts.seed);

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP editing service");
  std::string sv_ckpt, sv_host = "127.0.0.1";
  int sv_port = 0;
  sv->add_option("--ckpt", sv_ckpt, "Checkpoint opened as session \"default\"");
  sv->add_option("--port", sv_port, "Port (falls back to PALETTE_FIELD_PORT, then 8080)");
  sv->add_option("--host", sv_host, "Bind address");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SyntheticSceneSpec spec = synth_spec.empty() ? default_synthetic_spec(synth_seed)
                                                   : spec_from_json(read_json(synth_spec), default_synthetic_spec(synth_seed));
      const SyntheticScene scene = generate_synthetic_scene(spec, threads);
      write_synthetic_scene(scene, synth_out);
      std::printf("wrote %zu train and %zu test views to %s\n", scene.train.images.size(),
                  scene.test.images.size(), synth_out.c_str());
    } else if (*tg) {
      const SceneDataset ds = load_blender_dataset(tg_data);
      const TrainConfig cfg = load_config(tg_config, threads);
      TrainResult r = train_geometry(ds, cfg, progress("geometry"));
      Checkpoint ck{std::move(r.params), dataset_extra(ds, tg_data)};
      ck.extra["stage"] = 1;
      ck.extra["config"] = train_config_to_json(cfg);
      save_checkpoint(ck, tg_out);
      if (!tg_csv.empty()) write_loss_csv(r.history, tg_csv);
    } else if (*ex) {
      const SceneDataset ds = load_blender_dataset(ex_data);
      const Checkpoint ck = load_checkpoint(ex_stage1);
      ex_opts.threads = threads;
      const Extraction e = extract_palettes(ds, ck.params, ex_opts);
      write_palette_json(e.palette, ex_palette);
      write_weights(e.weights, ex_weights);
      std::printf("%d palettes from %zu samples (%zu clusters, %d hull vertices)%s\n", e.palette.n_p(),
                  e.sample_count, e.cluster_count, e.hull_vertex_count,
                  e.shortfall ? "; hull had fewer vertices than requested" : "");
    } else if (*td) {
      const SceneDataset ds = load_blender_dataset(td_data);
      const Checkpoint s1 = load_checkpoint(td_stage1);
      const Palette pal = read_palette_json(td_palette);
      const SupervisionWeights w = read_weights(td_weights);
      const TrainConfig cfg = load_config(td_config, threads);
      TrainResult r = train_decomposition(ds, s1.params, pal, w, cfg, progress("decomp"));
      Checkpoint ck{std::move(r.params), dataset_extra(ds, td_data)};
      ck.extra["stage"] = 2;
      ck.extra["config"] = train_config_to_json(cfg);
      save_checkpoint(ck, td_out);
      if (!td_csv.empty()) write_loss_csv(r.history, td_csv);
    } else if (*rc || *rd) {
      LoadedCheckpoint l = load_for_render(r_ckpt);
      const SceneDataset ds = load_split(data_dir_for(r_data, l.ck), r_split);
      if (r_pose < 0 || r_pose >= static_cast<int>(ds.cameras.size())) {
        throw Error(ErrorKind::kInvalidArgument, "pose index out of range");
      }
      RenderOptions ro = render_options_for(ds, r_samples);
      ro.threads = threads;
      ResolvedEdit resolved;
      if (l.ck.params.has_palette()) {
        const EditState edit = *rc ? edit_from_json(read_json(r_edit)) : EditState{};
        resolved = resolve_edit(edit, l.ck.params.palette, l.baked);
        ro.edit = &resolved;
      } else if (*rc) {
        throw Error(ErrorKind::kInvalidArgument, "recolor needs a stage-2 checkpoint");
      }
      const RenderOutput out = render_view(l.ck.params, ds.cameras[r_pose], ro);
      write_image(r_out, pick_channel(out, *rc ? "color" : r_channel, ro.far));
    } else if (*sf) {
      const Checkpoint ck = load_checkpoint(sf_ckpt);
      std::vector<StyleCorrespondence> corr;
      for (const json& c : read_json(sf_corr)) {
        StyleCorrespondence s;
        s.point = {c.at("point").at(0), c.at("point").at(1), c.at("point").at(2)};
        s.target = {c.at("target").at(0), c.at("target").at(1), c.at("target").at(2)};
        if (c.contains("direction")) {
          s.direction = {c["direction"].at(0), c["direction"].at(1), c["direction"].at(2)};
        }
        corr.push_back(s);
      }
      const StyleFit fit = fit_style_transforms(corr, ck.params);
      EditState edit;
      edit.style = fit.transforms;
      std::ofstream f(sf_out);
      if (!f) throw Error(ErrorKind::kIo, "cannot write " + sf_out);
      f << edit_to_json(edit).dump(2) << "\n";
      if (fit.diagonal_fallback) std::fprintf(stderr, "rank-deficient correspondences: diagonal fit\n");
    } else if (*mt) {
      LoadedCheckpoint l = load_for_render(mt_ckpt);
      const SceneDataset train = load_blender_dataset(mt_data);
      const bool has_test = fs::exists(fs::path(mt_data) / "transforms_test.json");
      const SceneDataset eval = has_test ? load_blender_dataset(mt_data, "test") : train;
      mt_opts.threads = threads;
      std::optional<std::vector<Vec3>> truth;
      if (fs::exists(fs::path(mt_data) / "ground_truth.json") && l.ck.params.has_palette()) {
        const GroundTruth gt = read_ground_truth(mt_data);
        if (gt.normalized_colors.size() == static_cast<size_t>(l.ck.params.n_p())) truth = gt.normalized_colors;
      }
      const MetricsReport rep = evaluate(l.ck.params, train, eval, mt_opts, truth ? &*truth : nullptr);
      std::ofstream f(mt_out);
      if (!f) throw Error(ErrorKind::kIo, "cannot write " + mt_out);
      f << metrics_to_json(rep).dump(2) << "\n";
      std::printf("%s\n", metrics_to_json(rep).dump().c_str());
    } else if (*sv) {
      if (sv_port == 0) {
        const char* env = std::getenv("PALETTE_FIELD_PORT");
        sv_port = env ? std::atoi(env) : 8080;
      }
      ServiceOptions so;
      so.threads = threads;
      run_server(sv_host, sv_port, sv_ckpt, so);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
