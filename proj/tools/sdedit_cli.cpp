// sdedit command line: sampling, editing, sweeps, stroke simulation, training
// and the HTTP service.

#include "sdedit/dsm.hpp"
#include "sdedit/http.hpp"
#include "sdedit/metrics.hpp"
#include "sdedit/sampler.hpp"
#include "sdedit/serialization.hpp"
#include "sdedit/service.hpp"
#include "sdedit/stroke.hpp"
#include "sdedit/t0_search.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <optional>

using namespace sdedit;
namespace fs = std::filesystem;

namespace {

struct ModelOptions {
  std::string model = "toy-gmm-2d";
  std::string preset_dir;
  std::string gmm;
  std::string mlp;
  std::string schedule;

  void add(CLI::App* app) {
    app->add_option("--model", model, "model preset name (see `sdedit presets`)");
    app->add_option("--preset-dir", preset_dir, "extra *.preset files (default: $SDEDIT_PRESET_DIR)");
    app->add_option("--gmm", gmm, "analytic score from a GMM JSON file instead of a preset");
    app->add_option("--mlp", mlp, "learned score from a weights file instead of a preset");
    app->add_option("--schedule", schedule, "schedule preset name or key=value file (overrides the model's)");
  }

  std::optional<fs::path> dir() const {
    if (!preset_dir.empty()) return fs::path(preset_dir);
    return preset_dir_from_env();
  }

  ModelPreset resolve() const {
    if (!gmm.empty()) {
      const GmmSpec g = load_gmm(gmm);
      const NoiseSchedule sched = resolve_schedule(schedule.empty() ? "ve-toy" : schedule);
      return gmm_model(fs::path(gmm).filename().string(), "", "gmm", sched, Shape::vector(g.dim()), g);
    }
    if (!mlp.empty()) {
      MlpFile f = load_mlp(mlp);
      ModelPreset m;
      m.name = fs::path(mlp).filename().string();
      m.score_kind = "mlp";
      m.schedule = schedule.empty() ? f.schedule : resolve_schedule(schedule);
      m.shape = Shape::vector(f.net.data_dim());
      m.score = std::make_shared<LearnedMlpScore>(std::move(f.net), m.schedule);
      return m;
    }
    for (auto& p : load_model_presets(dir()))
      if (p.name == model) {
        if (!schedule.empty()) {
          if (!p.gmm) throw ParameterError("--schedule can only override analytic mixture presets");
          p = gmm_model(p.name, p.description, p.score_kind, resolve_schedule(schedule), p.shape, *p.gmm);
        }
        return p;
      }
    throw ParameterError("unknown model preset '" + model + "'");
  }
};

json manifest(const std::string& command, const ModelPreset& m) {
  return {{"command", command},
          {"model", m.name},
          {"score", m.score_kind},
          {"schedule", schedule_to_json(m.schedule)},
          {"shape", shape_to_json(m.shape)}};
}

void write_output(const fs::path& path, const Eigen::VectorXd& v, const Shape& shape) {
  write_file(path, encode_output(v, shape));
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::function<void(int)> g_on_signal;
void handle_signal(int sig) {
  if (g_on_signal) g_on_signal(sig);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"SDEdit: guided synthesis and editing with stochastic differential equations"};
  app.require_subcommand(1);

  // presets ------------------------------------------------------------------
  ModelOptions presets_opts;
  auto* presets_cmd = app.add_subcommand("presets", "list model and schedule presets");
  presets_cmd->add_option("--preset-dir", presets_opts.preset_dir, "extra *.preset files");
  presets_cmd->callback([&] {
    std::cout << presets_to_json(load_model_presets(presets_opts.dir())).dump(2) << '\n';
    std::cout << "schedules:";
    for (const auto& s : builtin_schedules()) std::cout << ' ' << s.name;
    std::cout << '\n';
  });

  // sample ---------------------------------------------------------------------
  ModelOptions sample_model;
  int sample_count = 1, sample_steps = 500;
  std::uint64_t sample_seed = 0;
  std::string sample_out = "sample", sample_manifest;
  auto* sample_cmd = app.add_subcommand("sample", "unconditional samples from the prior via the reverse SDE");
  sample_model.add(sample_cmd);
  sample_cmd->add_option("-n,--count", sample_count, "number of samples")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--steps", sample_steps, "reverse steps N")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("-o,--out", sample_out, "output prefix (images: <prefix>-<i>.ppm, vectors: <prefix>.txt)");
  sample_cmd->add_option("--manifest", sample_manifest, "JSON run manifest (default <prefix>.json)");
  sample_cmd->callback([&] {
    const ModelPreset m = sample_model.resolve();
    json files = json::array();
    std::string vectors;
    for (int i = 0; i < sample_count; ++i) {
      const auto seed = derive_seed(sample_seed, static_cast<std::uint64_t>(i));
      const Eigen::VectorXd x = sample_from_prior(*m.score, m.schedule, m.shape.size(), sample_steps, seed);
      if (m.shape.image) {
        const std::string f = sample_out + "-" + std::to_string(i) + (m.shape.channels == 1 ? ".pgm" : ".ppm");
        write_output(f, x, m.shape);
        files.push_back(f);
      } else {
        vectors += format_text_vector(x);
      }
    }
    if (!m.shape.image) {
      write_file(sample_out + ".txt", vectors);
      files.push_back(sample_out + ".txt");
    }
    json j = manifest("sample", m);
    j["config"] = {{"count", sample_count}, {"n_steps", sample_steps}, {"seed", sample_seed}};
    j["outputs"] = files;
    write_json(sample_manifest.empty() ? sample_out + ".json" : sample_manifest, j);
  });

  // edit -------------------------------------------------------------------------
  ModelOptions edit_model;
  SdeditConfig edit_cfg;
  std::string edit_guide, edit_mask, edit_out = "edit.ppm", edit_manifest;
  int edit_label = -1;
  auto* edit_cmd = app.add_subcommand("edit", "SDEdit a guide (PPM/PGM image or text vector)");
  edit_model.add(edit_cmd);
  edit_cmd->add_option("guide", edit_guide, "guide file")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--mask", edit_mask, "edit mask (nonzero = editable)")->check(CLI::ExistingFile);
  edit_cmd->add_option("--t0", edit_cfg.t0, "perturbation time in [0,1]")->check(CLI::Range(0.0, 1.0));
  edit_cmd->add_option("--steps", edit_cfg.n_steps, "reverse steps N")->check(CLI::PositiveNumber);
  edit_cmd->add_option("--repeats", edit_cfg.repeats, "repeat count K")->check(CLI::PositiveNumber);
  edit_cmd->add_option("--seed", edit_cfg.seed);
  edit_cmd->add_option("--label", edit_label, "class-conditional target component (GMM models)");
  edit_cmd->add_option("--guidance-scale", edit_cfg.guidance_scale);
  edit_cmd->add_flag("--hard-restore", edit_cfg.hard_restore, "copy preserved coordinates back at the end");
  edit_cmd->add_option("--snapshots", edit_cfg.snapshot_stride, "record every n-th step into the manifest");
  edit_cmd->add_option("-o,--out", edit_out, "output file");
  edit_cmd->add_option("--manifest", edit_manifest, "JSON run manifest (default <out>.json)");
  edit_cmd->callback([&] {
    const ModelPreset m = edit_model.resolve();
    const Guide guide = load_guide(edit_guide);
    SampleResult res;
    if (edit_label >= 0) {
      if (!m.gmm) throw ParameterError("--label needs a model with an analytic mixture");
      edit_cfg.label = edit_label;
      res = sdedit_class_conditional(guide, *m.score, GmmClassifier(*m.gmm, m.schedule), m.schedule, edit_cfg);
    } else if (!edit_mask.empty()) {
      res = sdedit_masked(guide, decode_mask(read_file(edit_mask), guide.shape), *m.score, m.schedule, edit_cfg);
    } else {
      res = sdedit::sdedit(guide, *m.score, m.schedule, edit_cfg);
    }
    write_output(edit_out, res.output, res.shape);
    json j = manifest("edit", m);
    j["guide"] = edit_guide;
    j["mask"] = edit_mask.empty() ? json(nullptr) : json(edit_mask);
    j["config"] = config_to_json(edit_cfg);
    j["output"] = edit_out;
    const auto f = faithfulness(guide, res.output);
    j["metrics"] = {{"l2", f.l2}, {"l2_squared", f.l2_squared}, {"elapsed_steps", res.elapsed_steps}};
    if (!res.snapshots.empty()) {
      json snaps = json::array();
      for (const auto& s : res.snapshots) snaps.push_back({{"repeat", s.repeat}, {"t", s.t}, {"x", to_json_vector(s.x)}});
      j["snapshots"] = snaps;
    }
    write_json(edit_manifest.empty() ? edit_out + ".json" : edit_manifest, j);
    std::cout << "l2_squared " << f.l2_squared << '\n';
  });

  // sweep ------------------------------------------------------------------------
  ModelOptions sweep_model;
  SweepConfig sweep_cfg;
  sweep_cfg.t0_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::string sweep_grid, sweep_json = "sweep.json", sweep_csv = "sweep.csv";
  std::vector<std::string> sweep_guides;
  int sweep_reference = 2000;
  auto* sweep_cmd = app.add_subcommand("sweep", "realism/faithfulness trade-off over a t0 grid");
  sweep_model.add(sweep_cmd);
  sweep_cmd->add_option("guides", sweep_guides, "guide files")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--t0", sweep_grid, "comma-separated grid (default 0.1,...,0.9)");
  sweep_cmd->add_option("--runs", sweep_cfg.runs_per_point, "runs per t0")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--steps", sweep_cfg.n_steps)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--subsets", sweep_cfg.mmd_subsets, "disjoint subsets for the MMD error bar");
  sweep_cmd->add_option("--reference-size", sweep_reference, "data samples drawn from the model mixture");
  sweep_cmd->add_option("--seed", sweep_cfg.seed);
  sweep_cmd->add_option("--threads", sweep_cfg.threads, "0 = hardware concurrency");
  sweep_cmd->add_option("--json", sweep_json);
  sweep_cmd->add_option("--csv", sweep_csv);
  sweep_cmd->callback([&] {
    const ModelPreset m = sweep_model.resolve();
    if (!m.gmm) throw ParameterError("sweep draws its reference set from an analytic mixture model");
    if (!sweep_grid.empty()) sweep_cfg.t0_grid = parse_list(sweep_grid);
    std::vector<Guide> guides;
    for (const auto& g : sweep_guides) guides.push_back(load_guide(g));
    const auto reference = sample_gmm(*m.gmm, static_cast<std::size_t>(sweep_reference), derive_seed(sweep_cfg.seed, 0xdada));
    const TradeoffReport rep = tradeoff_sweep(guides, *m.score, m.schedule, sweep_cfg, reference);
    json j = manifest("sweep", m);
    j["report"] = tradeoff_to_json(rep);
    j["guides"] = sweep_guides;
    write_json(sweep_json, j);
    write_file(sweep_csv, tradeoff_to_csv(rep));
    std::cout << tradeoff_to_csv(rep);
  });

  // guide-search -------------------------------------------------------------------
  ModelOptions search_model;
  std::string search_guide, search_mask, search_dir = "candidates";
  int search_steps = 500;
  std::uint64_t search_seed = 0;
  auto* search_cmd = app.add_subcommand(
      "guide-search", "interactive t0 bisection: answer r (more realistic), f (more faithful) or a (accept)");
  search_model.add(search_cmd);
  search_cmd->add_option("guide", search_guide)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--mask", search_mask)->check(CLI::ExistingFile);
  search_cmd->add_option("--steps", search_steps)->check(CLI::PositiveNumber);
  search_cmd->add_option("--seed", search_seed);
  search_cmd->add_option("--dir", search_dir, "where candidates are written");
  search_cmd->callback([&] {
    const ModelPreset m = search_model.resolve();
    const Guide guide = load_guide(search_guide);
    std::optional<EditMask> mask;
    if (!search_mask.empty()) mask = decode_mask(read_file(search_mask), guide.shape);
    fs::create_directories(search_dir);
    T0SearchState state = T0SearchState::initial();
    for (int i = 0;; ++i) {
      SdeditConfig cfg;
      cfg.t0 = state.probe;
      cfg.n_steps = search_steps;
      cfg.seed = derive_seed(search_seed, static_cast<std::uint64_t>(i));
      const SampleResult res = mask ? sdedit_masked(guide, *mask, *m.score, m.schedule, cfg)
                                    : sdedit::sdedit(guide, *m.score, m.schedule, cfg);
      const fs::path out = fs::path(search_dir) / ("candidate-" + std::to_string(i) +
                                                   (guide.shape.image ? (guide.shape.channels == 1 ? ".pgm" : ".ppm") : ".txt"));
      write_output(out, res.output, res.shape);
      std::cout << "candidate " << out.string() << " t0 " << cfg.t0 << " l2_squared "
                << faithfulness(guide, res.output).l2_squared << '\n';
      if (state.soft_cap_reached()) std::cout << "(10 rounds reached; consider accepting)\n";
      std::optional<Feedback> fb;
      std::string line;
      while (!fb) {
        std::cout << "verdict [r/f/a]> " << std::flush;
        if (!std::getline(std::cin, line)) {
          std::cout << "\nstopped at t0 " << state.probe << '\n';
          return;
        }
        fb = parse_feedback(line);
      }
      state = t0_binary_search(state, *fb);
      if (state.accepted) {
        std::cout << "accepted t0 " << state.probe << " (" << out.string() << ")\n";
        return;
      }
    }
  });

  // stroke-sim ---------------------------------------------------------------------
  int stroke_kernel = 0, stroke_colors = 6;
  std::uint64_t stroke_seed = 0;
  std::string stroke_in, stroke_out;
  auto* stroke_cmd = app.add_subcommand("stroke-sim", "median filter + adaptive palette: a simulated stroke painting");
  stroke_cmd->add_option("--kernel", stroke_kernel, "odd median kernel (default scales 23 px at 256 px height)");
  stroke_cmd->add_option("--colors", stroke_colors, "palette size")->check(CLI::Range(1, 256));
  stroke_cmd->add_option("--seed", stroke_seed);
  stroke_cmd->add_option("input", stroke_in)->required()->check(CLI::ExistingFile);
  stroke_cmd->add_option("output", stroke_out)->required();
  stroke_cmd->callback([&] {
    const RasterImage img = read_pnm(stroke_in);
    const int k = stroke_kernel > 0 ? stroke_kernel : scaled_kernel(img.height);
    write_pnm(stroke_out, simulate_stroke(img, k, stroke_colors, stroke_seed));
    std::cout << "kernel " << k << " colors " << stroke_colors << '\n';
  });

  // mask ---------------------------------------------------------------------------
  std::string mask_orig, mask_edit, mask_out;
  double mask_threshold = 0.02;
  auto* mask_cmd = app.add_subcommand("mask", "edit mask from an original and an edited image");
  mask_cmd->add_option("original", mask_orig)->required()->check(CLI::ExistingFile);
  mask_cmd->add_option("edited", mask_edit)->required()->check(CLI::ExistingFile);
  mask_cmd->add_option("output", mask_out)->required();
  mask_cmd->add_option("--threshold", mask_threshold);
  mask_cmd->callback([&] {
    const RasterImage a = read_pnm(mask_orig);
    const EditMask m = mask_from_edit(a, read_pnm(mask_edit), mask_threshold);
    RasterImage out(a.width, a.height, 1);
    for (std::size_t p = 0; p < out.pixel_count(); ++p) out.pixels[p] = m.omega[static_cast<Eigen::Index>(p)];
    write_pnm(mask_out, out);
    std::cout << "editable pixels " << m.omega.sum() / a.channels << '\n';
  });

  // train --------------------------------------------------------------------------
  std::string train_gmm, train_data, train_schedule = "ve-toy", train_out = "score.bin", train_hidden = "64,64";
  TrainConfig train_cfg;
  auto* train_cmd = app.add_subcommand("train", "fit an MLP score network by denoising score matching");
  auto* data_src = train_cmd->add_option("--gmm", train_gmm, "GMM JSON to sample training data from");
  train_cmd->add_option("--data", train_data, "text file, one vector per line")->excludes(data_src);
  train_cmd->add_option("--schedule", train_schedule);
  train_cmd->add_option("--steps", train_cfg.steps);
  train_cmd->add_option("--lr", train_cfg.learning_rate);
  train_cmd->add_option("--momentum", train_cfg.momentum);
  train_cmd->add_option("--batch", train_cfg.batch_size);
  train_cmd->add_option("--clip", train_cfg.clip_norm, "gradient norm clip (0 = off)");
  train_cmd->add_option("--hidden", train_hidden, "comma-separated hidden widths");
  train_cmd->add_option("--seed", train_cfg.seed);
  train_cmd->add_option("-o,--out", train_out);
  train_cmd->callback([&] {
    const NoiseSchedule sched = resolve_schedule(train_schedule);
    std::vector<int> hidden;
    for (double h : parse_list(train_hidden)) hidden.push_back(static_cast<int>(h));
    TrainResult res{MlpScoreNet(1, {1}, 0), {}};
    if (!train_gmm.empty()) {
      const GmmSpec g = load_gmm(train_gmm);
      res = train_score(MlpScoreNet(g.dim(), hidden, train_cfg.seed), g, sched, train_cfg);
    } else if (!train_data.empty()) {
      std::vector<Eigen::VectorXd> data;
      std::istringstream in(read_file(train_data));
      std::string line;
      while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos && line[line.find_first_not_of(" \t\r")] != '#')
          data.push_back(parse_text_vector(line));
      if (data.empty()) throw FormatError("no vectors in " + train_data);
      res = train_score(MlpScoreNet(data.front().size(), hidden, train_cfg.seed), data, sched, train_cfg);
    } else {
      throw ParameterError("train needs --gmm or --data");
    }
    const bool builtin = std::any_of(builtin_schedules().begin(), builtin_schedules().end(),
                                     [&](const NamedSchedule& s) { return s.name == train_schedule; });
    save_mlp(train_out, res.net, builtin ? train_schedule : "custom", sched);
    std::cout << "final loss (ema) " << (res.loss_ema.empty() ? 0.0 : res.loss_ema.back()) << '\n';
  });

  // bound --------------------------------------------------------------------------
  ModelOptions bound_model;
  std::string bound_guide;
  SdeditConfig bound_cfg;
  double bound_delta = 0.05;
  std::optional<double> bound_c;
  long bound_runs = 10000;
  auto* bound_cmd = app.add_subcommand("bound", "empirical check of the deviation bound for one guide (VE)");
  bound_model.add(bound_cmd);
  bound_cmd->add_option("guide", bound_guide)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--t0", bound_cfg.t0)->check(CLI::Range(0.0, 1.0));
  bound_cmd->add_option("--steps", bound_cfg.n_steps);
  bound_cmd->add_option("--delta", bound_delta);
  bound_cmd->add_option("--C", bound_c, "score norm bound (default: measured)");
  bound_cmd->add_option("--runs", bound_runs);
  bound_cmd->add_option("--seed", bound_cfg.seed);
  bound_cmd->callback([&] {
    const ModelPreset m = bound_model.resolve();
    const auto rep = check_deviation_bound(load_guide(bound_guide), *m.score, m.schedule, bound_cfg, bound_c, bound_delta, bound_runs);
    std::cout << bound_report_to_json(rep).dump(2) << '\n';
  });

  // serve --------------------------------------------------------------------------
  std::string serve_addr = "127.0.0.1:8080", serve_presets, serve_snapshot;
  int serve_threads = 4;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for the editing UI");
  serve_cmd->add_option("--addr", serve_addr, "host:port");
  serve_cmd->add_option("--preset-dir", serve_presets, "extra *.preset files (default: $SDEDIT_PRESET_DIR)");
  serve_cmd->add_option("--snapshot-dir", serve_snapshot, "write session state here on shutdown");
  serve_cmd->add_option("--threads", serve_threads, "worker threads")->check(CLI::PositiveNumber);
  serve_cmd->callback([&] {
    const auto colon = serve_addr.rfind(':');
    if (colon == std::string::npos) throw ParameterError("--addr must be host:port");
    const std::string host = serve_addr.substr(0, colon);
    const int port = std::stoi(serve_addr.substr(colon + 1));
    std::optional<fs::path> dir = serve_presets.empty() ? preset_dir_from_env() : std::optional<fs::path>(serve_presets);
    SessionStore store(load_model_presets(dir));
    httplib::Server server;
    server.new_task_queue = [n = serve_threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    install_routes(server, store);
    g_on_signal = [&](int) { server.stop(); };
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "listening on " << host << ':' << port << " with " << store.presets().size() << " presets"
              << std::endl;
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + serve_addr);
    if (!serve_snapshot.empty()) {
      store.save_snapshot(serve_snapshot);
      std::cout << "session snapshot written to " << serve_snapshot << '\n';
    }
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
