#pragma once

// Session store behind the HTTP API. Everything here is callable directly;
// http.hpp only translates JSON envelopes to these calls.

#include "sdedit/errors.hpp"
#include "sdedit/gmm.hpp"
#include "sdedit/guide.hpp"
#include "sdedit/image.hpp"
#include "sdedit/metrics.hpp"
#include "sdedit/mlp.hpp"
#include "sdedit/presets.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/sampler.hpp"
#include "sdedit/score_model.hpp"
#include "sdedit/serialization.hpp"
#include "sdedit/t0_search.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sdedit {

enum class ApiCode { bad_request, shape_mismatch, busy, not_found, internal };

inline const char* to_string(ApiCode c) {
  switch (c) {
  case ApiCode::bad_request: return "bad-request";
  case ApiCode::shape_mismatch: return "shape-mismatch";
  case ApiCode::busy: return "busy";
  case ApiCode::not_found: return "not-found";
  case ApiCode::internal: return "internal";
  }
  return "internal";
}

inline int http_status(ApiCode c) {
  switch (c) {
  case ApiCode::bad_request: return 400;
  case ApiCode::shape_mismatch: return 422;
  case ApiCode::busy: return 409;
  case ApiCode::not_found: return 404;
  case ApiCode::internal: return 500;
  }
  return 500;
}

class ApiError : public std::runtime_error {
public:
  ApiError(ApiCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ApiCode code() const noexcept { return code_; }

private:
  ApiCode code_;
};

// ---------------------------------------------------------------------------
// Model presets: a schedule, a score model and the guide shape it accepts.

struct ModelPreset {
  std::string name;
  std::string description;
  std::string score_kind; // gmm | mlp | zero | scenes
  NoiseSchedule schedule;
  Shape shape;
  std::shared_ptr<const ScoreModel> score;
  std::shared_ptr<const GmmSpec> gmm; // set when the score is an analytic mixture
};

inline ModelPreset gmm_model(std::string name, std::string description, std::string kind, NoiseSchedule schedule,
                             Shape shape, GmmSpec g) {
  auto spec = std::make_shared<const GmmSpec>(std::move(g));
  return {std::move(name), std::move(description), std::move(kind), schedule, shape,
          std::make_shared<AnalyticGmmScore>(*spec, schedule), spec};
}

/// Deterministic "landscape" templates: sky over ground split at a random
/// horizon, with a sun disc. Used as the component means of an image GMM.
inline GmmSpec scene_gmm(int channels, int height, int width, int components, double std, std::uint64_t seed) {
  CounterRng rng(seed, NoiseStream::misc);
  std::vector<Eigen::VectorXd> means;
  for (int k = 0; k < components; ++k) {
    RasterImage img(width, height, channels);
    const int horizon = static_cast<int>(height * (0.3 + 0.4 * rng.uniform()));
    std::vector<double> sky(3), ground(3), sun(3);
    for (auto* col : {&sky, &ground, &sun})
      for (double& v : *col) v = 0.1 + 0.8 * rng.uniform();
    const double sx = width * rng.uniform(), sy = horizon * rng.uniform(), sr = 0.08 * width + 0.1 * width * rng.uniform();
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const bool in_sun = y < horizon && std::hypot(x - sx, y - sy) < sr;
        const auto& col = y >= horizon ? ground : in_sun ? sun : sky;
        for (int c = 0; c < channels; ++c) img.at(x, y, c) = col[static_cast<std::size_t>(c)];
      }
    means.push_back(to_guide(img).data);
  }
  return equal_weight_gmm(means, std);
}

inline Shape parse_shape(const std::string& s) {
  // "CxHxW" for images, "vector:D" or "D" for flat vectors
  try {
    if (s.rfind("vector:", 0) == 0) return Shape::vector(std::stol(s.substr(7)));
    const auto a = s.find('x'), b = s.rfind('x');
    if (a == std::string::npos) return Shape::vector(std::stol(s));
    if (a == b) throw FormatError("");
    return Shape::image_chw(std::stoi(s.substr(0, a)), std::stoi(s.substr(a + 1, b - a - 1)), std::stoi(s.substr(b + 1)));
  } catch (const std::exception&) {
    throw FormatError("bad shape '" + s + "' (expected CxHxW or vector:D)");
  }
}

inline std::string shape_to_string(const Shape& s) {
  return s.image ? s.describe() : "vector:" + std::to_string(s.size());
}

inline GmmSpec toy_testbed_gmm() {
  GmmSpec g;
  g.components.push_back({0.4, Eigen::Vector2d(1.0, 0.0), 0.2});
  g.components.push_back({0.4, Eigen::Vector2d(-1.0, 0.0), 0.2});
  g.components.push_back({0.2, Eigen::Vector2d(0.0, 1.2), 0.2});
  return g;
}

inline std::vector<ModelPreset> builtin_model_presets() {
  std::vector<ModelPreset> out;
  const NoiseSchedule toy = schedule_preset("ve-toy");
  out.push_back(gmm_model("toy-gmm-2d", "three-component 2-D Gaussian mixture, analytic score", "gmm", toy,
                          Shape::vector(2), toy_testbed_gmm()));
  const NoiseSchedule scenes_ve = VeSchedule(0.01, 50.0);
  const GmmSpec scenes = scene_gmm(3, 32, 32, 8, 0.08, 7);
  out.push_back(gmm_model("scenes-32", "8 synthetic 32x32 landscapes as an image mixture (VE)", "scenes", scenes_ve,
                          Shape::image_chw(3, 32, 32), scenes));
  const NoiseSchedule vp = schedule_preset("vp-default");
  out.push_back(gmm_model("scenes-32-vp", "same landscapes under the VP schedule", "scenes", vp,
                          Shape::image_chw(3, 32, 32), scenes));
  return out;
}

/// Reads a `*.preset` key-value file. Keys: name, schedule (preset name or
/// file), score (gmm | mlp | zero | scenes), model (path for gmm/mlp), shape,
/// description; scenes also take components, std, seed.
inline ModelPreset load_model_preset(const std::filesystem::path& path) {
  const KeyValues kv = load_key_values(path);
  auto get = [&](const std::string& key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(path.string() + ": missing key '" + key + "'");
    return it->second;
  };
  auto rel = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : path.parent_path() / p; };
  ModelPreset m;
  m.name = kv.count("name") ? kv.at("name") : path.stem().string();
  m.description = kv.count("description") ? kv.at("description") : "";
  m.score_kind = get("score");
  const std::string sched = kv.count("schedule") ? kv.at("schedule") : "ve-toy";
  const bool builtin = std::any_of(builtin_schedules().begin(), builtin_schedules().end(),
                                   [&](const NamedSchedule& s) { return s.name == sched; });
  m.schedule = builtin ? schedule_preset(sched) : resolve_schedule(rel(sched).string());
  if (m.score_kind == "gmm") {
    const GmmSpec g = load_gmm(rel(get("model")));
    m.shape = kv.count("shape") ? parse_shape(kv.at("shape")) : Shape::vector(g.dim());
    if (m.shape.size() != g.dim()) throw FormatError(path.string() + ": shape does not match the mixture dimension");
    m.gmm = std::make_shared<const GmmSpec>(g);
    m.score = std::make_shared<AnalyticGmmScore>(g, m.schedule);
  } else if (m.score_kind == "mlp") {
    MlpFile f = load_mlp(rel(get("model")));
    if (!kv.count("schedule")) m.schedule = f.schedule;
    m.shape = kv.count("shape") ? parse_shape(kv.at("shape")) : Shape::vector(f.net.data_dim());
    if (m.shape.size() != f.net.data_dim()) throw FormatError(path.string() + ": shape does not match the network");
    m.score = std::make_shared<LearnedMlpScore>(std::move(f.net), m.schedule);
  } else if (m.score_kind == "zero") {
    m.shape = parse_shape(get("shape"));
    m.score = std::make_shared<ZeroScore>();
  } else if (m.score_kind == "scenes") {
    m.shape = parse_shape(get("shape"));
    if (!m.shape.image) throw FormatError(path.string() + ": scenes need an image shape");
    const GmmSpec g = scene_gmm(m.shape.channels, m.shape.height, m.shape.width,
                                static_cast<int>(kv_double(kv, "components", 8)), kv_double(kv, "std", 0.08),
                                static_cast<std::uint64_t>(kv_double(kv, "seed", 7)));
    m.gmm = std::make_shared<const GmmSpec>(g);
    m.score = std::make_shared<AnalyticGmmScore>(g, m.schedule);
  } else {
    throw FormatError(path.string() + ": unknown score kind '" + m.score_kind + "'");
  }
  return m;
}

/// Built-in presets plus every `*.preset` file in `dir` (files override built-ins by name).
inline std::vector<ModelPreset> load_model_presets(const std::optional<std::filesystem::path>& dir) {
  std::vector<ModelPreset> out = builtin_model_presets();
  if (!dir) return out;
  if (!std::filesystem::is_directory(*dir)) throw FormatError("preset directory not found: " + dir->string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(*dir))
    if (e.path().extension() == ".preset") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ModelPreset m = load_model_preset(f);
    std::erase_if(out, [&](const ModelPreset& p) { return p.name == m.name; });
    out.push_back(std::move(m));
  }
  return out;
}

/// Directory from SDEDIT_PRESET_DIR, if set.
inline std::optional<std::filesystem::path> preset_dir_from_env() {
  if (const char* v = std::getenv("SDEDIT_PRESET_DIR"); v && *v) return std::filesystem::path(v);
  return std::nullopt;
}

// ---------------------------------------------------------------------------

struct ServiceLimits {
  int max_side = 64;
  Eigen::Index max_vector = 4096;
  int max_steps = 1000;
  int max_repeats = 8;
  std::chrono::milliseconds wall_clock{60000};
  std::size_t history = 16;
};

struct GenerateRequest {
  std::optional<double> t0;
  std::optional<int> n_steps;
  std::optional<int> repeats;
  std::optional<std::uint64_t> seed;
  bool hard_restore = false;
};

struct GenerateResult {
  std::string result_id;
  double t0 = 0.0;
  int n_steps = 0;
  int repeats = 0;
  std::uint64_t seed = 0;
  FaithfulnessScore metrics;
  double elapsed_ms = 0.0;
};

struct StoredResult {
  GenerateResult info;
  std::string payload; // encoded output: PPM bytes or a text vector
};

struct Session {
  std::string id;
  const ModelPreset* preset = nullptr;
  std::optional<Guide> guide;
  std::optional<EditMask> mask;
  T0SearchState search = T0SearchState::initial();
  bool pending_candidate = false;
  std::deque<StoredResult> history;
  long generations = 0;
  std::uint64_t base_seed = 0;
  bool busy = false;
  mutable std::mutex mu;
};

struct SessionView {
  std::string id;
  std::string preset;
  T0SearchState search;
  std::optional<Shape> guide_shape;
  bool has_mask = false;
  bool pending_candidate = false;
  std::vector<std::string> result_ids;
};

class GenerationTimeout : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {
/// Aborts a run that overruns the wall-clock budget.
class DeadlineScore final : public ScoreModel {
public:
  DeadlineScore(const ScoreModel& inner, std::chrono::steady_clock::time_point deadline)
      : inner_(inner), deadline_(deadline) {}
  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    if (std::chrono::steady_clock::now() > deadline_) throw GenerationTimeout("generation exceeded the wall-clock cap");
    return inner_.score(x, t);
  }
  Eigen::Index dim() const override { return inner_.dim(); }

private:
  const ScoreModel& inner_;
  std::chrono::steady_clock::time_point deadline_;
};
} // namespace detail

class SessionStore {
public:
  explicit SessionStore(std::vector<ModelPreset> presets, ServiceLimits limits = {})
      : presets_(std::move(presets)), limits_(limits) {}

  const std::vector<ModelPreset>& presets() const { return presets_; }
  const ServiceLimits& limits() const { return limits_; }

  /// Called with the session id while a generation holds the busy flag (tests use it
  /// to park a generation and observe the busy contract).
  std::function<void(const std::string&)> on_generate_start;

  std::string create_session(const std::string& preset_name) {
    const ModelPreset* p = find_preset(preset_name);
    auto s = std::make_shared<Session>();
    s->preset = p;
    std::lock_guard lock(mu_);
    do {
      s->id = random_id();
    } while (sessions_.count(s->id));
    s->base_seed = std::stoull(s->id.substr(0, 16), nullptr, 16);
    sessions_[s->id] = s;
    return s->id;
  }

  SessionView view(const std::string& id) const {
    auto s = get(id);
    std::lock_guard lock(s->mu);
    SessionView v{s->id, s->preset->name, s->search, std::nullopt, s->mask.has_value(), s->pending_candidate, {}};
    if (s->guide) v.guide_shape = s->guide->shape;
    for (const auto& r : s->history) v.result_ids.push_back(r.info.result_id);
    return v;
  }

  /// Stores a guide (PNM bytes or a text vector) and an optional mask; resets the t0 search.
  Shape submit_guide(const std::string& id, const std::string& guide_bytes,
                     const std::optional<std::string>& mask_bytes = std::nullopt) {
    auto s = get(id);
    Guide guide;
    std::optional<EditMask> mask;
    try {
      guide = decode_guide(guide_bytes);
    } catch (const FormatError& e) {
      throw ApiError(ApiCode::bad_request, std::string("guide: ") + e.what());
    } catch (const ShapeError& e) {
      throw ApiError(ApiCode::bad_request, std::string("guide: ") + e.what());
    }
    if (guide.shape.image && (guide.shape.width > limits_.max_side || guide.shape.height > limits_.max_side))
      throw ApiError(ApiCode::bad_request, "guide larger than " + std::to_string(limits_.max_side) + " pixels per side");
    if (!guide.shape.image && guide.size() > limits_.max_vector)
      throw ApiError(ApiCode::bad_request, "guide vector too long");
    if (!(guide.shape == s->preset->shape))
      throw ApiError(ApiCode::shape_mismatch, "guide is " + guide.shape.describe() + ", preset '" + s->preset->name +
                                                  "' expects " + s->preset->shape.describe());
    if (mask_bytes) {
      try {
        mask = decode_mask(*mask_bytes, guide.shape);
      } catch (const ShapeError& e) {
        throw ApiError(ApiCode::shape_mismatch, e.what());
      } catch (const FormatError& e) {
        throw ApiError(ApiCode::bad_request, std::string("mask: ") + e.what());
      }
    }
    std::lock_guard lock(s->mu);
    if (s->busy) throw ApiError(ApiCode::busy, "a generation is running for this session");
    s->guide = std::move(guide);
    s->mask = std::move(mask);
    s->search = T0SearchState::initial();
    s->pending_candidate = false;
    return s->guide->shape;
  }

  GenerateResult generate(const std::string& id, const GenerateRequest& req = {}) {
    auto s = get(id);
    SdeditConfig cfg;
    Guide guide;
    std::optional<EditMask> mask;
    {
      std::lock_guard lock(s->mu);
      if (s->busy) throw ApiError(ApiCode::busy, "a generation is already running for this session");
      if (!s->guide) throw ApiError(ApiCode::bad_request, "no guide submitted");
      if (req.t0 && s->search.accepted)
        throw ApiError(ApiCode::bad_request, "t0 is frozen after accept; omit the t0 override");
      cfg.t0 = req.t0.value_or(s->search.probe);
      cfg.n_steps = req.n_steps.value_or(500);
      cfg.repeats = req.repeats.value_or(1);
      cfg.seed = req.seed.value_or(derive_seed(s->base_seed, static_cast<std::uint64_t>(s->generations)));
      cfg.hard_restore = req.hard_restore;
      if (!(cfg.t0 >= 0.0 && cfg.t0 <= 1.0)) throw ApiError(ApiCode::bad_request, "t0 must lie in [0,1]");
      if (cfg.n_steps < 1 || cfg.n_steps > limits_.max_steps)
        throw ApiError(ApiCode::bad_request, "n_steps must lie in [1, " + std::to_string(limits_.max_steps) + "]");
      if (cfg.repeats < 1 || cfg.repeats > limits_.max_repeats)
        throw ApiError(ApiCode::bad_request, "repeats must lie in [1, " + std::to_string(limits_.max_repeats) + "]");
      guide = *s->guide;
      mask = s->mask;
      s->busy = true;
      ++s->generations;
    }
    struct Release {
      Session& s;
      ~Release() {
        std::lock_guard lock(s.mu);
        s.busy = false;
      }
    } release{*s};

    if (on_generate_start) on_generate_start(s->id);
    const auto start = std::chrono::steady_clock::now();
    const detail::DeadlineScore score(*s->preset->score, start + limits_.wall_clock);
    SampleResult res;
    try {
      res = mask ? sdedit_masked(guide, *mask, score, s->preset->schedule, cfg)
                 : sdedit::sdedit(guide, score, s->preset->schedule, cfg);
    } catch (const GenerationTimeout& e) {
      throw ApiError(ApiCode::internal, e.what());
    } catch (const ScheduleError& e) {
      throw ApiError(ApiCode::bad_request, e.what());
    } catch (const std::exception& e) {
      throw ApiError(ApiCode::internal, std::string("sampler failed: ") + e.what());
    }
    StoredResult stored;
    stored.info.t0 = cfg.t0;
    stored.info.n_steps = cfg.n_steps;
    stored.info.repeats = cfg.repeats;
    stored.info.seed = cfg.seed;
    stored.info.metrics = faithfulness(guide, res.output);
    stored.info.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    stored.payload = encode_output(res.output, res.shape);

    std::lock_guard lock(s->mu);
    stored.info.result_id = "r" + std::to_string(s->generations);
    s->history.push_back(stored);
    while (s->history.size() > limits_.history) s->history.pop_front();
    s->pending_candidate = true;
    return stored.info;
  }

  T0SearchState feedback(const std::string& id, Feedback verdict) {
    auto s = get(id);
    std::lock_guard lock(s->mu);
    if (s->busy) throw ApiError(ApiCode::busy, "a generation is running for this session");
    if (s->search.accepted) throw ApiError(ApiCode::bad_request, "t0 search already accepted");
    if (!s->pending_candidate) throw ApiError(ApiCode::bad_request, "no candidate generated since the last feedback");
    try {
      s->search = t0_binary_search(s->search, verdict);
    } catch (const ProtocolError& e) {
      throw ApiError(ApiCode::bad_request, e.what());
    }
    s->pending_candidate = false;
    return s->search;
  }

  /// Encoded output of a stored result; the same bytes on every call.
  std::string result_payload(const std::string& id, const std::string& result_id) const {
    auto s = get(id);
    std::lock_guard lock(s->mu);
    for (const auto& r : s->history)
      if (r.info.result_id == result_id) return r.payload;
    throw ApiError(ApiCode::not_found, "no result '" + result_id + "' in session (history keeps the last " +
                                           std::to_string(limits_.history) + ")");
  }

  Shape result_shape(const std::string& id) const {
    auto s = get(id);
    std::lock_guard lock(s->mu);
    return s->guide ? s->guide->shape : s->preset->shape;
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  /// Writes each session's search state, guide and stored results to `dir`/<id>/.
  void save_snapshot(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(mu_);
      for (const auto& [id, s] : sessions_) all.push_back(s);
    }
    for (const auto& s : all) {
      std::lock_guard lock(s->mu);
      const auto sdir = dir / s->id;
      std::filesystem::create_directories(sdir);
      std::ostringstream meta;
      meta.precision(17);
      meta << "preset = " << s->preset->name << "\nlo = " << s->search.lo << "\nhi = " << s->search.hi
           << "\nprobe = " << s->search.probe << "\niterations = " << s->search.iterations
           << "\naccepted = " << (s->search.accepted ? 1 : 0) << "\n";
      for (const auto& r : s->history)
        meta << "result." << r.info.result_id << " = t0 " << r.info.t0 << " n_steps " << r.info.n_steps << " seed "
             << r.info.seed << "\n";
      write_file(sdir / "session.txt", meta.str());
      const auto ext = [](const Shape& sh) { return sh.image ? std::string(sh.channels == 1 ? ".pgm" : ".ppm") : std::string(".txt"); };
      if (s->guide) write_file(sdir / ("guide" + ext(s->guide->shape)), encode_output(s->guide->data, s->guide->shape));
      for (const auto& r : s->history)
        write_file(sdir / (r.info.result_id + ext(s->guide ? s->guide->shape : s->preset->shape)), r.payload);
    }
  }

private:
  const ModelPreset* find_preset(const std::string& name) const {
    for (const auto& p : presets_)
      if (p.name == name) return &p;
    throw ApiError(ApiCode::not_found, "unknown preset '" + name + "'");
  }

  std::shared_ptr<Session> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(ApiCode::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  static std::string random_id() {
    static std::random_device rd;
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (int i = 0; i < 4; ++i) {
      std::uint32_t v = rd();
      for (int j = 0; j < 8; ++j, v >>= 4) out.push_back(hex[v & 15]);
    }
    return out;
  }

  std::vector<ModelPreset> presets_;
  ServiceLimits limits_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

} // namespace sdedit
