#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/gmm.hpp"
#include "sdedit/metrics.hpp"
#include "sdedit/presets.hpp"
#include "sdedit/sampler.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace sdedit {

using nlohmann::json;

inline json to_json_vector(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Eigen::VectorXd vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

// {"components": [{"weight": w, "mean": [...], "std": s}, ...]}
inline json gmm_to_json(const GmmSpec& g) {
  json comps = json::array();
  for (const auto& c : g.components) comps.push_back({{"weight", c.weight}, {"mean", to_json_vector(c.mean)}, {"std", c.std}});
  return {{"components", comps}};
}

inline GmmSpec gmm_from_json(const json& j) {
  GmmSpec g;
  try {
    for (const auto& c : j.at("components"))
      g.components.push_back({c.at("weight").get<double>(), vector_from_json(c.at("mean")), c.at("std").get<double>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed GMM spec: ") + e.what());
  }
  g.validate();
  return g;
}

inline GmmSpec load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return gmm_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline json schedule_to_json(const NoiseSchedule& s) {
  if (const auto* ve = std::get_if<VeSchedule>(&s))
    return {{"variant", "ve"}, {"sigma_min", ve->sigma_min}, {"sigma_max", ve->sigma_max}};
  const auto& vp = std::get<VpSchedule>(s);
  return {{"variant", "vp"}, {"beta_min", vp.beta_min}, {"beta_max", vp.beta_max}};
}

inline json config_to_json(const SdeditConfig& c) {
  json j = {{"t0", c.t0},          {"n_steps", c.n_steps},         {"repeats", c.repeats},
            {"seed", c.seed},      {"hard_restore", c.hard_restore}, {"snapshot_stride", c.snapshot_stride}};
  if (c.label) {
    j["label"] = *c.label;
    j["guidance_scale"] = c.guidance_scale;
  }
  return j;
}

inline json tradeoff_to_json(const TradeoffReport& r) {
  json pts = json::array();
  for (const auto& p : r.points)
    pts.push_back({{"t0", p.t0},
                   {"l2sq_mean", p.l2sq_mean},
                   {"l2sq_stderr", p.l2sq_stderr},
                   {"mmd_mean", p.mmd_mean},
                   {"mmd_stderr", p.mmd_stderr},
                   {"n_runs", p.n_runs}});
  return {{"points", pts},
          {"config",
           {{"t0_grid", r.config.t0_grid},
            {"runs_per_point", r.config.runs_per_point},
            {"n_steps", r.config.n_steps},
            {"mmd_subsets", r.config.mmd_subsets},
            {"seed", r.config.seed},
            {"n_guides", r.n_guides},
            {"reference_size", r.reference_size},
            {"mmd_kernel", MmdScore::kernel}}}};
}

inline std::string tradeoff_to_csv(const TradeoffReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "t0,l2sq_mean,l2sq_stderr,mmd_mean,mmd_stderr\n";
  for (const auto& p : r.points)
    out << p.t0 << ',' << p.l2sq_mean << ',' << p.l2sq_stderr << ',' << p.mmd_mean << ',' << p.mmd_stderr << '\n';
  return out.str();
}

inline json bound_report_to_json(const BoundCheckReport& r) {
  return {{"C", r.C},
          {"C_measured", r.C_measured},
          {"d", r.d},
          {"delta", r.delta},
          {"sigma_t0", r.sigma_t0},
          {"bound", r.bound},
          {"n_runs", r.n_runs},
          {"violation_fraction", r.violation_fraction},
          {"guide_violation_fraction", r.guide_violation_fraction}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

} // namespace sdedit
