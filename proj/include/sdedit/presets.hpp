#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/schedule.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace sdedit {

using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
} // namespace detail

/// Parses `key = value` lines; `#` starts a comment.
inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse_key_values(in);
}

inline double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' is not a number: " + it->second);
  }
}

inline NoiseSchedule schedule_from_config(const KeyValues& kv) {
  const auto it = kv.find("variant");
  if (it == kv.end()) throw FormatError("schedule config needs 'variant' (ve|vp)");
  if (it->second == "ve")
    return VeSchedule(kv_double(kv, "sigma_min", 0.01), kv_double(kv, "sigma_max", 25.0));
  if (it->second == "vp")
    return VpSchedule(kv_double(kv, "beta_min", 0.1), kv_double(kv, "beta_max", 20.0));
  throw FormatError("unknown schedule variant '" + it->second + "'");
}

inline std::string schedule_to_config(const NoiseSchedule& s) {
  std::ostringstream out;
  out.precision(17);
  if (const auto* ve = std::get_if<VeSchedule>(&s)) {
    out << "variant = ve\nsigma_min = " << ve->sigma_min << "\nsigma_max = " << ve->sigma_max << "\n";
  } else {
    const auto& vp = std::get<VpSchedule>(s);
    out << "variant = vp\nbeta_min = " << vp.beta_min << "\nbeta_max = " << vp.beta_max << "\n";
  }
  return out.str();
}

struct NamedSchedule {
  std::string name;
  NoiseSchedule schedule;
};

// σ_max per dataset from the published VE checkpoints; "ve-toy" is the
// desk-scale default for data living in roughly [-3, 3].
inline const std::vector<NamedSchedule>& builtin_schedules() {
  static const std::vector<NamedSchedule> presets = {
      {"ve-toy", VeSchedule(0.01, 25.0)},
      {"ve-church-256", VeSchedule(0.01, 380.0)},
      {"ve-bedroom-256", VeSchedule(0.01, 378.0)},
      {"ve-ffhq-256", VeSchedule(0.01, 348.0)},
      {"ve-ffhq-1024", VeSchedule(0.01, 1348.0)},
      {"vp-default", VpSchedule(0.1, 20.0)},
  };
  return presets;
}

inline NoiseSchedule schedule_preset(const std::string& name) {
  const auto& presets = builtin_schedules();
  const auto it = std::find_if(presets.begin(), presets.end(),
                               [&](const NamedSchedule& p) { return p.name == name; });
  if (it == presets.end()) throw ParameterError("unknown schedule preset '" + name + "'");
  return it->schedule;
}

/// A preset name, or a path to a key-value schedule file.
inline NoiseSchedule resolve_schedule(const std::string& name_or_path) {
  const auto& presets = builtin_schedules();
  for (const auto& p : presets)
    if (p.name == name_or_path) return p.schedule;
  if (std::filesystem::exists(name_or_path)) return schedule_from_config(load_key_values(name_or_path));
  throw ParameterError("unknown schedule preset or file '" + name_or_path + "'");
}

} // namespace sdedit
