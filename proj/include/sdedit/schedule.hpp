#pragma once

#include "sdedit/errors.hpp"

#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace sdedit {

/// Variance-exploding schedule: σ(t) = σ_min (σ_max/σ_min)^t for t > 0, σ(0) = 0.
struct VeSchedule {
  double sigma_min = 0.01;
  double sigma_max = 25.0;

  VeSchedule() = default;
  VeSchedule(double smin, double smax) : sigma_min(smin), sigma_max(smax) {
    if (!(smin > 0.0) || !(smax > smin) || !std::isfinite(smax))
      throw ParameterError("VE schedule needs 0 < sigma_min < sigma_max");
  }

  bool operator==(const VeSchedule&) const = default;
};

/// Variance-preserving schedule with affine β(t) = β_min + t(β_max − β_min).
struct VpSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;

  VpSchedule() = default;
  VpSchedule(double bmin, double bmax) : beta_min(bmin), beta_max(bmax) {
    if (!(bmin > 0.0) || !(bmax > 0.0) || !std::isfinite(bmax))
      throw ParameterError("VP schedule needs positive beta_min and beta_max");
  }

  bool operator==(const VpSchedule&) const = default;
};

using NoiseSchedule = std::variant<VeSchedule, VpSchedule>;

enum class Variant { ve, vp };

inline Variant variant_of(const NoiseSchedule& s) {
  return std::holds_alternative<VeSchedule>(s) ? Variant::ve : Variant::vp;
}

inline const char* to_string(Variant v) { return v == Variant::ve ? "ve" : "vp"; }

namespace detail {
inline void check_unit_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError(std::string(what) + ": t must lie in [0,1], got " + std::to_string(t));
}
} // namespace detail

inline double sigma_ve(const VeSchedule& s, double t) {
  detail::check_unit_time(t, "sigma_ve");
  if (t == 0.0) return 0.0;
  // log space keeps (σ_max/σ_min)^t finite for very large σ_max.
  const double log_min = std::log(s.sigma_min);
  return std::exp(log_min + t * (std::log(s.sigma_max) - log_min));
}

inline double beta_vp(const VpSchedule& s, double t) {
  detail::check_unit_time(t, "beta_vp");
  return s.beta_min + t * (s.beta_max - s.beta_min);
}

/// ∫₀ᵗ β(u) du.
inline double integrated_beta(const VpSchedule& s, double t) {
  return s.beta_min * t + 0.5 * (s.beta_max - s.beta_min) * t * t;
}

/// Continuous-time signal retention exp(−∫₀ᵗ β); the exact VP marginal scale².
inline double continuous_alpha_vp(const VpSchedule& s, double t) {
  detail::check_unit_time(t, "continuous_alpha_vp");
  return std::exp(-integrated_beta(s, t));
}

/// Prefix products α_n = ∏_{i=1}^{n} (1 − β(i t0/N) Δt) for n = 0..N (α_0 = 1).
inline std::vector<double> discrete_alpha_table(const VpSchedule& s, double t0, int n_steps) {
  detail::check_unit_time(t0, "discrete_alpha_vp");
  if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
  const double dt = t0 / n_steps;
  std::vector<double> table(static_cast<std::size_t>(n_steps) + 1);
  table[0] = 1.0;
  for (int i = 1; i <= n_steps; ++i) {
    const double factor = 1.0 - beta_vp(s, t0 * i / n_steps) * dt;
    if (!(factor > 0.0))
      throw ScheduleError("VP grid too coarse: 1 - beta*dt <= 0 at step " + std::to_string(i) +
                          "; increase n_steps");
    table[i] = table[i - 1] * factor;
  }
  return table;
}

inline double discrete_alpha_vp(const VpSchedule& s, double t0, int n_steps) {
  return discrete_alpha_table(s, t0, n_steps).back();
}

/// Gaussian marginal of the forward SDE: x(t) = scale·x(0) + std·z.
struct Marginal {
  double scale;
  double std;
};

inline Marginal marginal(const NoiseSchedule& schedule, double t) {
  if (const auto* ve = std::get_if<VeSchedule>(&schedule)) return {1.0, sigma_ve(*ve, t)};
  const double a = continuous_alpha_vp(std::get<VpSchedule>(schedule), t);
  return {std::sqrt(a), std::sqrt(1.0 - a)};
}

/// Descending evaluation times t0·n/N for n = N..1.
struct TimeGrid {
  double t0 = 0.0;
  int n_steps = 1;
  double delta_t = 0.0;

  double time(int n) const { return t0 * n / n_steps; }

  std::vector<double> times() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_steps));
    for (int n = n_steps; n >= 1; --n) out.push_back(time(n));
    return out;
  }
};

inline TimeGrid make_time_grid(double t0, int n_steps) {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw DomainError("make_time_grid: t0 must lie in (0,1]");
  if (n_steps < 1) throw ParameterError("make_time_grid: n_steps must be >= 1");
  return {t0, n_steps, t0 / n_steps};
}

} // namespace sdedit
