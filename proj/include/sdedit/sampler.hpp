#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/guide.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/schedule.hpp"
#include "sdedit/score_model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sdedit {

struct SdeditConfig {
  double t0 = 0.45;
  int n_steps = 500;
  int repeats = 1; // K
  std::uint64_t seed = 0;
  std::optional<int> label; // class-conditional target
  double guidance_scale = 1.0;
  bool hard_restore = false; // masked runs: copy preserved coordinates back after the last step
  int snapshot_stride = 0;   // 0 disables trajectory snapshots

  void validate() const {
    if (!(t0 >= 0.0 && t0 <= 1.0)) throw DomainError("t0 must lie in [0,1]");
    if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
    if (repeats < 1) throw ParameterError("repeats must be >= 1");
    if (snapshot_stride < 0) throw ParameterError("snapshot_stride must be >= 0");
  }
};

struct Snapshot {
  int repeat;
  double t;
  Eigen::VectorXd x;
};

struct SampleResult {
  Eigen::VectorXd output;
  Shape shape;
  std::vector<Snapshot> snapshots; // per repeat, descending t
  std::uint64_t seed = 0;
  long elapsed_steps = 0;
  Eigen::VectorXd perturbed_start; // x(t0) of the last repeat, before any reverse step
};

/// One draw of the forward perturbation to t0. VE: x + σ(t0)z. VP: √α x + √(1−α) z
/// with the discrete α(t0) of an `n_steps` grid.
inline Eigen::VectorXd forward_perturb(const Eigen::VectorXd& x, const NoiseSchedule& schedule, double t0,
                                       int n_steps, std::uint64_t seed, std::uint32_t repeat = 0) {
  detail::check_unit_time(t0, "forward_perturb");
  if (t0 == 0.0) return x;
  const Eigen::VectorXd z = normal_vector(x.size(), seed, repeat, 0, NoiseStream::perturb);
  if (const auto* ve = std::get_if<VeSchedule>(&schedule)) return x + sigma_ve(*ve, t0) * z;
  const double a = discrete_alpha_vp(std::get<VpSchedule>(schedule), t0, n_steps);
  return std::sqrt(a) * x + std::sqrt(1.0 - a) * z;
}

/// ε² = σ²(t) − σ²(t − Δt), the variance added back by one reverse VE step.
inline double ve_variance_increment(const VeSchedule& s, double t, double delta_t) {
  double prev = t - delta_t;
  if (prev < 0.0 && prev > -1e-12) prev = 0.0;
  if (prev < 0.0) throw DomainError("reverse step would pass t = 0");
  const double st = sigma_ve(s, t);
  const double sp = sigma_ve(s, prev);
  const double inc = st * st - sp * sp;
  if (inc < 0.0) throw ScheduleError("negative VE variance increment");
  return inc;
}

/// x + ε² (s(x,t) + g) + ε z. `guidance` is an optional extra drift direction
/// (already scaled), e.g. ∇ log p_t(y|x).
inline Eigen::VectorXd reverse_step_ve(const Eigen::VectorXd& x, double t, double delta_t, const VeSchedule& s,
                                       const ScoreModel& score, const Eigen::VectorXd& z,
                                       const Eigen::VectorXd* guidance = nullptr) {
  const double eps2 = ve_variance_increment(s, t, delta_t);
  Eigen::VectorXd drift = score.score(x, t);
  if (guidance) drift += *guidance;
  return x + eps2 * drift + std::sqrt(eps2) * z;
}

/// (x + βΔt s(x,t)) / √(1 − βΔt) + βΔt g + √(βΔt) z.
inline Eigen::VectorXd reverse_step_vp(const Eigen::VectorXd& x, double t, double delta_t, const VpSchedule& s,
                                       const ScoreModel& score, const Eigen::VectorXd& z,
                                       const Eigen::VectorXd* guidance = nullptr) {
  const double b = beta_vp(s, t) * delta_t;
  if (!(b < 1.0)) throw ScheduleError("VP step too coarse: beta*dt >= 1; increase n_steps");
  Eigen::VectorXd out = (x + b * score.score(x, t)) / std::sqrt(1.0 - b) + std::sqrt(b) * z;
  if (guidance) out += b * *guidance;
  return out;
}

namespace detail {

inline void check_dims(const Guide& guide, const ScoreModel& score) {
  guide.validate();
  if (score.dim() != 0 && score.dim() != guide.size())
    throw ShapeError("score model expects dimension " + std::to_string(score.dim()) + ", guide has " +
                     std::to_string(guide.size()));
}

/// Shared driver for the four SDEdit variants (VE/VP × unmasked/masked),
/// optionally with classifier guidance.
inline SampleResult run_sdedit(const Guide& guide, const EditMask* mask, const ScoreModel& score,
                               const ClassifierGradient* classifier, const NoiseSchedule& schedule,
                               const SdeditConfig& cfg) {
  cfg.validate();
  check_dims(guide, score);
  if (mask) mask->validate(guide.size());
  if (classifier) {
    if (!cfg.label) throw ParameterError("class-conditional sampling needs a label");
    if (*cfg.label < 0 || *cfg.label >= classifier->num_classes())
      throw ParameterError("class label " + std::to_string(*cfg.label) + " is not a valid class");
  }

  SampleResult result;
  result.shape = guide.shape;
  result.seed = cfg.seed;
  if (cfg.t0 == 0.0) {
    result.output = guide.data;
    result.perturbed_start = guide.data;
    return result;
  }

  const TimeGrid grid = make_time_grid(cfg.t0, cfg.n_steps);
  const Eigen::VectorXd& x0 = guide.data;
  const Eigen::Index d = x0.size();
  const auto* ve = std::get_if<VeSchedule>(&schedule);
  const auto* vp = std::get_if<VpSchedule>(&schedule);
  const std::vector<double> alpha = vp ? discrete_alpha_table(*vp, cfg.t0, cfg.n_steps) : std::vector<double>{};

  auto keep = [&](Eigen::Index i) { return mask && !mask->editable(i); };
  Eigen::VectorXd x = x0;
  Eigen::VectorXd z(d);

  for (int k = 0; k < cfg.repeats; ++k) {
    const auto rep = static_cast<std::uint32_t>(k);
    fill_normal(z, cfg.seed, rep, 0, NoiseStream::perturb);
    // preserved coordinates restart from the original guide every repeat
    for (Eigen::Index i = 0; i < d; ++i)
      if (keep(i)) x[i] = x0[i];
    if (ve) {
      x += sigma_ve(*ve, cfg.t0) * z;
    } else {
      const double a = alpha.back();
      x = std::sqrt(a) * x + std::sqrt(1.0 - a) * z;
    }
    if (k + 1 == cfg.repeats) result.perturbed_start = x;

    for (int n = grid.n_steps; n >= 1; --n) {
      const double t = grid.time(n);
      if (cfg.snapshot_stride > 0 && (grid.n_steps - n) % cfg.snapshot_stride == 0)
        result.snapshots.push_back({k, t, x});
      fill_normal(z, cfg.seed, rep, static_cast<std::uint32_t>(n), NoiseStream::reverse);
      Eigen::VectorXd guidance;
      if (classifier) guidance = cfg.guidance_scale * classifier->log_posterior_grad(x, t, *cfg.label);
      const Eigen::VectorXd* g = classifier ? &guidance : nullptr;

      Eigen::VectorXd edited = ve ? reverse_step_ve(x, t, grid.delta_t, *ve, score, z, g)
                                  : reverse_step_vp(x, t, grid.delta_t, *vp, score, z, g);
      if (mask) {
        // preserved part follows the forward marginal of the guide, noise shrinking with t
        if (ve) {
          const double st = sigma_ve(*ve, t);
          for (Eigen::Index i = 0; i < d; ++i)
            if (keep(i)) edited[i] = x0[i] + st * z[i];
        } else {
          const double a = alpha[static_cast<std::size_t>(n)];
          const double ra = std::sqrt(a), rn = std::sqrt(1.0 - a);
          for (Eigen::Index i = 0; i < d; ++i)
            if (keep(i)) edited[i] = ra * x0[i] + rn * z[i];
        }
      }
      x = std::move(edited);
      ++result.elapsed_steps;
    }
  }
  if (mask && cfg.hard_restore)
    for (Eigen::Index i = 0; i < d; ++i)
      if (keep(i)) x[i] = x0[i];
  result.output = std::move(x);
  return result;
}

} // namespace detail

/// Perturb the guide to t0, then integrate the reverse SDE back to t0/N; K repeats
/// feed each output back as the next starting point.
inline SampleResult sdedit(const Guide& guide, const ScoreModel& score, const NoiseSchedule& schedule,
                           const SdeditConfig& cfg) {
  return detail::run_sdedit(guide, nullptr, score, nullptr, schedule, cfg);
}

/// Editable coordinates (Ω = 1) follow the reverse SDE; the rest track a
/// noised copy of the guide whose noise decays with t.
inline SampleResult sdedit_masked(const Guide& guide, const EditMask& mask, const ScoreModel& score,
                                  const NoiseSchedule& schedule, const SdeditConfig& cfg) {
  return detail::run_sdedit(guide, &mask, score, nullptr, schedule, cfg);
}

/// Reverse SDE with drift s + guidance_scale·∇ log p_t(y|x) (VE), or the VP update
/// plus βΔt·guidance_scale·∇ log p_t(y|x).
inline SampleResult sdedit_class_conditional(const Guide& guide, const ScoreModel& score,
                                             const ClassifierGradient& classifier, const NoiseSchedule& schedule,
                                             const SdeditConfig& cfg) {
  return detail::run_sdedit(guide, nullptr, score, &classifier, schedule, cfg);
}

/// Unconditional sampling: start from the prior at t = 1 (N(0, σ_max² I) for VE,
/// N(0, I) for VP) and integrate the full reverse SDE.
inline Eigen::VectorXd sample_from_prior(const ScoreModel& score, const NoiseSchedule& schedule, Eigen::Index d,
                                         int n_steps, std::uint64_t seed) {
  const TimeGrid grid = make_time_grid(1.0, n_steps);
  Eigen::VectorXd x = normal_vector(d, seed, 0, 0, NoiseStream::perturb);
  if (const auto* ve = std::get_if<VeSchedule>(&schedule)) x *= ve->sigma_max;
  Eigen::VectorXd z(d);
  for (int n = grid.n_steps; n >= 1; --n) {
    const double t = grid.time(n);
    fill_normal(z, seed, 0, static_cast<std::uint32_t>(n), NoiseStream::reverse);
    if (const auto* ve = std::get_if<VeSchedule>(&schedule))
      x = reverse_step_ve(x, t, grid.delta_t, *ve, score, z);
    else
      x = reverse_step_vp(x, t, grid.delta_t, std::get<VpSchedule>(schedule), score, z);
  }
  return x;
}

} // namespace sdedit
