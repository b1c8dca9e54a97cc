#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/guide.hpp"
#include "sdedit/parallel.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/sampler.hpp"
#include "sdedit/schedule.hpp"
#include "sdedit/score_model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace sdedit {

struct FaithfulnessScore {
  double l2 = 0.0;
  double l2_squared = 0.0;
};

/// Euclidean distance over every coordinate, and its square.
inline FaithfulnessScore faithfulness(const Eigen::VectorXd& guide, const Eigen::VectorXd& output) {
  if (guide.size() != output.size()) throw ShapeError("faithfulness: guide and output differ in size");
  const double sq = (guide - output).squaredNorm();
  return {std::sqrt(sq), sq};
}

inline FaithfulnessScore faithfulness(const Guide& guide, const Eigen::VectorXd& output) {
  return faithfulness(guide.data, output);
}

// ---------------------------------------------------------------------------
// Realism: unbiased MMD² with the KID kernel k(x,y) = (xᵀy/d + 1)³ on raw
// coordinates.

struct MmdScore {
  double value = 0.0;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
  static constexpr const char* kernel = "cubic-polynomial (x.y/d + 1)^3";
};

inline double kid_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double v = x.dot(y) / static_cast<double>(x.size()) + 1.0;
  return v * v * v;
}

namespace detail {
// Strict weak order on sample sets so mmd(a,b) and mmd(b,a) run the same arithmetic.
inline bool set_less(std::span<const Eigen::VectorXd> a, std::span<const Eigen::VectorXd> b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return a[i].size() < b[i].size();
    for (Eigen::Index j = 0; j < a[i].size(); ++j)
      if (a[i][j] != b[i][j]) return a[i][j] < b[i][j];
  }
  return false;
}
} // namespace detail

/// Equal-size sets use the U-statistic that also drops the paired i = j cross
/// terms, so identical sets score exactly zero; unequal sizes use the standard
/// unbiased estimator. Both are unbiased for MMD².
inline MmdScore mmd_kid(std::span<const Eigen::VectorXd> a, std::span<const Eigen::VectorXd> b) {
  if (a.size() < 2 || b.size() < 2) throw ParameterError("MMD needs at least 2 samples per set");
  const Eigen::Index d = a.front().size();
  for (const auto& v : a)
    if (v.size() != d) throw ShapeError("MMD samples differ in dimension");
  for (const auto& v : b)
    if (v.size() != d) throw ShapeError("MMD samples differ in dimension");
  MmdScore out{0.0, a.size(), b.size()};
  if (detail::set_less(b, a)) std::swap(a, b);

  auto within = [](std::span<const Eigen::VectorXd> s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) sum += kid_kernel(s[i], s[j]);
    return 2.0 * sum;
  };
  const double kaa = within(a);
  const double kbb = within(b);
  double kab = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double k = kid_kernel(a[i], b[j]);
      kab += k;
      if (i == j) diag += k;
    }
  const double m = static_cast<double>(a.size());
  const double n = static_cast<double>(b.size());
  if (a.size() == b.size())
    out.value = (kaa + kbb - 2.0 * (kab - diag)) / (m * (m - 1.0));
  else
    out.value = kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n);
  return out;
}

// ---------------------------------------------------------------------------
// Realism vs faithfulness sweep

struct SweepConfig {
  std::vector<double> t0_grid;
  int runs_per_point = 200;
  int n_steps = 500;
  int mmd_subsets = 10; // MMD mean ± stderr over disjoint subsets
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct TradeoffPoint {
  double t0 = 0.0;
  double l2sq_mean = 0.0;
  double l2sq_stderr = 0.0;
  double mmd_mean = 0.0;
  double mmd_stderr = 0.0;
  int n_runs = 0;
};

struct TradeoffReport {
  std::vector<TradeoffPoint> points;
  SweepConfig config;
  std::size_t n_guides = 0;
  std::size_t reference_size = 0;
};

namespace detail {
inline std::pair<double, double> mean_stderr(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}
} // namespace detail

/// Runs SDEdit from every t0 in the grid, cycling through `guides`; records
/// mean squared L2 to the guide and MMD between outputs and `reference`.
inline TradeoffReport tradeoff_sweep(const std::vector<Guide>& guides, const ScoreModel& score,
                                     const NoiseSchedule& schedule, const SweepConfig& cfg,
                                     std::span<const Eigen::VectorXd> reference) {
  if (cfg.t0_grid.empty()) throw ParameterError("sweep grid is empty");
  if (guides.empty()) throw ParameterError("sweep needs at least one guide");
  if (cfg.runs_per_point < 1) throw ParameterError("runs_per_point must be >= 1");
  for (std::size_t i = 1; i < cfg.t0_grid.size(); ++i)
    if (!(cfg.t0_grid[i] > cfg.t0_grid[i - 1])) throw ParameterError("sweep t0 grid must be strictly increasing");

  const std::size_t n_t = cfg.t0_grid.size();
  const auto runs = static_cast<std::size_t>(cfg.runs_per_point);
  std::vector<Eigen::VectorXd> outputs(n_t * runs);
  std::vector<double> l2sq(n_t * runs);
  parallel_for(
      n_t * runs,
      [&](std::size_t idx) {
        const std::size_t ti = idx / runs, r = idx % runs;
        const Guide& g = guides[r % guides.size()];
        SdeditConfig sc;
        sc.t0 = cfg.t0_grid[ti];
        sc.n_steps = cfg.n_steps;
        sc.seed = derive_seed(derive_seed(cfg.seed, ti), r);
        outputs[idx] = sdedit(g, score, schedule, sc).output;
        l2sq[idx] = faithfulness(g, outputs[idx]).l2_squared;
      },
      cfg.threads);

  TradeoffReport report{{}, cfg, guides.size(), reference.size()};
  for (std::size_t ti = 0; ti < n_t; ++ti) {
    TradeoffPoint p;
    p.t0 = cfg.t0_grid[ti];
    p.n_runs = cfg.runs_per_point;
    std::tie(p.l2sq_mean, p.l2sq_stderr) =
        detail::mean_stderr({l2sq.begin() + static_cast<std::ptrdiff_t>(ti * runs),
                             l2sq.begin() + static_cast<std::ptrdiff_t>((ti + 1) * runs)});
    std::span<const Eigen::VectorXd> outs(outputs.data() + ti * runs, runs);
    int subsets = std::max(1, cfg.mmd_subsets);
    while (subsets > 1 && (runs / subsets < 2 || reference.size() / subsets < 2)) --subsets;
    if (reference.size() >= 2 && runs >= 2) {
      std::vector<double> vals;
      const std::size_t so = runs / subsets, sr = reference.size() / subsets;
      for (int s = 0; s < subsets; ++s)
        vals.push_back(mmd_kid(outs.subspan(s * so, so), reference.subspan(s * sr, sr)).value);
      std::tie(p.mmd_mean, p.mmd_stderr) = detail::mean_stderr(vals);
    }
    report.points.push_back(p);
  }
  return report;
}

/// Number of adjacent pairs where the sequence decreases.
inline int count_decreases(const std::vector<double>& v) {
  int n = 0;
  for (std::size_t i = 1; i < v.size(); ++i) n += v[i] < v[i - 1];
  return n;
}

// ---------------------------------------------------------------------------
// Deviation bound: with ‖s_θ‖² ≤ C, with probability ≥ 1 − δ
//   ‖x(t0) − SDEdit(x)‖² ≤ σ²(t0) (C σ²(t0) + d + 2√(−d ln δ) − 2 ln δ).

inline double deviation_bound(double C, int d, double delta, double sigma_t0) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0,1)");
  if (!(C >= 0.0)) throw DomainError("C must be nonnegative");
  if (d < 1) throw DomainError("d must be >= 1");
  if (!(sigma_t0 >= 0.0)) throw DomainError("sigma(t0) must be nonnegative");
  const double s2 = sigma_t0 * sigma_t0;
  const double ld = std::log(delta);
  return s2 * (C * s2 + d + 2.0 * std::sqrt(-d * ld) - 2.0 * ld);
}

struct BoundCheckReport {
  double C = 0.0;
  bool C_measured = false;
  int d = 0;
  double delta = 0.0;
  double sigma_t0 = 0.0;
  double bound = 0.0;
  long n_runs = 0;
  /// Fraction of runs with ‖x(t0) − output‖² above the bound (the bounded quantity).
  double violation_fraction = 0.0;
  /// Same test against the unperturbed guide; it includes the initial noise draw
  /// and is reported for reference only.
  double guide_violation_fraction = 0.0;
};

namespace detail {
class MaxNormScore final : public ScoreModel {
public:
  explicit MaxNormScore(const ScoreModel& inner) : inner_(inner) {}
  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    Eigen::VectorXd s = inner_.score(x, t);
    max_sq_ = std::max(max_sq_, s.squaredNorm());
    return s;
  }
  Eigen::Index dim() const override { return inner_.dim(); }
  double max_squared_norm() const { return max_sq_; }

private:
  const ScoreModel& inner_;
  mutable double max_sq_ = 0.0; // one instance per run; not shared across threads
};
} // namespace detail

/// Empirical check of the deviation bound over `n_runs` seeded runs (VE only).
/// When C is not supplied it is measured as the largest ‖s_θ‖² seen by any step.
inline BoundCheckReport check_deviation_bound(const Guide& guide, const ScoreModel& score, const NoiseSchedule& schedule,
                                    const SdeditConfig& cfg, std::optional<double> C, double delta, long n_runs,
                                    unsigned threads = 0) {
  const auto* ve = std::get_if<VeSchedule>(&schedule);
  if (!ve) throw ParameterError("the deviation bound is stated for the VE schedule");
  if (n_runs < 1) throw ParameterError("n_runs must be >= 1");
  const auto runs = static_cast<std::size_t>(n_runs);
  std::vector<double> start_sq(runs), guide_sq(runs), cmax(runs);
  parallel_for(
      runs,
      [&](std::size_t r) {
        detail::MaxNormScore probe(score);
        SdeditConfig rc = cfg;
        rc.seed = derive_seed(cfg.seed, r);
        const SampleResult res = sdedit(guide, probe, schedule, rc);
        start_sq[r] = (res.perturbed_start - res.output).squaredNorm();
        guide_sq[r] = (guide.data - res.output).squaredNorm();
        cmax[r] = probe.max_squared_norm();
      },
      threads);

  BoundCheckReport rep;
  rep.C_measured = !C.has_value();
  rep.C = C ? *C : *std::max_element(cmax.begin(), cmax.end());
  rep.d = static_cast<int>(guide.size());
  rep.delta = delta;
  rep.sigma_t0 = sigma_ve(*ve, cfg.t0);
  rep.bound = deviation_bound(rep.C, rep.d, delta, rep.sigma_t0);
  rep.n_runs = n_runs;
  const auto above = [&](const std::vector<double>& v) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double x) { return x > rep.bound; })) /
           static_cast<double>(runs);
  };
  rep.violation_fraction = above(start_sq);
  rep.guide_violation_fraction = above(guide_sq);
  return rep;
}

} // namespace sdedit
