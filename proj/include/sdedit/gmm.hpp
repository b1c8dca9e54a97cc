#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/schedule.hpp"
#include "sdedit/score_model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace sdedit {

struct GmmComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  double std = 1.0; // isotropic: covariance std²·I
};

/// Isotropic Gaussian mixture standing in for the data distribution.
struct GmmSpec {
  std::vector<GmmComponent> components;

  Eigen::Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
  int size() const { return static_cast<int>(components.size()); }

  void validate() const {
    if (components.empty()) throw ParameterError("GMM needs at least one component");
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0 && c.weight <= 1.0)) throw ParameterError("GMM weights must lie in (0,1]");
      if (!(c.std > 0.0)) throw ParameterError("GMM component std must be positive");
      if (c.mean.size() != dim() || dim() == 0) throw ParameterError("GMM means must share one dimension");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("GMM weights must sum to 1");
  }
};

/// Equal-weight mixture over the given means with a shared std.
inline GmmSpec equal_weight_gmm(const std::vector<Eigen::VectorXd>& means, double std) {
  GmmSpec g;
  const double w = 1.0 / static_cast<double>(means.size());
  for (const auto& m : means) g.components.push_back({w, m, std});
  if (!g.components.empty()) {
    // absorb rounding so the weights sum to one to the last ulp that matters
    double rest = 1.0;
    for (std::size_t i = 0; i + 1 < g.components.size(); ++i) rest -= g.components[i].weight;
    g.components.back().weight = rest;
  }
  g.validate();
  return g;
}

/// Per-component parameters of the perturbed mixture p_t = p_0 ⊛ N(0, std_t²).
/// A Gaussian mixture stays a Gaussian mixture under the forward SDE:
/// component k becomes N(scale·μ_k, (scale²s_k² + std_t²) I).
struct PerturbedGmm {
  const GmmSpec& gmm;
  double scale;
  std::vector<double> var; // perturbed variance per component

  PerturbedGmm(const GmmSpec& g, const NoiseSchedule& schedule, double t) : gmm(g) {
    const Marginal m = marginal(schedule, t);
    scale = m.scale;
    var.reserve(g.components.size());
    for (const auto& c : g.components) var.push_back(m.scale * m.scale * c.std * c.std + m.std * m.std);
  }

  /// log w_k + log N(x; scale·μ_k, var_k I).
  std::vector<double> log_joint(const Eigen::VectorXd& x) const {
    const double d = static_cast<double>(x.size());
    std::vector<double> out(gmm.components.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      const auto& c = gmm.components[k];
      const double sq = (x - scale * c.mean).squaredNorm();
      out[k] = std::log(c.weight) - 0.5 * sq / var[k] - 0.5 * d * std::log(2.0 * std::numbers::pi * var[k]);
    }
    return out;
  }
};

namespace detail {
inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double a : v) mx = std::max(mx, a);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double a : v) s += std::exp(a - mx);
  return mx + std::log(s);
}
} // namespace detail

inline double perturbed_log_density(const GmmSpec& gmm, const NoiseSchedule& schedule,
                                    const Eigen::VectorXd& x, double t) {
  return detail::log_sum_exp(PerturbedGmm(gmm, schedule, t).log_joint(x));
}

/// Component posterior p_t(k | x).
inline std::vector<double> component_posterior(const GmmSpec& gmm, const NoiseSchedule& schedule,
                                               const Eigen::VectorXd& x, double t) {
  auto lj = PerturbedGmm(gmm, schedule, t).log_joint(x);
  const double lse = detail::log_sum_exp(lj);
  for (double& v : lj) v = std::exp(v - lse);
  return lj;
}

/// Exact ∇ₓ log p_t(x) = Σ_k r_k (scale·μ_k − x)/var_k.
inline Eigen::VectorXd analytic_gmm_score(const GmmSpec& gmm, const NoiseSchedule& schedule,
                                          const Eigen::VectorXd& x, double t) {
  const PerturbedGmm pg(gmm, schedule, t);
  auto lj = pg.log_joint(x);
  const double lse = detail::log_sum_exp(lj);
  Eigen::VectorXd pull = Eigen::VectorXd::Zero(x.size());
  double precision = 0.0;
  for (std::size_t k = 0; k < lj.size(); ++k) {
    const double r = std::exp(lj[k] - lse);
    if (r == 0.0) continue;
    pull.noalias() += (r * pg.scale / pg.var[k]) * gmm.components[k].mean;
    precision += r / pg.var[k];
  }
  return pull - precision * x;
}

/// ∇ₓ log p_t(y | x) = ∇ log N_y(x) − ∇ log p_t(x).
inline Eigen::VectorXd class_posterior_grad(const GmmSpec& gmm, const NoiseSchedule& schedule,
                                            const Eigen::VectorXd& x, double t, int label) {
  if (label < 0 || label >= gmm.size())
    throw ParameterError("class label " + std::to_string(label) + " outside the mixture");
  const PerturbedGmm pg(gmm, schedule, t);
  const Eigen::VectorXd own = (pg.scale * gmm.components[label].mean - x) / pg.var[label];
  return own - analytic_gmm_score(gmm, schedule, x, t);
}

class AnalyticGmmScore final : public ScoreModel {
public:
  AnalyticGmmScore(GmmSpec gmm, NoiseSchedule schedule) : gmm_(std::move(gmm)), schedule_(schedule) {
    gmm_.validate();
  }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    return analytic_gmm_score(gmm_, schedule_, x, t);
  }
  Eigen::Index dim() const override { return gmm_.dim(); }

  const GmmSpec& gmm() const { return gmm_; }
  const NoiseSchedule& schedule() const { return schedule_; }

private:
  GmmSpec gmm_;
  NoiseSchedule schedule_;
};

/// Mixture components double as classes.
class GmmClassifier final : public ClassifierGradient {
public:
  GmmClassifier(GmmSpec gmm, NoiseSchedule schedule) : gmm_(std::move(gmm)), schedule_(schedule) {
    gmm_.validate();
  }

  Eigen::VectorXd log_posterior_grad(const Eigen::VectorXd& x, double t, int label) const override {
    return class_posterior_grad(gmm_, schedule_, x, t, label);
  }
  int num_classes() const override { return gmm_.size(); }

private:
  GmmSpec gmm_;
  NoiseSchedule schedule_;
};

struct LabelledSample {
  Eigen::VectorXd x;
  int component;
};

inline LabelledSample sample_gmm(const GmmSpec& gmm, CounterRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int k = gmm.size() - 1;
  for (int i = 0; i < gmm.size(); ++i) {
    acc += gmm.components[i].weight;
    if (u < acc) {
      k = i;
      break;
    }
  }
  const auto& c = gmm.components[k];
  return {c.mean + c.std * rng.normal_vector(c.mean.size()), k};
}

inline std::vector<Eigen::VectorXd> sample_gmm(const GmmSpec& gmm, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, NoiseStream::data);
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_gmm(gmm, rng).x);
  return out;
}

/// Index of the component whose (unperturbed) mean is nearest to x.
inline int nearest_component(const GmmSpec& gmm, const Eigen::VectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < gmm.size(); ++k) {
    const double d = (x - gmm.components[k].mean).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

} // namespace sdedit
