#pragma once

#include <Eigen/Core>

namespace sdedit {

/// Estimate of ∇ₓ log p_t(x). Implementations are read-only after
/// construction and may be shared between threads.
class ScoreModel {
public:
  virtual ~ScoreModel() = default;

  virtual Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const = 0;

  /// Input dimension the model was built for, or 0 when any dimension works.
  virtual Eigen::Index dim() const { return 0; }
};

/// s ≡ 0. Reduces SDEdit to pure noise injection; the χ² and bound checks use it.
class ZeroScore final : public ScoreModel {
public:
  Eigen::VectorXd score(const Eigen::VectorXd& x, double) const override {
    return Eigen::VectorXd::Zero(x.size());
  }
};

/// ∇ₓ log p_t(y | x) for a time-dependent classifier.
class ClassifierGradient {
public:
  virtual ~ClassifierGradient() = default;
  virtual Eigen::VectorXd log_posterior_grad(const Eigen::VectorXd& x, double t, int label) const = 0;
  virtual int num_classes() const = 0;
};

} // namespace sdedit
