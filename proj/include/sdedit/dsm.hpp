#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/gmm.hpp"
#include "sdedit/mlp.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/schedule.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sdedit {

/// Denoising score matching L_t = E‖std_t · s(x_t, t) + z‖² with
/// x_t = scale_t·x_0 + std_t·z. The optimum is the true perturbed score.
struct DsmBatchLoss {
  double value = 0.0;
  Eigen::VectorXd gradient; // d value / d parameters, same layout as MlpScoreNet::parameters()
};

namespace detail {

struct DsmDraw {
  Eigen::MatrixXd noisy; // d × B
  Eigen::MatrixXd noise; // d × B
  Eigen::VectorXd times;
  Eigen::VectorXd std;
  Eigen::VectorXd in_scale;
};

inline DsmDraw draw_dsm(const NoiseSchedule& schedule, std::span<const Eigen::VectorXd> batch,
                        std::span<const double> times, CounterRng& rng) {
  const Eigen::Index d = batch.front().size();
  const auto n = static_cast<Eigen::Index>(batch.size());
  DsmDraw draw{Eigen::MatrixXd(d, n), Eigen::MatrixXd(d, n), Eigen::VectorXd(n), Eigen::VectorXd(n),
               Eigen::VectorXd(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    if (batch[j].size() != d) throw ShapeError("DSM batch elements differ in dimension");
    const Marginal m = marginal(schedule, times[j]);
    if (!(m.std > 0.0)) throw DomainError("DSM loss is degenerate at t = 0 (zero noise)");
    draw.noise.col(j) = rng.normal_vector(d);
    draw.noisy.col(j) = m.scale * batch[j] + m.std * draw.noise.col(j);
    draw.times[j] = times[j];
    draw.std[j] = m.std;
    draw.in_scale[j] = mlp_input_scale(m);
  }
  return draw;
}

inline DsmBatchLoss dsm_loss_at(const MlpScoreNet& net, const NoiseSchedule& schedule,
                                std::span<const Eigen::VectorXd> batch, std::span<const double> times,
                                CounterRng& rng) {
  if (batch.empty()) throw ParameterError("DSM batch is empty");
  if (batch.front().size() != net.data_dim()) throw ShapeError("DSM batch dimension differs from the net");
  const DsmDraw draw = draw_dsm(schedule, batch, times, rng);
  MlpScoreNet::Cache cache;
  // std_t·s_θ is exactly the raw network output.
  const Eigen::MatrixXd out = net.forward(net.make_input(draw.noisy, draw.times, draw.in_scale), &cache);
  const Eigen::MatrixXd residual = out + draw.noise;
  const double n = static_cast<double>(batch.size());
  return {residual.squaredNorm() / n, net.backward(cache, (2.0 / n) * residual)};
}

} // namespace detail

/// One noise draw per batch element at a fixed t; draws come from `seed`.
inline DsmBatchLoss dsm_loss(const MlpScoreNet& net, const NoiseSchedule& schedule,
                             std::span<const Eigen::VectorXd> batch, double t, std::uint64_t seed) {
  detail::check_unit_time(t, "dsm_loss");
  CounterRng rng(seed, NoiseStream::training);
  const std::vector<double> times(batch.size(), t);
  return detail::dsm_loss_at(net, schedule, batch, times, rng);
}

/// Same objective for an arbitrary score model (value only). With the same
/// seed it sees exactly the noise draws dsm_loss() sees.
inline double dsm_loss_value(const ScoreModel& model, const NoiseSchedule& schedule,
                             std::span<const Eigen::VectorXd> batch, double t, std::uint64_t seed) {
  detail::check_unit_time(t, "dsm_loss");
  if (batch.empty()) throw ParameterError("DSM batch is empty");
  CounterRng rng(seed, NoiseStream::training);
  const std::vector<double> times(batch.size(), t);
  const auto draw = detail::draw_dsm(schedule, batch, times, rng);
  double total = 0.0;
  for (Eigen::Index j = 0; j < draw.noisy.cols(); ++j) {
    const Eigen::VectorXd x = draw.noisy.col(j);
    total += (draw.std[j] * model.score(x, t) + draw.noise.col(j)).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

enum class TimeWeighting { uniform };

struct TrainConfig {
  long steps = 5000;
  double learning_rate = 5e-3;
  double momentum = 0.9;
  int batch_size = 128;
  double t_min = 1e-3; // t ~ U(t_min, 1]
  TimeWeighting weighting = TimeWeighting::uniform;
  double clip_norm = 0.0; // 0 disables gradient clipping
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpScoreNet net;
  std::vector<double> loss_ema; // one entry per step
};

using DataSampler = std::function<Eigen::VectorXd(CounterRng&)>;

/// SGD (with optional momentum) on the DSM objective. Each batch element draws
/// its own t so one step already averages over the time range.
inline TrainResult train_score(MlpScoreNet net, const DataSampler& data, const NoiseSchedule& schedule,
                               const TrainConfig& cfg) {
  if (cfg.steps < 0) throw ParameterError("training steps must be >= 0");
  if (cfg.batch_size < 1) throw ParameterError("batch size must be >= 1");
  CounterRng data_rng(cfg.seed, NoiseStream::data);
  CounterRng noise_rng(derive_seed(cfg.seed, 1), NoiseStream::training);
  Eigen::VectorXd params = net.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());
  std::vector<Eigen::VectorXd> batch(static_cast<std::size_t>(cfg.batch_size));
  std::vector<double> times(batch.size());
  TrainResult result{net, {}};
  result.loss_ema.reserve(static_cast<std::size_t>(cfg.steps));
  double ema = 0.0;
  for (long step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = data(data_rng);
      times[b] = cfg.t_min + (1.0 - cfg.t_min) * (1.0 - data_rng.uniform()); // (t_min, 1]
    }
    DsmBatchLoss loss = detail::dsm_loss_at(result.net, schedule, batch, times, noise_rng);
    if (!std::isfinite(loss.value) || !loss.gradient.allFinite())
      throw TrainingError("DSM training diverged at step " + std::to_string(step), step);
    if (cfg.clip_norm > 0.0) {
      const double norm = loss.gradient.norm();
      if (norm > cfg.clip_norm) loss.gradient *= cfg.clip_norm / norm;
    }
    velocity = cfg.momentum * velocity - cfg.learning_rate * loss.gradient;
    params += velocity;
    result.net.set_parameters(params);
    ema = step == 0 ? loss.value : 0.99 * ema + 0.01 * loss.value;
    result.loss_ema.push_back(ema);
  }
  return result;
}

inline TrainResult train_score(MlpScoreNet net, const GmmSpec& gmm, const NoiseSchedule& schedule,
                               const TrainConfig& cfg) {
  gmm.validate();
  if (gmm.dim() != net.data_dim()) throw ShapeError("GMM dimension differs from the net");
  return train_score(std::move(net), [&gmm](CounterRng& rng) { return sample_gmm(gmm, rng).x; }, schedule, cfg);
}

inline TrainResult train_score(MlpScoreNet net, const std::vector<Eigen::VectorXd>& dataset,
                               const NoiseSchedule& schedule, const TrainConfig& cfg) {
  if (dataset.empty()) throw ParameterError("training dataset is empty");
  return train_score(std::move(net), [&dataset](CounterRng& rng) { return dataset[rng.below(dataset.size())]; },
                     schedule, cfg);
}

} // namespace sdedit
