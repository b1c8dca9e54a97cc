#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/presets.hpp"
#include "sdedit/rng.hpp"
#include "sdedit/schedule.hpp"
#include "sdedit/score_model.hpp"

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace sdedit {

/// Fully connected score network with SiLU hidden activations.
///
/// Input columns are [c_in(t)·x ; emb(t)] where emb(t) = (t, sin(2^k π t),
/// cos(2^k π t)) for k < frequencies. The raw output is a noise prediction;
/// LearnedMlpScore divides it by the marginal std to obtain a score.
class MlpScoreNet {
public:
  struct Layer {
    Eigen::MatrixXd weight; // out × in
    Eigen::VectorXd bias;
  };

  /// Activations kept by forward() for backward().
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs; // input to each layer
    std::vector<Eigen::MatrixXd> pre;    // pre-activation of each hidden layer
  };

  MlpScoreNet() = default;

  MlpScoreNet(Eigen::Index data_dim, std::vector<int> hidden, std::uint64_t seed, int frequencies = 4)
      : data_dim_(data_dim), hidden_(std::move(hidden)), frequencies_(frequencies), seed_(seed) {
    if (data_dim_ < 1) throw ParameterError("MLP data dimension must be >= 1");
    for (int h : hidden_)
      if (h < 1) throw ParameterError("MLP hidden widths must be >= 1");
    CounterRng rng(seed, NoiseStream::training);
    Eigen::Index in = input_size();
    auto add_layer = [&](Eigen::Index out, double gain) {
      Layer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      const double scale = gain / std::sqrt(static_cast<double>(in));
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = scale * rng.normal();
      layers_.push_back(std::move(l));
      in = out;
    };
    for (int h : hidden_) add_layer(h, std::sqrt(2.0));
    add_layer(data_dim_, 1.0);
  }

  Eigen::Index data_dim() const { return data_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  int frequencies() const { return frequencies_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::Index embedding_size() const { return 1 + 2 * frequencies_; }
  Eigen::Index input_size() const { return data_dim_ + embedding_size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  void embed_time(double t, Eigen::Ref<Eigen::VectorXd> out) const {
    out[0] = t;
    for (int k = 0; k < frequencies_; ++k) {
      const double w = std::ldexp(std::numbers::pi, k);
      out[1 + 2 * k] = std::sin(w * t);
      out[2 + 2 * k] = std::cos(w * t);
    }
  }

  /// Columns of `x` are states; `x_scale[j]` multiplies column j before it enters the net.
  Eigen::MatrixXd make_input(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                             const Eigen::VectorXd& x_scale) const {
    Eigen::MatrixXd in(input_size(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      in.col(j).head(data_dim_) = x_scale[j] * x.col(j);
      Eigen::VectorXd emb(embedding_size());
      embed_time(t[j], emb);
      in.col(j).tail(embedding_size()) = emb;
    }
    return in;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const {
    Eigen::MatrixXd h = input;
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (cache) cache->inputs.push_back(h);
      Eigen::MatrixXd a = layers_[l].weight * h;
      a.colwise() += layers_[l].bias;
      if (l + 1 == layers_.size()) return a;
      if (cache) cache->pre.push_back(a);
      h = a.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
    }
    return h;
  }

  /// Gradient of Σ (d_out ⊙ output) with respect to the flattened parameters.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& d_out) const {
    Eigen::VectorXd grad(num_params());
    Eigen::MatrixXd delta = d_out;
    Eigen::Index offset = num_params();
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      offset -= layer.bias.size();
      grad.segment(offset, layer.bias.size()) = delta.rowwise().sum();
      offset -= layer.weight.size();
      const Eigen::MatrixXd dw = delta * cache.inputs[l].transpose();
      grad.segment(offset, dw.size()) = Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
      if (l == 0) break;
      Eigen::MatrixXd back = layer.weight.transpose() * delta;
      const Eigen::MatrixXd& pre = cache.pre[l - 1];
      delta = back.cwiseProduct(pre.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      }));
    }
    return grad;
  }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Parameters in layer order; each layer is weight (column-major) then bias.
  Eigen::VectorXd parameters() const {
    Eigen::VectorXd p(num_params());
    Eigen::Index o = 0;
    for (const auto& l : layers_) {
      p.segment(o, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
      o += l.weight.size();
      p.segment(o, l.bias.size()) = l.bias;
      o += l.bias.size();
    }
    return p;
  }

  void set_parameters(const Eigen::VectorXd& p) {
    if (p.size() != num_params()) throw ShapeError("parameter vector has wrong length");
    Eigen::Index o = 0;
    for (auto& l : layers_) {
      Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = p.segment(o, l.weight.size());
      o += l.weight.size();
      l.bias = p.segment(o, l.bias.size());
      o += l.bias.size();
    }
  }

  bool parameters_finite() const { return parameters().allFinite(); }

  void set_seed(std::uint64_t s) { seed_ = s; }

private:
  Eigen::Index data_dim_ = 0;
  std::vector<int> hidden_;
  int frequencies_ = 4;
  std::uint64_t seed_ = 0;
  std::vector<Layer> layers_;
};

/// Input scale 1/√(scale² + std²) assumes roughly unit-variance data.
inline double mlp_input_scale(const Marginal& m) { return 1.0 / std::sqrt(m.scale * m.scale + m.std * m.std); }

/// s_θ(x,t) = net(c_in x, emb t) / std_t.
class LearnedMlpScore final : public ScoreModel {
public:
  LearnedMlpScore(MlpScoreNet net, NoiseSchedule schedule) : net_(std::move(net)), schedule_(schedule) {}

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    const Marginal m = marginal(schedule_, t);
    if (!(m.std > 0.0)) throw DomainError("learned score is undefined at zero noise (t = 0)");
    Eigen::VectorXd tv(1), sc(1);
    tv[0] = t;
    sc[0] = mlp_input_scale(m);
    return net_.forward(net_.make_input(x, tv, sc)).col(0) / m.std;
  }
  Eigen::Index dim() const override { return net_.data_dim(); }

  const MlpScoreNet& net() const { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }

private:
  MlpScoreNet net_;
  NoiseSchedule schedule_;
};

// ---------------------------------------------------------------------------
// Weights file: text header terminated by "end\n", then little-endian float64
// parameters.

inline constexpr const char* kMlpMagic = "SDEDIT-MLP";
inline constexpr int kMlpFormatVersion = 1;

struct MlpFile {
  MlpScoreNet net;
  std::string preset; // schedule preset name, or "custom"
  NoiseSchedule schedule;
};

inline void save_mlp(const std::filesystem::path& path, const MlpScoreNet& net, const std::string& preset,
                     const NoiseSchedule& schedule) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << kMlpMagic << ' ' << kMlpFormatVersion << '\n';
  out << "data_dim " << net.data_dim() << '\n';
  out << "hidden";
  for (int h : net.hidden()) out << ' ' << h;
  out << '\n';
  out << "frequencies " << net.frequencies() << '\n';
  out << "preset " << preset << '\n';
  std::istringstream sched(schedule_to_config(schedule));
  for (std::string line; std::getline(sched, line);) out << "schedule " << line << '\n';
  out << "seed " << net.seed() << '\n';
  out << "params " << net.num_params() << '\n';
  out << "end\n";
  const Eigen::VectorXd p = net.parameters();
  static_assert(std::endian::native == std::endian::little, "weights file assumes little-endian host");
  out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out) throw FormatError("short write to " + path.string());
}

inline MlpFile load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kMlpMagic) throw FormatError(path.string() + " is not an MLP weights file");
    if (version != kMlpFormatVersion) throw FormatError("unsupported MLP weights version " + std::to_string(version));
  }
  Eigen::Index dim = 0, params = -1;
  std::vector<int> hidden;
  int freqs = 4;
  std::uint64_t seed = 0;
  std::string preset = "custom";
  std::string schedule_text;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "data_dim") ls >> dim;
    else if (key == "hidden") for (int h; ls >> h;) hidden.push_back(h);
    else if (key == "frequencies") ls >> freqs;
    else if (key == "preset") ls >> preset;
    else if (key == "seed") ls >> seed;
    else if (key == "params") ls >> params;
    else if (key == "schedule") {
      std::string rest;
      std::getline(ls, rest);
      schedule_text += rest + "\n";
    } else throw FormatError("unknown key '" + key + "' in MLP header");
  }
  if (line != "end") throw FormatError("truncated MLP header");
  std::istringstream sched(schedule_text);
  const NoiseSchedule schedule = schedule_from_config(parse_key_values(sched));
  MlpScoreNet net(dim, hidden, seed, freqs);
  if (params != net.num_params()) throw FormatError("MLP parameter count does not match layer sizes");
  Eigen::VectorXd p(params);
  in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(params * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(params * sizeof(double)))
    throw FormatError("truncated MLP weights in " + path.string());
  net.set_parameters(p);
  return {std::move(net), preset, schedule};
}

} // namespace sdedit
