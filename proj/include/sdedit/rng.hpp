#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sdedit {

// Philox4x32-10 counter-based generator (Salmon et al., Random123).
// Every draw is a pure function of (key, counter), so a run can be replayed
// or split across threads without sharing generator state.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// 53-bit uniform in [0,1).
constexpr double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

} // namespace detail

constexpr PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += detail::kPhiloxW0;
      key[1] += detail::kPhiloxW1;
    }
    std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
    detail::mulhilo(detail::kPhiloxM0, ctr[0], hi0, lo0);
    detail::mulhilo(detail::kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

constexpr PhiloxKey key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Derives an independent seed for sub-run `index` of a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return detail::splitmix64(detail::splitmix64(base) ^ (index * 0xD1B54A32D192ED03ull + 1));
}

/// Stream tags keep noise used for different purposes disjoint.
enum class NoiseStream : std::uint32_t {
  perturb = 0,
  reverse = 1,
  training = 2,
  data = 3,
  palette = 4,
  misc = 5,
};

/// Fills `z` with standard normals addressed by (seed, repeat, step, stream).
/// Coordinate pair j (coordinates 2j, 2j+1) comes from counter block j, so the
/// values do not depend on how the caller partitions the work.
inline void fill_normal(Eigen::Ref<Eigen::VectorXd> z, std::uint64_t seed, std::uint32_t repeat,
                        std::uint32_t step, NoiseStream stream) {
  const PhiloxKey key = key_from_seed(seed);
  const Eigen::Index d = z.size();
  for (Eigen::Index j = 0; 2 * j < d; ++j) {
    const PhiloxCounter out = philox4x32(
        {static_cast<std::uint32_t>(j), step, repeat, static_cast<std::uint32_t>(stream)}, key);
    const double u1 = 1.0 - detail::to_unit(out[0], out[1]); // (0,1]
    const double u2 = detail::to_unit(out[2], out[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phase = 2.0 * std::numbers::pi * u2;
    z[2 * j] = r * std::cos(phase);
    if (2 * j + 1 < d) z[2 * j + 1] = r * std::sin(phase);
  }
}

inline Eigen::VectorXd normal_vector(Eigen::Index d, std::uint64_t seed, std::uint32_t repeat,
                                     std::uint32_t step, NoiseStream stream) {
  Eigen::VectorXd z(d);
  fill_normal(z, seed, repeat, step, stream);
  return z;
}

/// Sequential generator over one Philox stream, for code that consumes an
/// unknown number of draws (training batches, k-means++ seeding).
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed, NoiseStream stream = NoiseStream::misc)
      : key_(key_from_seed(seed)), stream_(static_cast<std::uint32_t>(stream)) {}

  double uniform() {
    refill_if_needed(2);
    const double u = detail::to_unit(buf_[pos_], buf_[pos_ + 1]);
    pos_ += 2;
    return u;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phase = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phase);
    has_spare_ = true;
    return r * std::cos(phase);
  }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  Eigen::VectorXd normal_vector(Eigen::Index d) {
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = normal();
    return z;
  }

private:
  void refill_if_needed(std::size_t need) {
    if (pos_ + need <= buf_.size()) return;
    const std::uint64_t c = counter_++;
    buf_ = philox4x32({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32), 0xFFFFFFFFu, stream_},
                      key_);
    pos_ = 0;
  }

  PhiloxKey key_;
  std::uint32_t stream_;
  std::uint64_t counter_ = 0;
  PhiloxCounter buf_{};
  std::size_t pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace sdedit
