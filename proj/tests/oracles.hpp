#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the library code path it is used to check.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

/// P(χ²_d ≤ x) for even d: 1 − e^{−x/2} Σ_{k<d/2} (x/2)^k / k!.
inline double chi2_cdf_even(int d, double x) {
  if (x <= 0.0) return 0.0;
  const double h = 0.5 * x;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < d / 2; ++k) {
    term *= h / k;
    sum += term;
  }
  return 1.0 - std::exp(-h) * sum;
}

/// One-sample Kolmogorov–Smirnov statistic.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

struct IsoComponent {
  double weight;
  Eigen::VectorXd mean;
  double std;
};

/// log of Σ_k w_k N(x; a μ_k, (a² s_k² + σ²) I), summed directly in long double.
inline double explicit_log_density(const std::vector<IsoComponent>& comps, double a, double sigma,
                                   const Eigen::VectorXd& x) {
  const long double d = static_cast<long double>(x.size());
  long double total = 0.0L;
  for (const auto& c : comps) {
    const long double v = static_cast<long double>(a) * a * c.std * c.std + static_cast<long double>(sigma) * sigma;
    long double sq = 0.0L;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const long double r = x[i] - static_cast<long double>(a) * c.mean[i];
      sq += r * r;
    }
    total += c.weight * std::exp(-sq / (2.0L * v)) / std::pow(2.0L * std::numbers::pi_v<long double> * v, d / 2.0L);
  }
  return static_cast<double>(std::log(total));
}

/// log p(y | x) for the same mixture.
inline double explicit_log_posterior(const std::vector<IsoComponent>& comps, double a, double sigma,
                                     const Eigen::VectorXd& x, int y) {
  return explicit_log_density({{comps[y].weight, comps[y].mean, comps[y].std}}, a, sigma, x) -
         explicit_log_density(comps, a, sigma, x);
}

/// Naive loop product ∏_{n=1}^{N} (1 − β(n t0/N) t0/N).
inline double naive_discrete_alpha(double bmin, double bmax, double t0, int n) {
  long double p = 1.0L;
  for (int i = 1; i <= n; ++i) {
    const double t = t0 * i / n;
    p *= 1.0L - (bmin + t * (bmax - bmin)) * (t0 / n);
  }
  return static_cast<double>(p);
}

/// Median filter by explicit reflect-101 padding and full sort of each window.
/// `img` is a single channel stored row-major.
inline std::vector<double> naive_median(const std::vector<double>& img, int w, int h, int kernel) {
  const int r = kernel / 2;
  const int pw = w + 2 * r, ph = h + 2 * r;
  std::vector<double> pad(static_cast<std::size_t>(pw) * ph);
  auto src = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) pad[y * pw + x] = img[src(y - r, h) * w + src(x - r, w)];
  std::vector<double> out(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> win;
      for (int dy = 0; dy < kernel; ++dy)
        for (int dx = 0; dx < kernel; ++dx) win.push_back(pad[(y + dy) * pw + (x + dx)]);
      std::sort(win.begin(), win.end());
      out[y * w + x] = win[win.size() / 2];
    }
  return out;
}

/// Minimum within-cluster squared error over every assignment of points to k
/// clusters (cluster of point 0 fixed to break label symmetry).
inline double exhaustive_kmeans_sse(const std::vector<Eigen::VectorXd>& pts, int k) {
  const std::size_t n = pts.size();
  const std::size_t dim = static_cast<std::size_t>(pts[0].size());
  std::vector<double> flat;
  for (const auto& p : pts) flat.insert(flat.end(), p.data(), p.data() + p.size());
  std::vector<int> assign(n, 0);
  std::vector<double> sum(k * dim), sq(k);
  std::vector<int> cnt(k);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int a = assign[i];
      for (std::size_t c = 0; c < dim; ++c) {
        const double v = flat[i * dim + c];
        sum[a * dim + c] += v;
        sq[a] += v * v;
      }
      ++cnt[a];
    }
    double sse = 0.0;
    for (int a = 0; a < k; ++a) {
      if (cnt[a] == 0) continue;
      double s2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s2 += sum[a * dim + c] * sum[a * dim + c];
      sse += sq[a] - s2 / cnt[a];
    }
    best = std::min(best, sse);
    std::size_t i = 1;
    while (i < n && ++assign[i] == k) assign[i++] = 0;
    if (i == n) break;
  }
  return best;
}

/// Energy distance between two samples (V-statistic form).
inline double energy_distance(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
  auto mean_dist = [](const std::vector<Eigen::VectorXd>& p, const std::vector<Eigen::VectorXd>& q) {
    double s = 0.0;
    for (const auto& x : p)
      for (const auto& y : q) s += (x - y).norm();
    return s / (static_cast<double>(p.size()) * q.size());
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

/// Permutation p-value of a two-sample statistic.
template <class Stat>
double permutation_p_value(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b, Stat stat,
                           int permutations, unsigned seed) {
  const double observed = stat(a, b);
  std::vector<Eigen::VectorXd> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::mt19937_64 gen(seed);
  int at_least = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(pooled.begin(), pooled.end(), gen);
    std::vector<Eigen::VectorXd> pa(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(a.size()));
    std::vector<Eigen::VectorXd> pb(pooled.begin() + static_cast<std::ptrdiff_t>(a.size()), pooled.end());
    at_least += stat(pa, pb) >= observed;
  }
  return (at_least + 1.0) / (permutations + 1.0);
}

/// Biased-but-simple MMD² with the cubic kernel, full double sums (V-statistic).
inline double naive_mmd_cross_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  double dot = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return std::pow(dot / static_cast<double>(x.size()) + 1.0, 3);
}

} // namespace oracle

namespace oracle {

/// Energy-distance permutation test on a precomputed pooled distance matrix.
/// Returns the p-value of H0: both samples come from the same distribution.
inline double energy_permutation_p_value(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                                         int permutations, unsigned seed) {
  const std::size_t na = a.size(), n = a.size() + b.size();
  std::vector<const Eigen::VectorXd*> pts;
  for (const auto& x : a) pts.push_back(&x);
  for (const auto& x : b) pts.push_back(&x);
  std::vector<float> dist(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = static_cast<float>((*pts[i] - *pts[j]).norm());
  auto stat = [&](const std::vector<char>& in_a) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double d = dist[i * n + j];
        if (in_a[i] && in_a[j]) aa += d;
        else if (!in_a[i] && !in_a[j]) bb += d;
        else ab += d;
      }
    const double ma = static_cast<double>(na), mb = static_cast<double>(n - na);
    return ab / (ma * mb) - aa / (ma * ma) - bb / (mb * mb); // ab counts both orders
  };
  std::vector<char> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(na), 1);
  const double observed = stat(labels);
  std::mt19937_64 gen(seed);
  int at_least = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(labels.begin(), labels.end(), gen);
    at_least += stat(labels) >= observed;
  }
  return (at_least + 1.0) / (permutations + 1.0);
}

} // namespace oracle
