#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/guide.hpp"
#include "sdedit/image.hpp"
#include "sdedit/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

namespace sdedit {

/// k colors, each `channels` values in [0,1].
struct Palette {
  int channels = 3;
  std::vector<std::vector<double>> colors;

  int size() const { return static_cast<int>(colors.size()); }
};

/// Reflect-101 index (…, 2, 1, [0, 1, …, n−1], n−2, …); valid for any offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Per-channel median over a kernel×kernel window with reflect padding.
inline RasterImage median_filter(const RasterImage& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ParameterError("median kernel must be odd and >= 1");
  if (kernel == 1) return img;
  const int r = kernel / 2;
  RasterImage out = img;
  std::vector<double> window(static_cast<std::size_t>(kernel) * kernel);
  const auto mid = static_cast<std::ptrdiff_t>(window.size() / 2);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        std::size_t k = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = reflect_index(y + dy, img.height);
          for (int dx = -r; dx <= r; ++dx) window[k++] = img.at(reflect_index(x + dx, img.width), yy, c);
        }
        std::nth_element(window.begin(), window.begin() + mid, window.end());
        out.at(x, y, c) = window[static_cast<std::size_t>(mid)];
      }
  return out;
}

/// Odd kernel matching the receptive fraction of a 23-pixel window on a 256-pixel image.
inline int scaled_kernel(int height) {
  const double target = 23.0 * height / 256.0;
  const int k = 2 * static_cast<int>(std::lround((target - 1.0) / 2.0)) + 1;
  return std::max(k, 3);
}

namespace detail {

inline double color_dist2(const double* a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < b.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

/// Nearest center; lowest index wins ties.
inline int nearest_center(const double* p, const std::vector<std::vector<double>>& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < static_cast<int>(centers.size()); ++k) {
    const double d = color_dist2(p, centers[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline std::vector<std::vector<double>> distinct_colors(const RasterImage& img) {
  std::vector<std::vector<double>> out;
  std::map<std::vector<double>, bool> seen;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    std::vector<double> c(img.pixels.begin() + static_cast<std::ptrdiff_t>(p * img.channels),
                          img.pixels.begin() + static_cast<std::ptrdiff_t>((p + 1) * img.channels));
    if (seen.emplace(c, true).second) out.push_back(std::move(c));
  }
  return out;
}

} // namespace detail

struct QuantizeOptions {
  int lloyd_iterations = 25;
  int restarts = 8; // independent k-means++ seedings; the lowest-error run wins
};

struct QuantizeResult {
  RasterImage image;
  Palette palette;
  double squared_error = 0.0; // Σ over pixels of ‖pixel − assigned color‖²
};

namespace detail {

inline double assignment_error(const RasterImage& img, const std::vector<std::vector<double>>& centers) {
  double sse = 0.0;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double* px = img.pixels.data() + p * img.channels;
    sse += color_dist2(px, centers[static_cast<std::size_t>(nearest_center(px, centers))]);
  }
  return sse;
}

/// One k-means++ seeding followed by Lloyd iterations.
inline std::vector<std::vector<double>> kmeans_once(const RasterImage& img, int k, CounterRng& rng,
                                                    int lloyd_iterations) {
  const std::size_t n = img.pixel_count();
  const int ch = img.channels;
  auto pixel = [&](std::size_t p) { return img.pixels.data() + p * ch; };
  std::vector<std::vector<double>> centers;
  const std::size_t first = rng.below(n);
  centers.emplace_back(pixel(first), pixel(first) + ch);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      d2[p] = std::min(d2[p], color_dist2(pixel(p), centers.back()));
      total += d2[p];
    }
    if (!(total > 0.0)) break;
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t p = 0; p < n; ++p) {
      target -= d2[p];
      if (target < 0.0 && d2[p] > 0.0) {
        pick = p;
        break;
      }
    }
    centers.emplace_back(pixel(pick), pixel(pick) + ch);
  }
  // an empty cluster keeps its previous center
  std::vector<int> assign(n, 0);
  for (int it = 0; it < lloyd_iterations; ++it) {
    std::vector<std::vector<double>> sum(centers.size(), std::vector<double>(ch, 0.0));
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      assign[p] = nearest_center(pixel(p), centers);
      for (int c = 0; c < ch; ++c) sum[assign[p]][c] += pixel(p)[c];
      ++count[assign[p]];
    }
    bool moved = false;
    for (std::size_t j = 0; j < centers.size(); ++j) {
      if (count[j] == 0) continue;
      for (int c = 0; c < ch; ++c) {
        const double v = sum[j][c] / static_cast<double>(count[j]);
        moved |= v != centers[j][c];
        centers[j][c] = v;
      }
    }
    if (!moved) break;
  }
  // drop coincident centers so palette colors stay distinct
  std::vector<std::vector<double>> unique;
  for (auto& c : centers)
    if (std::find(unique.begin(), unique.end(), c) == unique.end()) unique.push_back(std::move(c));
  return unique;
}

} // namespace detail

/// Adaptive palette: seeded k-means++ over pixel colors followed by Lloyd
/// iterations, best of `restarts` seedings. When the image has at most k
/// distinct colors the palette is exactly those colors (first-appearance order).
inline QuantizeResult quantize_adaptive(const RasterImage& img, int k, std::uint64_t seed,
                                        QuantizeOptions opts = {}) {
  if (k < 1 || k > 256) throw ParameterError("palette size must lie in [1, 256]");
  if (opts.restarts < 1) throw ParameterError("k-means restarts must be >= 1");
  const std::size_t n = img.pixel_count();
  const int ch = img.channels;

  std::vector<std::vector<double>> centers = detail::distinct_colors(img);
  if (static_cast<int>(centers.size()) > k) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opts.restarts; ++r) {
      CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(r)), NoiseStream::palette);
      auto cand = detail::kmeans_once(img, k, rng, opts.lloyd_iterations);
      const double sse = detail::assignment_error(img, cand);
      if (sse < best) {
        best = sse;
        centers = std::move(cand);
      }
    }
  }

  QuantizeResult result{RasterImage(img.width, img.height, ch), Palette{ch, centers}, 0.0};
  for (std::size_t p = 0; p < n; ++p) {
    const double* px = img.pixels.data() + p * ch;
    const int j = detail::nearest_center(px, centers);
    result.squared_error += detail::color_dist2(px, centers[j]);
    std::copy(centers[j].begin(), centers[j].end(), result.image.pixels.begin() + static_cast<std::ptrdiff_t>(p * ch));
  }
  return result;
}

/// Coarse "user stroke" rendition of an image: median filter, then palette reduction.
inline RasterImage simulate_stroke(const RasterImage& img, int kernel, int k, std::uint64_t seed) {
  return quantize_adaptive(median_filter(img, kernel), k, seed).image;
}

/// Ω = 1 on every channel of a pixel where any channel changed by more than `threshold`.
/// Returned in the channel-major layout used by image guides.
inline EditMask mask_from_edit(const RasterImage& original, const RasterImage& edited, double threshold) {
  if (!original.same_shape(edited)) throw ShapeError("original and edited images differ in shape");
  const Eigen::Index plane = static_cast<Eigen::Index>(original.pixel_count());
  EditMask m = EditMask::zeros(plane * original.channels);
  for (int y = 0; y < original.height; ++y)
    for (int x = 0; x < original.width; ++x) {
      bool changed = false;
      for (int c = 0; c < original.channels; ++c)
        changed |= std::abs(original.at(x, y, c) - edited.at(x, y, c)) > threshold;
      if (!changed) continue;
      const Eigen::Index idx = static_cast<Eigen::Index>(y) * original.width + x;
      for (int c = 0; c < original.channels; ++c) m.omega[c * plane + idx] = 1.0;
    }
  return m;
}

} // namespace sdedit
