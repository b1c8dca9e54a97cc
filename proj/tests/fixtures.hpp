#pragma once

#include "sdedit/image.hpp"

#include <cmath>
#include <random>

namespace fixture {

/// 3-channel test picture: smooth background gradient, a few filled discs and
/// rectangles, plus mild pixel noise. Different seeds give different layouts.
inline sdedit::RasterImage synthetic_image(unsigned seed, int size = 32) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  sdedit::RasterImage img(size, size, 3);
  const double g0[3] = {u(gen), u(gen), u(gen)}, g1[3] = {u(gen), u(gen), u(gen)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = g0[c] + (g1[c] - g0[c]) * (x + y) / (2.0 * size);
  const int shapes = 3 + static_cast<int>(gen() % 4);
  for (int s = 0; s < shapes; ++s) {
    const double col[3] = {u(gen), u(gen), u(gen)};
    const double cx = u(gen) * size, cy = u(gen) * size, r = (0.1 + 0.25 * u(gen)) * size;
    const bool disc = gen() % 2 == 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const bool in = disc ? std::hypot(x - cx, y - cy) < r : std::abs(x - cx) < r && std::abs(y - cy) < 0.6 * r;
        if (in)
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = col[c];
      }
  }
  for (double& v : img.pixels) v += noise(gen);
  img.clamp();
  return img;
}

} // namespace fixture
