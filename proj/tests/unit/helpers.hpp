#pragma once

#include "revsam/volume.hpp"

#include <cstdint>
#include <random>

namespace testutil {

inline revsam::Mask random_mask(std::mt19937_64& rng, int rows, int cols, double p) {
  std::bernoulli_distribution fg(p);
  revsam::Mask m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = fg(rng) ? 1 : 0;
  }
  return m;
}

inline revsam::Image random_image(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  revsam::Image im(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) im(r, c) = u(rng);
  }
  return im;
}

}  // namespace testutil
