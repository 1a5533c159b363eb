#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/camera.hpp"
#include "dvopt/image.hpp"

namespace dvopt {

// 2x area-average downsampling. Odd trailing rows/columns are rejected so
// every coarse pixel averages exactly four fine pixels.
inline ImageGrid downsample2(const ImageGrid& g) {
  if (g.width % 2 != 0 || g.height % 2 != 0) {
    throw std::invalid_argument("downsample2: dimensions must be even");
  }
  ImageGrid out(g.width / 2, g.height / 2, g.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < g.channels; ++c) {
        out.at(x, y, c) = 0.25 * (g.at(2 * x, 2 * y, c) +
                                  g.at(2 * x + 1, 2 * y, c) +
                                  g.at(2 * x, 2 * y + 1, c) +
                                  g.at(2 * x + 1, 2 * y + 1, c));
      }
    }
  }
  return out;
}

// Pyramid of area-averaged images, finest first: out[0] is the original,
// out[k] is downsampled by 2^k.
inline std::vector<ImageGrid> build_pyramid(const ImageGrid& img, int levels) {
  if (levels < 1) {
    throw std::invalid_argument("build_pyramid: levels must be >= 1");
  }
  const int factor = 1 << (levels - 1);
  if (img.width % factor != 0 || img.height % factor != 0 ||
      img.width / factor < 2 || img.height / factor < 2) {
    throw std::invalid_argument(
        "build_pyramid: " + std::to_string(levels) +
        " levels need dimensions divisible by " + std::to_string(factor) +
        " and at least " + std::to_string(2 * factor) + " px");
  }
  std::vector<ImageGrid> out;
  out.reserve(levels);
  out.push_back(img);
  for (int l = 1; l < levels; ++l) {
    out.push_back(downsample2(out.back()));
  }
  return out;
}

// Intrinsics for pyramid level k (0 = finest), using the pixel-center
// convention u_coarse = (u_fine + 0.5) * s - 0.5.
inline Intrinsics intrinsics_for_level(const Intrinsics& k, int level) {
  Intrinsics out = k;
  for (int l = 0; l < level; ++l) out = out.scaled(0.5);
  return out;
}

}  // namespace dvopt
