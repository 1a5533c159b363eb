#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvopt {

// Dense row-major raster with interleaved channels. Element (x, y, c) lives
// at data[(y * width + x) * channels + c]. Intensities are kept in [0, 1];
// depth and other physical quantities are stored in their natural units.
struct ImageGrid {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  ImageGrid() = default;
  ImageGrid(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c) {
    if (w <= 0 || h <= 0 || c <= 0) {
      throw std::invalid_argument("ImageGrid: non-positive dimensions");
    }
    data.assign(static_cast<size_t>(w) * h * c, fill);
  }

  size_t idx(int x, int y, int c = 0) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }

  double& at(int x, int y, int c = 0) { return data[idx(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[idx(x, y, c)]; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }

  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  size_t size() const { return data.size(); }

  bool same_shape(const ImageGrid& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  // True when every element is finite.
  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline void require_shape(const ImageGrid& g, int w, int h, int c,
                          const std::string& what) {
  if (g.width != w || g.height != h || g.channels != c) {
    throw std::invalid_argument(what + ": expected " + std::to_string(w) + "x" +
                                std::to_string(h) + "x" + std::to_string(c) +
                                ", got " + std::to_string(g.width) + "x" +
                                std::to_string(g.height) + "x" +
                                std::to_string(g.channels));
  }
}

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b,
                               const std::string& what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(what + ": shape mismatch");
  }
}

}  // namespace dvopt
