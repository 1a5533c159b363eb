#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvopt {

// Pinhole intrinsics. Pixel (u, v) indexes the pixel center, so the image
// plane spans [-0.5, width - 0.5] x [-0.5, height - 0.5] in pixel units.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  Intrinsics() = default;
  Intrinsics(double fx_, double fy_, double cx_, double cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw std::invalid_argument("Intrinsics: focal lengths must be positive");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
      throw std::invalid_argument("Intrinsics: principal point must be finite");
    }
  }

  // Unit-depth ray direction through pixel center (u, v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }

  // Intrinsics for an image scaled by the given factor (0.5 per coarser
  // pyramid level). Uses the pixel-center convention
  // u_coarse = (u_fine + 0.5) * s - 0.5.
  Intrinsics scaled(double s) const {
    return Intrinsics(fx * s, fy * s, (cx + 0.5) * s - 0.5, (cy + 0.5) * s - 0.5);
  }

  // Non-fatal sanity warnings (e.g. principal point outside the image).
  std::vector<std::string> validate(int width, int height) const {
    std::vector<std::string> warnings;
    if (cx < 0.0 || cx > width - 1.0 || cy < 0.0 || cy > height - 1.0) {
      warnings.push_back("principal point (" + std::to_string(cx) + ", " +
                         std::to_string(cy) + ") lies outside the " +
                         std::to_string(width) + "x" + std::to_string(height) +
                         " image");
    }
    return warnings;
  }
};

}  // namespace dvopt
