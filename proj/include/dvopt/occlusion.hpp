#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dvopt/geometry.hpp"
#include "dvopt/image.hpp"
#include "dvopt/se3.hpp"

namespace dvopt {

// Visibility of frame a's pixels in frame b. mask is 1 where visible and 0
// where occluded, behind the camera, or projected out of bounds.
struct OcclusionMask {
  ImageGrid mask;
  int neighborhood_radius = 1;   // Chebyshev radius d_n in pixels
  double depth_tolerance = 0.01; // relative depth discrepancy tau_z
};

constexpr int kDefaultOcclusionRadius = 1;
constexpr double kDefaultDepthTolerance = 0.01;

inline int nearest_pixel(double x) {
  return static_cast<int>(std::floor(x + 0.5));
}

// Relative depth discrepancy in [0, 1) for positive depths. Symmetric, so a
// point in front of the reference surface is treated like one behind it.
inline double relative_depth_gap(double za, double zb) {
  return std::abs(za - zb) / (za + zb);
}

// A projected point and a reference depth map agree when some integer pixel
// within Chebyshev radius d_n of the rounded projection has depth within
// tau_z relative discrepancy. The lookup callback returns the reference
// depth at an integer pixel, or a non-positive value where undefined.
template <typename DepthLookup>
inline bool neighborhood_depth_match(double u, double v, double z, int width,
                                     int height, int radius, double tau_z,
                                     DepthLookup&& lookup) {
  const int pu = nearest_pixel(u);
  const int pv = nearest_pixel(v);
  const int x_lo = std::max(pu - radius, 0);
  const int x_hi = std::min(pu + radius, width - 1);
  const int y_lo = std::max(pv - radius, 0);
  const int y_hi = std::min(pv + radius, height - 1);
  for (int qy = y_lo; qy <= y_hi; ++qy) {
    for (int qx = x_lo; qx <= x_hi; ++qx) {
      const double zq = lookup(qx, qy);
      if (!(zq > 0.0)) continue;
      if (relative_depth_gap(z, zq) <= tau_z) return true;
    }
  }
  return false;
}

// Geometric occlusion detection: a pixel of frame a is visible in frame b
// iff, after rigid reprojection, frame b's depth map matches its projected
// depth somewhere within the neighborhood radius. Disagreement with every
// neighbor (front or behind) marks the pixel occluded.
inline OcclusionMask occlusion_mask(const ImageGrid& d_a, const ImageGrid& d_b,
                                    const PoseSE3& p_ab, const Intrinsics& k,
                                    int radius = kDefaultOcclusionRadius,
                                    double tau_z = kDefaultDepthTolerance) {
  require_shape(d_a, d_a.width, d_a.height, 1, "occlusion_mask d_a");
  require_shape(d_b, d_b.width, d_b.height, 1, "occlusion_mask d_b");
  if (radius < 0) {
    throw std::invalid_argument("occlusion_mask: radius must be non-negative");
  }
  if (!(tau_z > 0.0)) {
    throw std::invalid_argument("occlusion_mask: tau_z must be positive");
  }
  OcclusionMask out;
  out.mask = ImageGrid(d_a.width, d_a.height, 1);
  out.neighborhood_radius = radius;
  out.depth_tolerance = tau_z;
  const std::vector<Eigen::Vector3d> rays = ray_table(d_a.width, d_a.height, k);
  const WarpPass pass = project_depth(d_a, rays, p_ab.R, p_ab.t, nullptr, k,
                                      d_b.width, d_b.height);
  for (size_t i = 0; i < d_a.pixel_count(); ++i) {
    if (!pass.valid[i]) continue;
    const bool visible = neighborhood_depth_match(
        pass.coords.data[2 * i], pass.coords.data[2 * i + 1],
        pass.depth_out.data[i], d_b.width, d_b.height, radius, tau_z,
        [&](int qx, int qy) { return d_b.at(qx, qy); });
    out.mask.data[i] = visible ? 1.0 : 0.0;
  }
  return out;
}

// Brute-force visibility reference. Every source pixel is splatted at
// supersample x supersample sub-positions into a target z-buffer that keeps
// the minimum depth per cell; a source pixel is then visible iff the buffer
// holds a matching depth within the same neighborhood rule. Deliberately
// slow and restricted to small grids.
inline OcclusionMask z_buffer_oracle(const ImageGrid& d_a, const ImageGrid& d_b,
                                     const PoseSE3& p_ab, const Intrinsics& k,
                                     int supersample,
                                     int radius = kDefaultOcclusionRadius,
                                     double tau_z = kDefaultDepthTolerance) {
  require_shape(d_a, d_a.width, d_a.height, 1, "z_buffer_oracle d_a");
  require_shape(d_b, d_b.width, d_b.height, 1, "z_buffer_oracle d_b");
  if (d_a.width > 64 || d_a.height > 64 || d_b.width > 64 || d_b.height > 64) {
    throw std::invalid_argument("z_buffer_oracle: grids larger than 64x64 rejected");
  }
  if (supersample < 4) {
    throw std::invalid_argument("z_buffer_oracle: supersample must be >= 4");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> zbuf(static_cast<size_t>(d_b.width) * d_b.height, inf);
  for (int y = 0; y < d_a.height; ++y) {
    for (int x = 0; x < d_a.width; ++x) {
      const double z = d_a.at(x, y);
      for (int sy = 0; sy < supersample; ++sy) {
        for (int sx = 0; sx < supersample; ++sx) {
          const double du = (sx + 0.5) / supersample - 0.5;
          const double dv = (sy + 0.5) / supersample - 0.5;
          const Eigen::Vector3d p =
              p_ab.apply(z * k.ray(x + du, y + dv));
          if (!(p.z() > kZMin) || !p.allFinite()) continue;
          const double u = k.fx * p.x() / p.z() + k.cx;
          const double v = k.fy * p.y() / p.z() + k.cy;
          const int cu = nearest_pixel(u);
          const int cv = nearest_pixel(v);
          if (cu < 0 || cu >= d_b.width || cv < 0 || cv >= d_b.height) continue;
          double& cell = zbuf[static_cast<size_t>(cv) * d_b.width + cu];
          cell = std::min(cell, p.z());
        }
      }
    }
  }
  OcclusionMask out;
  out.mask = ImageGrid(d_a.width, d_a.height, 1);
  out.neighborhood_radius = radius;
  out.depth_tolerance = tau_z;
  const std::vector<Eigen::Vector3d> rays = ray_table(d_a.width, d_a.height, k);
  const WarpPass pass = project_depth(d_a, rays, p_ab.R, p_ab.t, nullptr, k,
                                      d_b.width, d_b.height);
  for (size_t i = 0; i < d_a.pixel_count(); ++i) {
    if (!pass.valid[i]) continue;
    const bool visible = neighborhood_depth_match(
        pass.coords.data[2 * i], pass.coords.data[2 * i + 1],
        pass.depth_out.data[i], d_b.width, d_b.height, radius, tau_z,
        [&](int qx, int qy) {
          const double zq = zbuf[static_cast<size_t>(qy) * d_b.width + qx];
          return std::isfinite(zq) ? zq : -1.0;
        });
    out.mask.data[i] = visible ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace dvopt
