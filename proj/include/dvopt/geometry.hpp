#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dvopt/camera.hpp"
#include "dvopt/image.hpp"
#include "dvopt/se3.hpp"

namespace dvopt {

// Minimum camera-space z accepted by the projective division.
constexpr double kZMin = 1e-6;

// Per-pixel 3D points in camera coordinates, aligned with the source grid.
struct PointField {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> points;

  Eigen::Vector3d& at(int x, int y) { return points[static_cast<size_t>(y) * width + x]; }
  const Eigen::Vector3d& at(int x, int y) const {
    return points[static_cast<size_t>(y) * width + x];
  }
};

// Unit-depth rays through every pixel center, in row-major order.
inline std::vector<Eigen::Vector3d> ray_table(int width, int height,
                                              const Intrinsics& k) {
  std::vector<Eigen::Vector3d> rays;
  rays.reserve(static_cast<size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      rays.push_back(k.ray(x, y));
    }
  }
  return rays;
}

// Lifts a depth map to camera-space points, X = z * K^-1 (u, v, 1).
inline PointField backproject(const ImageGrid& depth, const Intrinsics& k) {
  require_shape(depth, depth.width, depth.height, 1, "backproject");
  PointField field;
  field.width = depth.width;
  field.height = depth.height;
  field.points.reserve(depth.pixel_count());
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const double z = depth.at(x, y);
      if (!(z > 0.0) || !std::isfinite(z)) {
        throw std::invalid_argument("backproject: depth must be positive and finite");
      }
      field.points.push_back(z * k.ray(x, y));
    }
  }
  return field;
}

// Pinhole projection of a point field. coords holds (u, v) per pixel; points
// with z <= kZMin are marked invalid and their coords are zeroed.
struct ProjectedPoints {
  ImageGrid coords;         // 2 channels: u, v
  ImageGrid depth;          // projected camera-space z
  std::vector<uint8_t> valid;
};

inline ProjectedPoints project(const PointField& field, const Intrinsics& k) {
  ProjectedPoints out;
  out.coords = ImageGrid(field.width, field.height, 2);
  out.depth = ImageGrid(field.width, field.height, 1);
  out.valid.assign(field.points.size(), 0);
  for (size_t i = 0; i < field.points.size(); ++i) {
    const Eigen::Vector3d& p = field.points[i];
    out.depth.data[i] = p.z();
    if (p.z() > kZMin && p.allFinite()) {
      out.coords.data[2 * i] = k.fx * p.x() / p.z() + k.cx;
      out.coords.data[2 * i + 1] = k.fy * p.y() / p.z() + k.cy;
      out.valid[i] = 1;
    }
  }
  return out;
}

// Bilinear sampling cell. At exact cell boundaries the left/lower cell is
// used, which also fixes the sub-gradient convention there.
struct BilinearCtx {
  int x0 = 0;
  int y0 = 0;
  double wx = 0.0;  // fractional offset inside the cell, in [0, 1]
  double wy = 0.0;
  bool valid = false;
};

inline BilinearCtx bilinear_ctx(int width, int height, double u, double v) {
  BilinearCtx c;
  if (!std::isfinite(u) || !std::isfinite(v) || u < 0.0 || v < 0.0 ||
      u > width - 1.0 || v > height - 1.0) {
    return c;
  }
  c.x0 = std::min(static_cast<int>(std::floor(u)), width - 2);
  c.y0 = std::min(static_cast<int>(std::floor(v)), height - 2);
  c.wx = u - c.x0;
  c.wy = v - c.y0;
  c.valid = true;
  return c;
}

inline double bilinear_value(const ImageGrid& g, const BilinearCtx& c, int ch) {
  const double v00 = g.at(c.x0, c.y0, ch);
  const double v10 = g.at(c.x0 + 1, c.y0, ch);
  const double v01 = g.at(c.x0, c.y0 + 1, ch);
  const double v11 = g.at(c.x0 + 1, c.y0 + 1, ch);
  const double top = v00 + c.wx * (v10 - v00);
  const double bot = v01 + c.wx * (v11 - v01);
  return top + c.wy * (bot - top);
}

// Spatial derivative of the bilinear interpolant w.r.t. (u, v).
inline void bilinear_spatial_grad(const ImageGrid& g, const BilinearCtx& c,
                                  int ch, double* du, double* dv) {
  const double v00 = g.at(c.x0, c.y0, ch);
  const double v10 = g.at(c.x0 + 1, c.y0, ch);
  const double v01 = g.at(c.x0, c.y0 + 1, ch);
  const double v11 = g.at(c.x0 + 1, c.y0 + 1, ch);
  *du = (v10 - v00) * (1.0 - c.wy) + (v11 - v01) * c.wy;
  *dv = (v01 - v00) * (1.0 - c.wx) + (v11 - v10) * c.wx;
}

// Scatter-add of an upstream value gradient into the sampled grid.
inline void bilinear_scatter(ImageGrid& ggrid, const BilinearCtx& c, int ch,
                             double upstream) {
  ggrid.at(c.x0, c.y0, ch) += upstream * (1.0 - c.wx) * (1.0 - c.wy);
  ggrid.at(c.x0 + 1, c.y0, ch) += upstream * c.wx * (1.0 - c.wy);
  ggrid.at(c.x0, c.y0 + 1, ch) += upstream * (1.0 - c.wx) * c.wy;
  ggrid.at(c.x0 + 1, c.y0 + 1, ch) += upstream * c.wx * c.wy;
}

// Single-sample public entry: value plus coordinate gradients.
struct SampleResult {
  double value = 0.0;
  double du = 0.0;
  double dv = 0.0;
  bool valid = false;
};

inline SampleResult bilinear_sample(const ImageGrid& img, int channel,
                                    double u, double v) {
  if (img.width < 2 || img.height < 2) {
    throw std::invalid_argument("bilinear_sample: grid must be at least 2x2");
  }
  SampleResult r;
  const BilinearCtx c = bilinear_ctx(img.width, img.height, u, v);
  if (!c.valid) return r;
  r.value = bilinear_value(img, c, channel);
  bilinear_spatial_grad(img, c, channel, &r.du, &r.dv);
  r.valid = true;
  return r;
}

// One projection pass of a depth map into another view. When
// per_pixel_translation is given it fully replaces the global translation,
// X' = R X + t(x, y); otherwise X' = R X + t0.
struct WarpPass {
  std::vector<Eigen::Vector3d> xw;  // transformed camera points
  ImageGrid coords;                 // 2ch source-pixel coordinates
  ImageGrid depth_out;              // projected z
  std::vector<uint8_t> valid;       // z > kZMin and coords inside source grid
};

inline WarpPass project_depth(const ImageGrid& depth,
                              const std::vector<Eigen::Vector3d>& rays,
                              const Eigen::Matrix3d& r,
                              const Eigen::Vector3d& t0,
                              const ImageGrid* per_pixel_translation,
                              const Intrinsics& k, int src_width,
                              int src_height) {
  const size_t n = depth.pixel_count();
  WarpPass pass;
  pass.xw.resize(n);
  pass.coords = ImageGrid(depth.width, depth.height, 2);
  pass.depth_out = ImageGrid(depth.width, depth.height, 1);
  pass.valid.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const double z = depth.data[i];
    Eigen::Vector3d x = r * (z * rays[i]);
    if (per_pixel_translation) {
      x += Eigen::Vector3d(per_pixel_translation->data[3 * i],
                           per_pixel_translation->data[3 * i + 1],
                           per_pixel_translation->data[3 * i + 2]);
    } else {
      x += t0;
    }
    pass.xw[i] = x;
    pass.depth_out.data[i] = x.z();
    if (!(x.z() > kZMin) || !x.allFinite()) continue;
    const double u = k.fx * x.x() / x.z() + k.cx;
    const double v = k.fy * x.y() / x.z() + k.cy;
    pass.coords.data[2 * i] = u;
    pass.coords.data[2 * i + 1] = v;
    if (u >= 0.0 && v >= 0.0 && u <= src_width - 1.0 && v <= src_height - 1.0) {
      pass.valid[i] = 1;
    }
  }
  return pass;
}

// Gradients of a projection pass. Upstream inputs are per-pixel gradients
// w.r.t. the output coords and the projected depth; outputs are gradients
// w.r.t. the depth map, the rotation vector (R = exp(omega^)), the global
// translation, and the per-pixel translation when one was supplied.
// Gradients are accumulated only over pixels with pass.valid set.
struct WarpPassGrads {
  Eigen::Vector3d d_omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_t0 = Eigen::Vector3d::Zero();
  ImageGrid d_depth;
  ImageGrid d_tfield;  // empty when no per-pixel translation was used
};

inline WarpPassGrads project_depth_vjp(
    const WarpPass& pass, const ImageGrid& depth,
    const std::vector<Eigen::Vector3d>& rays, const Eigen::Vector3d& omega,
    const Eigen::Matrix3d& r, const Eigen::Vector3d& t0,
    const ImageGrid* per_pixel_translation, const Intrinsics& k,
    const ImageGrid& d_coords, const ImageGrid* d_depth_out) {
  WarpPassGrads g;
  g.d_depth = ImageGrid(depth.width, depth.height, 1);
  if (per_pixel_translation) {
    g.d_tfield = ImageGrid(depth.width, depth.height, 3);
  }
  Eigen::Vector3d cross_sum = Eigen::Vector3d::Zero();
  const size_t n = depth.pixel_count();
  for (size_t i = 0; i < n; ++i) {
    if (!pass.valid[i]) continue;
    const Eigen::Vector3d& x = pass.xw[i];
    const double inv_z = 1.0 / x.z();
    const double gu = d_coords.data[2 * i];
    const double gv = d_coords.data[2 * i + 1];
    Eigen::Vector3d gx(k.fx * inv_z * gu, k.fy * inv_z * gv,
                       -(k.fx * x.x() * gu + k.fy * x.y() * gv) * inv_z * inv_z);
    if (d_depth_out) {
      gx.z() += d_depth_out->data[i];
    }
    // Translation enters additively.
    if (per_pixel_translation) {
      g.d_tfield.data[3 * i] += gx.x();
      g.d_tfield.data[3 * i + 1] += gx.y();
      g.d_tfield.data[3 * i + 2] += gx.z();
    } else {
      g.d_t0 += gx;
    }
    // Rotated point R X = X' - t.
    Eigen::Vector3d rx = x;
    if (per_pixel_translation) {
      rx -= Eigen::Vector3d(per_pixel_translation->data[3 * i],
                            per_pixel_translation->data[3 * i + 1],
                            per_pixel_translation->data[3 * i + 2]);
    } else {
      rx -= t0;
    }
    cross_sum += rx.cross(gx);
    // Depth enters through X = z * ray.
    g.d_depth.data[i] = (r.transpose() * gx).dot(rays[i]);
  }
  // d(R X)/d omega = -skew(R X) J_l(omega) for the global axis-angle
  // parameterization, so the adjoint is J_l^T sum(R X x g).
  g.d_omega = left_jacobian(omega).transpose() * cross_sum;
  return g;
}

// Differentiable view synthesis: backprojects the target depth, transforms
// into the source frame, projects, and samples the source image. Warped
// values are zero-filled where invalid.
struct WarpResult {
  ImageGrid warped;
  ImageGrid validity;         // 1 where the reconstruction is defined
  ImageGrid coords;           // 2ch continuous source coordinates
  ImageGrid projected_depth;  // camera-space z in the source frame
};

inline WarpResult warp_frame(const ImageGrid& source,
                             const ImageGrid& target_depth,
                             const PoseSE3& p_ts, const Intrinsics& k,
                             const ImageGrid* per_pixel_translation = nullptr) {
  require_shape(target_depth, target_depth.width, target_depth.height, 1,
                "warp_frame depth");
  if (source.width < 2 || source.height < 2) {
    throw std::invalid_argument("warp_frame: source must be at least 2x2");
  }
  if (per_pixel_translation) {
    require_shape(*per_pixel_translation, target_depth.width,
                  target_depth.height, 3, "warp_frame translation field");
  }
  const std::vector<Eigen::Vector3d> rays =
      ray_table(target_depth.width, target_depth.height, k);
  const WarpPass pass =
      project_depth(target_depth, rays, p_ts.R, p_ts.t, per_pixel_translation,
                    k, source.width, source.height);
  WarpResult out;
  out.warped = ImageGrid(target_depth.width, target_depth.height, source.channels);
  out.validity = ImageGrid(target_depth.width, target_depth.height, 1);
  out.coords = pass.coords;
  out.projected_depth = pass.depth_out;
  const size_t n = target_depth.pixel_count();
  for (size_t i = 0; i < n; ++i) {
    if (!pass.valid[i]) continue;
    const BilinearCtx c = bilinear_ctx(source.width, source.height,
                                       pass.coords.data[2 * i],
                                       pass.coords.data[2 * i + 1]);
    if (!c.valid) continue;
    out.validity.data[i] = 1.0;
    for (int ch = 0; ch < source.channels; ++ch) {
      out.warped.data[i * source.channels + ch] = bilinear_value(source, c, ch);
    }
  }
  return out;
}

// Depth agreement between two views: projected holds the depth of frame a's
// points expressed in frame b (D_b^a), sampled holds frame b's own depth map
// interpolated at the projected locations (D'_b). Both are per frame-a pixel.
struct ReprojectedDepth {
  ImageGrid projected;
  ImageGrid sampled;
  ImageGrid validity;
};

inline ReprojectedDepth reproject_depth_pair(const ImageGrid& d_a,
                                             const ImageGrid& d_b,
                                             const PoseSE3& p_ab,
                                             const Intrinsics& k) {
  require_shape(d_a, d_a.width, d_a.height, 1, "reproject_depth_pair d_a");
  require_shape(d_b, d_b.width, d_b.height, 1, "reproject_depth_pair d_b");
  const std::vector<Eigen::Vector3d> rays = ray_table(d_a.width, d_a.height, k);
  const WarpPass pass = project_depth(d_a, rays, p_ab.R, p_ab.t, nullptr, k,
                                      d_b.width, d_b.height);
  ReprojectedDepth out;
  out.projected = pass.depth_out;
  out.sampled = ImageGrid(d_a.width, d_a.height, 1);
  out.validity = ImageGrid(d_a.width, d_a.height, 1);
  for (size_t i = 0; i < d_a.pixel_count(); ++i) {
    if (!pass.valid[i]) continue;
    const BilinearCtx c = bilinear_ctx(d_b.width, d_b.height,
                                       pass.coords.data[2 * i],
                                       pass.coords.data[2 * i + 1]);
    if (!c.valid) continue;
    out.sampled.data[i] = bilinear_value(d_b, c, 0);
    out.validity.data[i] = 1.0;
  }
  return out;
}

}  // namespace dvopt
