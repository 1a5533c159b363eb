#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dvopt/geometry.hpp"
#include "dvopt/image.hpp"
#include "dvopt/occlusion.hpp"
#include "dvopt/se3.hpp"

namespace dvopt {

// Per-pixel motion between two frames: a global rotation r0 (axis-angle) and
// translation t0, plus a gated residual translation field. The effective
// translation at pixel p is t(p) = t0 + m(p) * delta_t(p), applied after
// rotation. m holds gate values in [0, 1].
struct MotionField {
  Eigen::Vector3d r0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d t0 = Eigen::Vector3d::Zero();
  ImageGrid delta_t;  // 3 channels, meters
  ImageGrid m;        // 1 channel, gate in [0, 1]

  MotionField() = default;
  MotionField(int w, int h)
      : delta_t(w, h, 3), m(w, h, 1) {}

  Eigen::Matrix3d rotation() const { return exp_so3(r0); }
};

// Materializes t(p) = t0 + m(p) * delta_t(p) as a 3-channel grid.
inline ImageGrid translation_field(const MotionField& f) {
  ImageGrid t(f.delta_t.width, f.delta_t.height, 3);
  for (size_t i = 0; i < f.m.pixel_count(); ++i) {
    const double m = f.m.data[i];
    t.data[3 * i] = f.t0.x() + m * f.delta_t.data[3 * i];
    t.data[3 * i + 1] = f.t0.y() + m * f.delta_t.data[3 * i + 1];
    t.data[3 * i + 2] = f.t0.z() + m * f.delta_t.data[3 * i + 2];
  }
  return t;
}

// Gradients of a motion field's parameters. d_m is w.r.t. the gate values;
// optimizers parameterizing the gate through a logit chain the logistic
// derivative afterwards.
struct MotionFieldGrads {
  Eigen::Vector3d d_r0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_t0 = Eigen::Vector3d::Zero();
  ImageGrid d_delta_t;
  ImageGrid d_m;

  explicit MotionFieldGrads(const MotionField& f)
      : d_delta_t(f.delta_t.width, f.delta_t.height, 3),
        d_m(f.m.width, f.m.height, 1) {}
};

// Adjoint of translation_field: routes a gradient on the materialized grid
// back to t0, delta_t and m.
inline void translation_field_vjp(const MotionField& f,
                                  const ImageGrid& d_tfield,
                                  MotionFieldGrads* g) {
  for (size_t i = 0; i < f.m.pixel_count(); ++i) {
    const Eigen::Vector3d gt(d_tfield.data[3 * i], d_tfield.data[3 * i + 1],
                             d_tfield.data[3 * i + 2]);
    const Eigen::Vector3d dt(f.delta_t.data[3 * i], f.delta_t.data[3 * i + 1],
                             f.delta_t.data[3 * i + 2]);
    g->d_t0 += gt;
    const double m = f.m.data[i];
    g->d_delta_t.data[3 * i] += m * gt.x();
    g->d_delta_t.data[3 * i + 1] += m * gt.y();
    g->d_delta_t.data[3 * i + 2] += m * gt.z();
    g->d_m.data[i] += dt.dot(gt);
  }
}

// ---------------------------------------------------------------------------
// Photometric L1

struct PhotometricResult {
  double value = 0.0;
  size_t support = 0;   // pixels with mask = 1
  bool empty = false;   // true when no pixel survived masking
};

// Mean absolute intensity difference over pixels with support = 1, averaged
// over channels. Gradients flow to the warped values only.
inline PhotometricResult photometric_l1(const ImageGrid& target,
                                        const ImageGrid& warped,
                                        const ImageGrid& support) {
  require_same_shape(target, warped, "photometric_l1");
  require_shape(support, target.width, target.height, 1, "photometric_l1 support");
  PhotometricResult r;
  const int c = target.channels;
  double sum = 0.0;
  for (size_t i = 0; i < target.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    ++r.support;
    double px = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      px += std::abs(target.data[i * c + ch] - warped.data[i * c + ch]);
    }
    sum += px / c;
  }
  if (r.support == 0) {
    r.empty = true;
    return r;
  }
  r.value = sum / static_cast<double>(r.support);
  return r;
}

// Accumulates upstream * d(photometric)/d(warped) into d_warped.
inline void photometric_l1_vjp(const ImageGrid& target, const ImageGrid& warped,
                               const ImageGrid& support, size_t support_count,
                               double upstream, ImageGrid* d_warped) {
  if (support_count == 0) return;
  const int c = target.channels;
  const double scale = upstream / (static_cast<double>(support_count) * c);
  for (size_t i = 0; i < target.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    for (int ch = 0; ch < c; ++ch) {
      const double diff = warped.data[i * c + ch] - target.data[i * c + ch];
      // L1 sub-gradient, zero at the kink.
      if (diff > 0.0) {
        d_warped->data[i * c + ch] += scale;
      } else if (diff < 0.0) {
        d_warped->data[i * c + ch] -= scale;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// SSIM

constexpr double kSsimC1 = 0.01 * 0.01;  // intensities live in [0, 1]
constexpr double kSsimC2 = 0.03 * 0.03;

struct SsimResult {
  double value = 0.0;   // mean over windows and channels of (1 - SSIM) / 2
  size_t windows = 0;   // windows with all 9 pixels unmasked
  bool empty = false;
};

namespace detail {

// 3x3 box sums at interior centers via separable accumulation.
inline ImageGrid box3_sum(const ImageGrid& g) {
  ImageGrid h(g.width, g.height, g.channels);
  ImageGrid out(g.width, g.height, g.channels);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 1; x + 1 < g.width; ++x) {
      for (int c = 0; c < g.channels; ++c) {
        h.at(x, y, c) = g.at(x - 1, y, c) + g.at(x, y, c) + g.at(x + 1, y, c);
      }
    }
  }
  for (int y = 1; y + 1 < g.height; ++y) {
    for (int x = 1; x + 1 < g.width; ++x) {
      for (int c = 0; c < g.channels; ++c) {
        out.at(x, y, c) = h.at(x, y - 1, c) + h.at(x, y, c) + h.at(x, y + 1, c);
      }
    }
  }
  return out;
}

struct SsimWindowPartials {
  double d_mu_b = 0.0;
  double d_var_b = 0.0;
  double d_cov = 0.0;
};

// SSIM of one window from its moment sums, plus partials for the backward
// pass. Population statistics over the 9 samples.
inline double ssim_from_moments(double sa, double sb, double saa, double sbb,
                                double sab, double c1, double c2,
                                SsimWindowPartials* partials) {
  const double mu_a = sa / 9.0;
  const double mu_b = sb / 9.0;
  const double var_a = saa / 9.0 - mu_a * mu_a;
  const double var_b = sbb / 9.0 - mu_b * mu_b;
  const double cov = sab / 9.0 - mu_a * mu_b;
  const double n1 = 2.0 * mu_a * mu_b + c1;
  const double n2 = 2.0 * cov + c2;
  const double d1 = mu_a * mu_a + mu_b * mu_b + c1;
  const double d2 = var_a + var_b + c2;
  const double s = (n1 * n2) / (d1 * d2);
  if (partials) {
    const double ds_dn1 = n2 / (d1 * d2);
    const double ds_dn2 = n1 / (d1 * d2);
    const double ds_dd1 = -s / d1;
    const double ds_dd2 = -s / d2;
    partials->d_mu_b = ds_dn1 * 2.0 * mu_a + ds_dd1 * 2.0 * mu_b;
    partials->d_cov = ds_dn2 * 2.0;
    partials->d_var_b = ds_dd2;
  }
  return s;
}

}  // namespace detail

// Structural dissimilarity (1 - SSIM) / 2 with 3x3 uniform windows. Only
// windows fully inside the image whose 9 pixels all have mask = 1 count.
inline SsimResult ssim_loss(const ImageGrid& a, const ImageGrid& b,
                            const ImageGrid& mask, double c1 = kSsimC1,
                            double c2 = kSsimC2) {
  require_same_shape(a, b, "ssim_loss");
  require_shape(mask, a.width, a.height, 1, "ssim_loss mask");
  SsimResult r;
  if (a.width < 3 || a.height < 3) {
    r.empty = true;
    return r;
  }
  ImageGrid ab(a.width, a.height, a.channels);
  ImageGrid aa(a.width, a.height, a.channels);
  ImageGrid bb(a.width, a.height, a.channels);
  for (size_t i = 0; i < a.data.size(); ++i) {
    ab.data[i] = a.data[i] * b.data[i];
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
  }
  const ImageGrid sa = detail::box3_sum(a);
  const ImageGrid sb = detail::box3_sum(b);
  const ImageGrid saa = detail::box3_sum(aa);
  const ImageGrid sbb = detail::box3_sum(bb);
  const ImageGrid sab = detail::box3_sum(ab);
  const ImageGrid smask = detail::box3_sum(mask);
  double sum = 0.0;
  for (int y = 1; y + 1 < a.height; ++y) {
    for (int x = 1; x + 1 < a.width; ++x) {
      if (smask.at(x, y) != 9.0) continue;
      ++r.windows;
      for (int c = 0; c < a.channels; ++c) {
        const double s = detail::ssim_from_moments(
            sa.at(x, y, c), sb.at(x, y, c), saa.at(x, y, c), sbb.at(x, y, c),
            sab.at(x, y, c), c1, c2, nullptr);
        sum += (1.0 - s) * 0.5;
      }
    }
  }
  if (r.windows == 0) {
    r.empty = true;
    return r;
  }
  r.value = sum / (static_cast<double>(r.windows) * a.channels);
  return r;
}

// Accumulates upstream * d(ssim_loss)/d(b) into d_b.
inline void ssim_loss_vjp(const ImageGrid& a, const ImageGrid& b,
                          const ImageGrid& mask, size_t window_count,
                          double upstream, ImageGrid* d_b, double c1 = kSsimC1,
                          double c2 = kSsimC2) {
  if (window_count == 0) return;
  const ImageGrid smask = detail::box3_sum(mask);
  const double coeff =
      -0.5 * upstream / (static_cast<double>(window_count) * a.channels);
  for (int y = 1; y + 1 < a.height; ++y) {
    for (int x = 1; x + 1 < a.width; ++x) {
      if (smask.at(x, y) != 9.0) continue;
      for (int c = 0; c < a.channels; ++c) {
        double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double av = a.at(x + dx, y + dy, c);
            const double bv = b.at(x + dx, y + dy, c);
            sa += av;
            sb += bv;
            saa += av * av;
            sbb += bv * bv;
            sab += av * bv;
          }
        }
        detail::SsimWindowPartials p;
        detail::ssim_from_moments(sa, sb, saa, sbb, sab, c1, c2, &p);
        const double mu_a = sa / 9.0;
        const double mu_b = sb / 9.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double av = a.at(x + dx, y + dy, c);
            const double bv = b.at(x + dx, y + dy, c);
            const double ds_db = p.d_mu_b / 9.0 +
                                 p.d_var_b * 2.0 * (bv - mu_b) / 9.0 +
                                 p.d_cov * (av - mu_a) / 9.0;
            d_b->at(x + dx, y + dy, c) += coeff * ds_db;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Edge-aware smoothness

namespace detail {

// exp(-g) edge weights from channel-averaged absolute forward differences.
// dir 0 is x (defined for u < W-1), dir 1 is y (defined for v < H-1).
inline double edge_weight(const ImageGrid& image, int x, int y, int dir) {
  double g = 0.0;
  for (int c = 0; c < image.channels; ++c) {
    const double d = dir == 0 ? image.at(x + 1, y, c) - image.at(x, y, c)
                              : image.at(x, y + 1, c) - image.at(x, y, c);
    g += std::abs(d);
  }
  return std::exp(-g / image.channels);
}

}  // namespace detail

// Edge-weighted squared forward differences of a raw grid channel (no
// normalization): sum over p of (exp(-grad I) * (F(p+d) - F(p)))^2.
inline double smoothness_raw(const ImageGrid& field, int channel,
                             const ImageGrid& image) {
  double sum = 0.0;
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      if (x + 1 < field.width) {
        const double w = detail::edge_weight(image, x, y, 0);
        const double d = field.at(x + 1, y, channel) - field.at(x, y, channel);
        sum += w * w * d * d;
      }
      if (y + 1 < field.height) {
        const double w = detail::edge_weight(image, x, y, 1);
        const double d = field.at(x, y + 1, channel) - field.at(x, y, channel);
        sum += w * w * d * d;
      }
    }
  }
  return sum;
}

// Accumulates upstream * d(smoothness_raw)/d(field channel) into d_field.
inline void smoothness_raw_vjp(const ImageGrid& field, int channel,
                               const ImageGrid& image, double upstream,
                               ImageGrid* d_field) {
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      if (x + 1 < field.width) {
        const double w = detail::edge_weight(image, x, y, 0);
        const double d = field.at(x + 1, y, channel) - field.at(x, y, channel);
        const double g = upstream * 2.0 * w * w * d;
        d_field->at(x + 1, y, channel) += g;
        d_field->at(x, y, channel) -= g;
      }
      if (y + 1 < field.height) {
        const double w = detail::edge_weight(image, x, y, 1);
        const double d = field.at(x, y + 1, channel) - field.at(x, y, channel);
        const double g = upstream * 2.0 * w * w * d;
        d_field->at(x, y + 1, channel) += g;
        d_field->at(x, y, channel) -= g;
      }
    }
  }
}

// Edge-aware depth smoothness on mean-normalized depth: the squared,
// exp(-grad I)-weighted forward differences of D / mean(D), summed over all
// pixels where the difference is defined.
inline double smoothness_loss(const ImageGrid& depth, const ImageGrid& image) {
  require_shape(depth, depth.width, depth.height, 1, "smoothness_loss depth");
  if (image.width != depth.width || image.height != depth.height) {
    throw std::invalid_argument("smoothness_loss: image/depth shape mismatch");
  }
  double mean = 0.0;
  for (double v : depth.data) mean += v;
  mean /= static_cast<double>(depth.data.size());
  if (!(mean > 0.0)) {
    throw std::invalid_argument("smoothness_loss: mean depth must be positive");
  }
  ImageGrid norm(depth.width, depth.height, 1);
  for (size_t i = 0; i < depth.data.size(); ++i) {
    norm.data[i] = depth.data[i] / mean;
  }
  return smoothness_raw(norm, 0, image);
}

// Accumulates upstream * d(smoothness_loss)/d(depth) into d_depth, including
// the dependence through the normalizing mean.
inline void smoothness_loss_vjp(const ImageGrid& depth, const ImageGrid& image,
                                double upstream, ImageGrid* d_depth) {
  double mean = 0.0;
  for (double v : depth.data) mean += v;
  const double n = static_cast<double>(depth.data.size());
  mean /= n;
  ImageGrid norm(depth.width, depth.height, 1);
  for (size_t i = 0; i < depth.data.size(); ++i) {
    norm.data[i] = depth.data[i] / mean;
  }
  ImageGrid d_norm(depth.width, depth.height, 1);
  smoothness_raw_vjp(norm, 0, image, upstream, &d_norm);
  // norm(q) = D(q) / mu with mu = mean(D):
  // dL/dD(p) = dL/dnorm(p) / mu - sum_q dL/dnorm(q) D(q) / (n mu^2).
  double weighted = 0.0;
  for (size_t i = 0; i < depth.data.size(); ++i) {
    weighted += d_norm.data[i] * depth.data[i];
  }
  const double correction = weighted / (n * mean * mean);
  for (size_t i = 0; i < depth.data.size(); ++i) {
    d_depth->data[i] += d_norm.data[i] / mean - correction;
  }
}

// ---------------------------------------------------------------------------
// Scale consistency

struct ScaleConsistencyResult {
  double value = 0.0;
  size_t support = 0;
  bool empty = false;
};

// Normalized depth agreement |za - zb| / (za + zb) averaged over pixels with
// support = 1. Inputs come from reproject_depth_pair: projected depth za and
// sampled depth zb, both per source pixel.
inline ScaleConsistencyResult scale_consistency_loss(const ImageGrid& projected,
                                                     const ImageGrid& sampled,
                                                     const ImageGrid& support) {
  require_same_shape(projected, sampled, "scale_consistency_loss");
  require_shape(support, projected.width, projected.height, 1,
                "scale_consistency_loss support");
  ScaleConsistencyResult r;
  double sum = 0.0;
  for (size_t i = 0; i < projected.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    ++r.support;
    sum += relative_depth_gap(projected.data[i], sampled.data[i]);
  }
  if (r.support == 0) {
    r.empty = true;
    return r;
  }
  r.value = sum / static_cast<double>(r.support);
  return r;
}

// Accumulates gradients w.r.t. both depth inputs.
inline void scale_consistency_vjp(const ImageGrid& projected,
                                  const ImageGrid& sampled,
                                  const ImageGrid& support, size_t support_count,
                                  double upstream, ImageGrid* d_projected,
                                  ImageGrid* d_sampled) {
  if (support_count == 0) return;
  const double scale = upstream / static_cast<double>(support_count);
  for (size_t i = 0; i < projected.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    const double za = projected.data[i];
    const double zb = sampled.data[i];
    const double diff = za - zb;
    const double s = za + zb;
    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    const double inv_s2 = 1.0 / (s * s);
    d_projected->data[i] += scale * (sgn * s - std::abs(diff)) * inv_s2;
    d_sampled->data[i] += scale * (-sgn * s - std::abs(diff)) * inv_s2;
  }
}

// ---------------------------------------------------------------------------
// Cycle consistency

struct CycleTranslationResult {
  double value = 0.0;
  size_t support = 0;
  bool empty = false;
};

// Forward/backward agreement of per-pixel translations along established
// correspondences: mean over supported pixels p of
// || t_ab(p) + R_ab * t_ba(p') ||^2, where p' are the warp coordinates of p
// in frame b and t_ba is sampled bilinearly from the reverse field.
inline CycleTranslationResult cycle_translation_residual(
    const MotionField& field_ab, const ImageGrid& tfield_ab,
    const ImageGrid& tfield_ba, const ImageGrid& coords_ab,
    const ImageGrid& support) {
  CycleTranslationResult r;
  const Eigen::Matrix3d r_ab = field_ab.rotation();
  double sum = 0.0;
  for (size_t i = 0; i < support.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    const BilinearCtx c =
        bilinear_ctx(tfield_ba.width, tfield_ba.height, coords_ab.data[2 * i],
                     coords_ab.data[2 * i + 1]);
    if (!c.valid) continue;
    ++r.support;
    Eigen::Vector3d rev;
    for (int ch = 0; ch < 3; ++ch) rev[ch] = bilinear_value(tfield_ba, c, ch);
    const Eigen::Vector3d fwd(tfield_ab.data[3 * i], tfield_ab.data[3 * i + 1],
                              tfield_ab.data[3 * i + 2]);
    sum += (fwd + r_ab * rev).squaredNorm();
  }
  if (r.support == 0) {
    r.empty = true;
    return r;
  }
  r.value = sum / static_cast<double>(r.support);
  return r;
}

// Gradients of cycle_translation_residual. Accumulates into the forward
// field's materialized translation grid (d_tfield_ab), the reverse grid via
// bilinear scatter (d_tfield_ba), the warp coordinates (d_coords_ab), and
// the forward rotation vector (d_r0_ab).
inline void cycle_translation_vjp(const MotionField& field_ab,
                                  const ImageGrid& tfield_ab,
                                  const ImageGrid& tfield_ba,
                                  const ImageGrid& coords_ab,
                                  const ImageGrid& support, size_t support_count,
                                  double upstream, ImageGrid* d_tfield_ab,
                                  ImageGrid* d_tfield_ba, ImageGrid* d_coords_ab,
                                  Eigen::Vector3d* d_r0_ab) {
  if (support_count == 0) return;
  const Eigen::Matrix3d r_ab = field_ab.rotation();
  const Eigen::Matrix3d jl_t = left_jacobian(field_ab.r0).transpose();
  const double scale = upstream / static_cast<double>(support_count);
  Eigen::Vector3d cross_sum = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < support.pixel_count(); ++i) {
    if (support.data[i] == 0.0) continue;
    const BilinearCtx c =
        bilinear_ctx(tfield_ba.width, tfield_ba.height, coords_ab.data[2 * i],
                     coords_ab.data[2 * i + 1]);
    if (!c.valid) continue;
    Eigen::Vector3d rev;
    for (int ch = 0; ch < 3; ++ch) rev[ch] = bilinear_value(tfield_ba, c, ch);
    const Eigen::Vector3d fwd(tfield_ab.data[3 * i], tfield_ab.data[3 * i + 1],
                              tfield_ab.data[3 * i + 2]);
    const Eigen::Vector3d rot_rev = r_ab * rev;
    const Eigen::Vector3d resid = fwd + rot_rev;
    const Eigen::Vector3d g = 2.0 * scale * resid;
    for (int ch = 0; ch < 3; ++ch) d_tfield_ab->data[3 * i + ch] += g[ch];
    // Through the sampled reverse translation: value and coordinates.
    const Eigen::Vector3d g_rev = r_ab.transpose() * g;
    double du_total = 0.0, dv_total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      bilinear_scatter(*d_tfield_ba, c, ch, g_rev[ch]);
      double du, dv;
      bilinear_spatial_grad(tfield_ba, c, ch, &du, &dv);
      du_total += g_rev[ch] * du;
      dv_total += g_rev[ch] * dv;
    }
    d_coords_ab->data[2 * i] += du_total;
    d_coords_ab->data[2 * i + 1] += dv_total;
    // Through the rotation applied to the sampled reverse translation.
    cross_sum += rot_rev.cross(g);
  }
  *d_r0_ab += jl_t * cross_sum;
}

// Rotation cycle residual || Log(R_ab R_ba) ||^2 for one frame pair.
inline double cycle_rotation_residual(const MotionField& field_ab,
                                      const MotionField& field_ba) {
  const Eigen::Matrix3d prod = field_ab.rotation() * field_ba.rotation();
  return log_so3(prod).squaredNorm();
}

// Gradients of cycle_rotation_residual w.r.t. both rotation vectors.
inline void cycle_rotation_vjp(const MotionField& field_ab,
                               const MotionField& field_ba, double upstream,
                               Eigen::Vector3d* d_r0_ab,
                               Eigen::Vector3d* d_r0_ba) {
  const Eigen::Matrix3d prod = field_ab.rotation() * field_ba.rotation();
  const Eigen::Vector3d phi = log_so3(prod);
  const Eigen::Vector3d g_phi = 2.0 * upstream * phi;
  // Left perturbation of R_ab maps through J_l(phi)^-1 J_l(r0_ab); right
  // perturbation of R_ba maps through J_r(phi)^-1 J_r(r0_ba).
  *d_r0_ab += left_jacobian(field_ab.r0).transpose() *
              left_jacobian_inv(phi).transpose() * g_phi;
  *d_r0_ba += right_jacobian(field_ba.r0).transpose() *
              right_jacobian_inv(phi).transpose() * g_phi;
}

// Combined cycle penalty for one directed evaluation, matching the pairwise
// contract: translation residual along the a->b correspondence plus the
// rotation residual of the pair scaled by rotation_scale.
inline double cycle_consistency_loss(const MotionField& field_ab,
                                     const MotionField& field_ba,
                                     const ImageGrid& coords_ab,
                                     const ImageGrid& support,
                                     double rotation_scale = 1.0) {
  const ImageGrid tf_ab = translation_field(field_ab);
  const ImageGrid tf_ba = translation_field(field_ba);
  const CycleTranslationResult trans =
      cycle_translation_residual(field_ab, tf_ab, tf_ba, coords_ab, support);
  return trans.value +
         rotation_scale * cycle_rotation_residual(field_ab, field_ba);
}

// ---------------------------------------------------------------------------
// Residual motion regularizer

// lambda * mean(m * ||delta_t||_1) + gate_weight * mean(m). Keeps the gated
// residual translation sparse and the gate itself cheap to open only where
// the data demands it.
inline double residual_regularizer(const MotionField& f, double lambda,
                                   double gate_weight) {
  const size_t n = f.m.pixel_count();
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double l1 = std::abs(f.delta_t.data[3 * i]) +
                      std::abs(f.delta_t.data[3 * i + 1]) +
                      std::abs(f.delta_t.data[3 * i + 2]);
    sum += lambda * f.m.data[i] * l1 + gate_weight * f.m.data[i];
  }
  return sum / static_cast<double>(n);
}

// Accumulates gradients w.r.t. delta_t and the gate values.
inline void residual_regularizer_vjp(const MotionField& f, double lambda,
                                     double gate_weight, double upstream,
                                     MotionFieldGrads* g) {
  const size_t n = f.m.pixel_count();
  const double scale = upstream / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    double l1 = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double d = f.delta_t.data[3 * i + ch];
      l1 += std::abs(d);
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      g->d_delta_t.data[3 * i + ch] += scale * lambda * f.m.data[i] * sgn;
    }
    g->d_m.data[i] += scale * (lambda * l1 + gate_weight);
  }
}

}  // namespace dvopt
