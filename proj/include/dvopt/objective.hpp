#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dvopt/camera.hpp"
#include "dvopt/depth.hpp"
#include "dvopt/geometry.hpp"
#include "dvopt/image.hpp"
#include "dvopt/losses.hpp"
#include "dvopt/occlusion.hpp"
#include "dvopt/se3.hpp"

namespace dvopt {

// A triplet holds three consecutive frames indexed 0 (previous), 1 (middle),
// 2 (next). Four directed motion fields connect them; field d lives on the
// pixel grid of kFieldFrom[d] and maps its camera coordinates into frame
// kFieldTo[d], whose image supplies the pixels when reconstructing the view
// of kFieldFrom[d].
inline constexpr int kFieldCount = 4;
inline constexpr int kFieldFrom[kFieldCount] = {1, 0, 1, 2};
inline constexpr int kFieldTo[kFieldCount] = {0, 1, 2, 1};
// Cycle pairs: fields (0, 1) relate frames 1<->0, fields (2, 3) frames 1<->2.
inline constexpr int kCyclePairs[2][2] = {{0, 1}, {2, 3}};

// Optimizable motion parameters for one directed field. Gate values are
// parameterized by logits through the logistic function.
struct MotionParams {
  Eigen::Vector3d r0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d t0 = Eigen::Vector3d::Zero();
  ImageGrid delta_t;      // 3 channels
  ImageGrid gate_logits;  // 1 channel

  MotionParams() = default;
  MotionParams(int w, int h, double gate_logit_init)
      : delta_t(w, h, 3), gate_logits(w, h, 1) {
    std::fill(gate_logits.data.begin(), gate_logits.data.end(),
              gate_logit_init);
  }
};

inline constexpr double kGateLogitInit = -2.0;

// All optimizable state for one triplet. Depth is parameterized per frame by
// logits through the softplus function.
struct TripletParams {
  std::array<ImageGrid, 3> depth_logits;
  std::array<MotionParams, kFieldCount> motions;

  int width() const { return depth_logits[0].width; }
  int height() const { return depth_logits[0].height; }

  // Constant-depth, identity-motion starting point: every pixel begins at
  // half the scene scale prior, residual translations at zero, gates nearly
  // closed.
  static TripletParams init(int w, int h, double scene_scale_prior) {
    if (!(scene_scale_prior > 0.0)) {
      throw std::invalid_argument(
          "TripletParams::init: scene_scale_prior must be positive");
    }
    TripletParams p;
    const double logit = softplus_inverse(0.5 * scene_scale_prior);
    for (auto& g : p.depth_logits) {
      g = ImageGrid(w, h, 1);
      std::fill(g.data.begin(), g.data.end(), logit);
    }
    for (auto& m : p.motions) m = MotionParams(w, h, kGateLogitInit);
    return p;
  }
};

struct MotionParamGrads {
  Eigen::Vector3d d_r0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_t0 = Eigen::Vector3d::Zero();
  ImageGrid d_delta_t;
  ImageGrid d_gate_logits;
};

struct TripletGrads {
  std::array<ImageGrid, 3> d_depth_logits;
  std::array<MotionParamGrads, kFieldCount> d_motions;

  static TripletGrads zeros(int w, int h) {
    TripletGrads g;
    for (auto& d : g.d_depth_logits) d = ImageGrid(w, h, 1);
    for (auto& m : g.d_motions) {
      m.d_delta_t = ImageGrid(w, h, 3);
      m.d_gate_logits = ImageGrid(w, h, 1);
    }
    return g;
  }
};

// Scalar weights for each loss term plus the knobs folded inside terms.
// total = photometric * w_photo + ssim * w_ssim + ... with each term a plain
// sum over its instances.
struct LossWeights {
  double photometric = 1.0;
  double ssim = 0.15;
  double smoothness = 0.05;
  double scale_consistency = 0.5;
  double cycle = 0.1;
  double residual_reg = 0.01;
  double cycle_rotation_scale = 1.0;
  double motion_smoothness_scale = 1.0;
  double residual_lambda = 1.0;
  double residual_gate_weight = 1.0;

  void validate() const {
    const double vals[] = {photometric,       ssim,
                           smoothness,        scale_consistency,
                           cycle,             residual_reg,
                           cycle_rotation_scale, motion_smoothness_scale,
                           residual_lambda,   residual_gate_weight};
    const char* names[] = {"photometric",       "ssim",
                           "smoothness",        "scale_consistency",
                           "cycle",             "residual_reg",
                           "cycle_rotation_scale", "motion_smoothness_scale",
                           "residual_lambda",   "residual_gate_weight"};
    for (size_t i = 0; i < std::size(vals); ++i) {
      if (!(vals[i] >= 0.0) || !std::isfinite(vals[i])) {
        throw std::invalid_argument(std::string("LossWeights: ") + names[i] +
                                    " must be finite and non-negative");
      }
    }
  }
};

struct ObjectiveOptions {
  int occlusion_radius = kDefaultOcclusionRadius;
  double occlusion_tau = kDefaultDepthTolerance;
  // When false the residual translation fields and gates are held out of the
  // model entirely: warps are rigid, the residual regularizer and motion
  // smoothness vanish, and cycle consistency compares global translations.
  bool motion_enabled = true;
  // Supplied by the derivative checker to hold visibility fixed across
  // finite-difference evaluations; normal optimization leaves it null so the
  // masks are refreshed from the current depth estimates every evaluation.
  const std::array<OcclusionMask, kFieldCount>* frozen_occlusion = nullptr;
};

// Per-term values. total is exactly the weighted sum of the six terms under
// the recorded weights. The empty flags record instances whose support
// vanished (contributing zero).
struct LossBreakdown {
  double photometric = 0.0;
  double ssim = 0.0;
  double smoothness = 0.0;
  double scale_consistency = 0.0;
  double cycle = 0.0;
  double residual_reg = 0.0;
  double total = 0.0;
  LossWeights weights;
  bool photometric_empty = false;
  bool ssim_empty = false;
  bool scale_empty = false;
  bool cycle_empty = false;
};

namespace detail {

struct DirectedPass {
  MotionField field;          // materialized gates
  ImageGrid tfield;           // per-pixel translation grid (3ch)
  OcclusionMask occ;
  WarpPass full;              // warp with per-pixel translation
  WarpPass rigid;             // warp with t0 only (scale consistency)
  ImageGrid warped;           // source image sampled at full-warp coords
  ImageGrid support_photo;    // full.valid AND visible
  ImageGrid support_scale;    // rigid.valid AND visible
  ImageGrid scale_projected;  // depth of warped points in the other frame
  ImageGrid scale_sampled;    // other frame's depth sampled at rigid coords
  PhotometricResult photo;
  SsimResult ssim;
  ScaleConsistencyResult scale;
};

inline ImageGrid sample_image(const ImageGrid& src, const WarpPass& pass) {
  ImageGrid out(src.width, src.height, src.channels);
  for (size_t i = 0; i < pass.valid.size(); ++i) {
    if (!pass.valid[i]) continue;
    const BilinearCtx c = bilinear_ctx(src.width, src.height,
                                       pass.coords.data[2 * i],
                                       pass.coords.data[2 * i + 1]);
    if (!c.valid) continue;
    for (int ch = 0; ch < src.channels; ++ch) {
      out.data[i * src.channels + ch] = bilinear_value(src, c, ch);
    }
  }
  return out;
}

}  // namespace detail

// Evaluates the full triplet objective. When grads is non-null, also
// accumulates d(total)/d(parameter) for every optimizable parameter via
// hand-derived reverse-mode differentiation. Visibility masks are treated as
// constants of the current iterate: they are recomputed from the depths on
// every call but receive no gradient.
inline LossBreakdown total_loss(const std::array<ImageGrid, 3>& images,
                                const Intrinsics& intr,
                                const TripletParams& params,
                                const LossWeights& weights,
                                const ObjectiveOptions& opts,
                                TripletGrads* grads = nullptr) {
  weights.validate();
  const int w = images[0].width;
  const int h = images[0].height;
  for (int f = 0; f < 3; ++f) {
    require_shape(images[f], w, h, images[0].channels, "total_loss image");
    require_shape(params.depth_logits[f], w, h, 1, "total_loss depth_logits");
  }
  for (int d = 0; d < kFieldCount; ++d) {
    require_shape(params.motions[d].delta_t, w, h, 3, "total_loss delta_t");
    require_shape(params.motions[d].gate_logits, w, h, 1,
                  "total_loss gate_logits");
  }

  // Materialize depths and motion fields from their parameterizations.
  std::array<ImageGrid, 3> depths;
  for (int f = 0; f < 3; ++f) {
    depths[f] = depth_from_logits(params.depth_logits[f]);
  }
  std::array<detail::DirectedPass, kFieldCount> passes;
  const std::vector<Eigen::Vector3d> rays = ray_table(w, h, intr);
  for (int d = 0; d < kFieldCount; ++d) {
    auto& dp = passes[d];
    const MotionParams& mp = params.motions[d];
    dp.field.r0 = mp.r0;
    dp.field.t0 = mp.t0;
    if (opts.motion_enabled) {
      dp.field.delta_t = mp.delta_t;
      dp.field.m = ImageGrid(w, h, 1);
      for (size_t i = 0; i < dp.field.m.data.size(); ++i) {
        dp.field.m.data[i] = 1.0 / (1.0 + std::exp(-mp.gate_logits.data[i]));
      }
    } else {
      dp.field.delta_t = ImageGrid(w, h, 3);
      dp.field.m = ImageGrid(w, h, 1);
    }
    dp.tfield = translation_field(dp.field);
  }

  LossBreakdown out;

  // Directed warp passes: photometric, structural and scale terms.
  for (int d = 0; d < kFieldCount; ++d) {
    auto& dp = passes[d];
    const int a = kFieldFrom[d];
    const int b = kFieldTo[d];
    const Eigen::Matrix3d rot = dp.field.rotation();
    const PoseSE3 pose{rot, dp.field.t0};
    if (opts.frozen_occlusion) {
      dp.occ = (*opts.frozen_occlusion)[d];
    } else {
      dp.occ = occlusion_mask(depths[a], depths[b], pose, intr,
                              opts.occlusion_radius, opts.occlusion_tau);
    }
    dp.full = project_depth(depths[a], rays, rot, dp.field.t0,
                            opts.motion_enabled ? &dp.tfield : nullptr, intr,
                            w, h);
    dp.rigid = opts.motion_enabled
                   ? project_depth(depths[a], rays, rot, dp.field.t0, nullptr,
                                   intr, w, h)
                   : dp.full;
    dp.warped = detail::sample_image(images[b], dp.full);
    dp.support_photo = ImageGrid(w, h, 1);
    dp.support_scale = ImageGrid(w, h, 1);
    dp.scale_projected = ImageGrid(w, h, 1);
    dp.scale_sampled = ImageGrid(w, h, 1);
    for (size_t i = 0; i < dp.full.valid.size(); ++i) {
      const bool vis = dp.occ.mask.data[i] != 0.0;
      dp.support_photo.data[i] = (dp.full.valid[i] && vis) ? 1.0 : 0.0;
      if (dp.rigid.valid[i] && vis) {
        dp.support_scale.data[i] = 1.0;
        dp.scale_projected.data[i] = dp.rigid.depth_out.data[i];
        dp.scale_sampled.data[i] =
            bilinear_sample(depths[b], 0, dp.rigid.coords.data[2 * i],
                            dp.rigid.coords.data[2 * i + 1])
                .value;
      }
    }
    dp.photo = photometric_l1(images[a], dp.warped, dp.support_photo);
    dp.ssim = ssim_loss(images[a], dp.warped, dp.support_photo);
    dp.scale = scale_consistency_loss(dp.scale_projected, dp.scale_sampled,
                                      dp.support_scale);
    out.photometric += dp.photo.value;
    out.ssim += dp.ssim.value;
    out.scale_consistency += dp.scale.value;
    out.photometric_empty = out.photometric_empty || dp.photo.empty;
    out.ssim_empty = out.ssim_empty || dp.ssim.empty;
    out.scale_empty = out.scale_empty || dp.scale.empty;
  }

  // Cycle consistency per frame pair: both translation directions plus the
  // rotation product residual.
  std::array<CycleTranslationResult, kFieldCount> cycle_trans;
  std::array<double, 2> cycle_rot;
  for (int p = 0; p < 2; ++p) {
    const int df = kCyclePairs[p][0];
    const int db = kCyclePairs[p][1];
    cycle_trans[df] = cycle_translation_residual(
        passes[df].field, passes[df].tfield, passes[db].tfield,
        passes[df].full.coords, passes[df].support_photo);
    cycle_trans[db] = cycle_translation_residual(
        passes[db].field, passes[db].tfield, passes[df].tfield,
        passes[db].full.coords, passes[db].support_photo);
    cycle_rot[p] = cycle_rotation_residual(passes[df].field, passes[db].field);
    out.cycle += cycle_trans[df].value + cycle_trans[db].value +
                 weights.cycle_rotation_scale * cycle_rot[p];
    out.cycle_empty =
        out.cycle_empty || cycle_trans[df].empty || cycle_trans[db].empty;
  }

  // Smoothness: normalized depth per frame, raw residual translations per
  // field when the motion model is active.
  for (int f = 0; f < 3; ++f) {
    out.smoothness += smoothness_loss(depths[f], images[f]);
  }
  if (opts.motion_enabled) {
    for (int d = 0; d < kFieldCount; ++d) {
      const ImageGrid& img = images[kFieldFrom[d]];
      for (int ch = 0; ch < 3; ++ch) {
        out.smoothness += weights.motion_smoothness_scale *
                          smoothness_raw(params.motions[d].delta_t, ch, img);
      }
    }
    for (int d = 0; d < kFieldCount; ++d) {
      out.residual_reg +=
          residual_regularizer(passes[d].field, weights.residual_lambda,
                               weights.residual_gate_weight);
    }
  }

  out.weights = weights;
  out.total = weights.photometric * out.photometric + weights.ssim * out.ssim +
              weights.smoothness * out.smoothness +
              weights.scale_consistency * out.scale_consistency +
              weights.cycle * out.cycle +
              weights.residual_reg * out.residual_reg;

  if (!grads) return out;

  // -------------------------------------------------------------------------
  // Reverse pass.
  std::array<ImageGrid, 3> d_depth;
  for (int f = 0; f < 3; ++f) d_depth[f] = ImageGrid(w, h, 1);
  std::array<ImageGrid, kFieldCount> d_tfield;
  std::array<ImageGrid, kFieldCount> d_coords_full;
  for (int d = 0; d < kFieldCount; ++d) {
    d_tfield[d] = ImageGrid(w, h, 3);
    d_coords_full[d] = ImageGrid(w, h, 2);
  }
  std::array<MotionFieldGrads, kFieldCount> field_grads{
      MotionFieldGrads(passes[0].field), MotionFieldGrads(passes[1].field),
      MotionFieldGrads(passes[2].field), MotionFieldGrads(passes[3].field)};

  for (int d = 0; d < kFieldCount; ++d) {
    auto& dp = passes[d];
    const int a = kFieldFrom[d];
    const int b = kFieldTo[d];

    // Photometric and structural terms push into the warped values...
    ImageGrid d_warped(w, h, images[0].channels);
    photometric_l1_vjp(images[a], dp.warped, dp.support_photo,
                       dp.photo.support, weights.photometric, &d_warped);
    ssim_loss_vjp(images[a], dp.warped, dp.support_photo, dp.ssim.windows,
                  weights.ssim, &d_warped);
    // ...which reach the parameters only through the warp coordinates, since
    // the sampled image is fixed.
    for (size_t i = 0; i < dp.full.valid.size(); ++i) {
      if (!dp.full.valid[i]) continue;
      double gu = 0.0, gv = 0.0;
      bool any = false;
      for (int ch = 0; ch < images[b].channels; ++ch) {
        if (d_warped.data[i * images[b].channels + ch] != 0.0) {
          any = true;
          break;
        }
      }
      if (!any) continue;
      const BilinearCtx c = bilinear_ctx(w, h, dp.full.coords.data[2 * i],
                                         dp.full.coords.data[2 * i + 1]);
      if (!c.valid) continue;
      for (int ch = 0; ch < images[b].channels; ++ch) {
        const double g = d_warped.data[i * images[b].channels + ch];
        if (g == 0.0) continue;
        double du, dv;
        bilinear_spatial_grad(images[b], c, ch, &du, &dv);
        gu += g * du;
        gv += g * dv;
      }
      d_coords_full[d].data[2 * i] += gu;
      d_coords_full[d].data[2 * i + 1] += gv;
    }

    // Scale consistency: gradients w.r.t. projected depth, the sampled
    // neighbor depth (value and sampling position), and the rigid motion.
    ImageGrid d_projected(w, h, 1);
    ImageGrid d_sampled(w, h, 1);
    scale_consistency_vjp(dp.scale_projected, dp.scale_sampled,
                          dp.support_scale, dp.scale.support,
                          weights.scale_consistency, &d_projected, &d_sampled);
    ImageGrid d_coords_rigid(w, h, 2);
    for (size_t i = 0; i < dp.rigid.valid.size(); ++i) {
      if (dp.support_scale.data[i] == 0.0 || d_sampled.data[i] == 0.0) continue;
      const BilinearCtx c = bilinear_ctx(w, h, dp.rigid.coords.data[2 * i],
                                         dp.rigid.coords.data[2 * i + 1]);
      if (!c.valid) continue;
      bilinear_scatter(d_depth[b], c, 0, d_sampled.data[i]);
      double du, dv;
      bilinear_spatial_grad(depths[b], c, 0, &du, &dv);
      d_coords_rigid.data[2 * i] += d_sampled.data[i] * du;
      d_coords_rigid.data[2 * i + 1] += d_sampled.data[i] * dv;
    }
    const Eigen::Matrix3d rot = dp.field.rotation();
    WarpPassGrads rigid_g = project_depth_vjp(
        dp.rigid, depths[a], rays, params.motions[d].r0, rot, dp.field.t0,
        nullptr, intr, d_coords_rigid, &d_projected);
    field_grads[d].d_r0 += rigid_g.d_omega;
    field_grads[d].d_t0 += rigid_g.d_t0;
    for (size_t i = 0; i < d_depth[a].data.size(); ++i) {
      d_depth[a].data[i] += rigid_g.d_depth.data[i];
    }
  }

  // Cycle terms: translation residuals feed the materialized translation
  // grids and the full-warp coordinates; rotation residuals feed r0 pairs.
  for (int p = 0; p < 2; ++p) {
    const int df = kCyclePairs[p][0];
    const int db = kCyclePairs[p][1];
    cycle_translation_vjp(passes[df].field, passes[df].tfield,
                          passes[db].tfield, passes[df].full.coords,
                          passes[df].support_photo, cycle_trans[df].support,
                          weights.cycle, &d_tfield[df], &d_tfield[db],
                          &d_coords_full[df], &field_grads[df].d_r0);
    cycle_translation_vjp(passes[db].field, passes[db].tfield,
                          passes[df].tfield, passes[db].full.coords,
                          passes[db].support_photo, cycle_trans[db].support,
                          weights.cycle, &d_tfield[db], &d_tfield[df],
                          &d_coords_full[db], &field_grads[db].d_r0);
    cycle_rotation_vjp(passes[df].field, passes[db].field,
                       weights.cycle * weights.cycle_rotation_scale,
                       &field_grads[df].d_r0, &field_grads[db].d_r0);
  }

  // Route the accumulated coordinate gradients of each full warp back through
  // projection into rotation, translation and depth.
  for (int d = 0; d < kFieldCount; ++d) {
    auto& dp = passes[d];
    const int a = kFieldFrom[d];
    const Eigen::Matrix3d rot = dp.field.rotation();
    WarpPassGrads full_g = project_depth_vjp(
        dp.full, depths[a], rays, params.motions[d].r0, rot, dp.field.t0,
        opts.motion_enabled ? &dp.tfield : nullptr, intr, d_coords_full[d],
        nullptr);
    field_grads[d].d_r0 += full_g.d_omega;
    for (size_t i = 0; i < d_depth[a].data.size(); ++i) {
      d_depth[a].data[i] += full_g.d_depth.data[i];
    }
    if (opts.motion_enabled) {
      for (size_t i = 0; i < d_tfield[d].data.size(); ++i) {
        d_tfield[d].data[i] += full_g.d_tfield.data[i];
      }
    } else {
      field_grads[d].d_t0 += full_g.d_t0;
    }
  }

  // Smoothness and the residual regularizer.
  for (int f = 0; f < 3; ++f) {
    smoothness_loss_vjp(depths[f], images[f], weights.smoothness, &d_depth[f]);
  }
  if (opts.motion_enabled) {
    for (int d = 0; d < kFieldCount; ++d) {
      const ImageGrid& img = images[kFieldFrom[d]];
      for (int ch = 0; ch < 3; ++ch) {
        smoothness_raw_vjp(params.motions[d].delta_t, ch, img,
                           weights.smoothness * weights.motion_smoothness_scale,
                           &field_grads[d].d_delta_t);
      }
      residual_regularizer_vjp(passes[d].field, weights.residual_lambda,
                               weights.residual_gate_weight,
                               weights.residual_reg, &field_grads[d]);
    }
  }

  // Collapse the materialized translation grids into the parameters, then
  // chain the gate and depth reparameterizations.
  for (int d = 0; d < kFieldCount; ++d) {
    if (opts.motion_enabled) {
      translation_field_vjp(passes[d].field, d_tfield[d], &field_grads[d]);
    } else {
      for (size_t i = 0; i < d_tfield[d].pixel_count(); ++i) {
        for (int ch = 0; ch < 3; ++ch) {
          field_grads[d].d_t0[ch] += d_tfield[d].data[3 * i + ch];
        }
      }
    }
    grads->d_motions[d].d_r0 += field_grads[d].d_r0;
    grads->d_motions[d].d_t0 += field_grads[d].d_t0;
    if (opts.motion_enabled) {
      for (size_t i = 0; i < field_grads[d].d_delta_t.data.size(); ++i) {
        grads->d_motions[d].d_delta_t.data[i] +=
            field_grads[d].d_delta_t.data[i];
      }
      for (size_t i = 0; i < field_grads[d].d_m.data.size(); ++i) {
        const double m = passes[d].field.m.data[i];
        grads->d_motions[d].d_gate_logits.data[i] +=
            field_grads[d].d_m.data[i] * m * (1.0 - m);
      }
    }
  }
  for (int f = 0; f < 3; ++f) {
    for (size_t i = 0; i < d_depth[f].data.size(); ++i) {
      grads->d_depth_logits[f].data[i] +=
          d_depth[f].data[i] *
          softplus_deriv(params.depth_logits[f].data[i]);
    }
  }
  return out;
}

}  // namespace dvopt
