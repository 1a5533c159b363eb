#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/adam.hpp"
#include "dvopt/camera.hpp"
#include "dvopt/image.hpp"
#include "dvopt/objective.hpp"
#include "dvopt/pyramid.hpp"
#include "dvopt/se3.hpp"
#include "dvopt/trajectory.hpp"

namespace dvopt {

enum class OptStatus {
  kConverged = 0,
  kBudgetExhausted = 2,
  kDiverged = 3,
};

inline const char* opt_status_name(OptStatus s) {
  switch (s) {
    case OptStatus::kConverged: return "converged";
    case OptStatus::kBudgetExhausted: return "budget_exhausted";
    case OptStatus::kDiverged: return "diverged";
  }
  return "unknown";
}

struct OptimizerConfig {
  int pyramid_levels = 3;
  int iteration_budget = 1500;       // Adam steps across all levels
  double convergence_rtol = 1e-7;    // relative change threshold
  int convergence_window = 20;       // iterations between compared losses
  double absolute_exit = 1e-8;       // stop outright below this total
  double scene_scale_prior = 10.0;   // meters; depth initialized at half this
  double lr = 1e-3;
  double lr_depth_scale = 1.0;
  double lr_pose_scale = 1.0;
  double lr_motion_scale = 1.0;
  double lr_gate_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Residual motion fields and gates optimize at the finest level only
  // unless enabled for coarse levels too; coarse levels otherwise run the
  // rigid model so the global pose is not absorbed by per-pixel translation.
  bool motion_coarse_enabled = false;
  // Within a motion-enabled level, the first fraction of that level's step
  // cap runs the rigid model only. Depth and pose must claim the parallax
  // first; a per-pixel translation field that starts too early can absorb
  // it instead and leave depth stuck at its initialization.
  double motion_start_fraction = 0.5;
  double coarse_smoothness_factor = 2.0;  // per coarse level multiplier
  int occlusion_radius = kDefaultOcclusionRadius;
  double occlusion_tau = kDefaultDepthTolerance;

  void validate() const {
    if (pyramid_levels < 1) {
      throw std::invalid_argument("OptimizerConfig: pyramid_levels must be >= 1");
    }
    if (iteration_budget <= 0) {
      throw std::invalid_argument("OptimizerConfig: iteration_budget must be > 0");
    }
    if (!(lr > 0.0) || !(scene_scale_prior > 0.0)) {
      throw std::invalid_argument(
          "OptimizerConfig: lr and scene_scale_prior must be positive");
    }
    if (convergence_window < 1) {
      throw std::invalid_argument("OptimizerConfig: convergence_window must be >= 1");
    }
    if (!(motion_start_fraction >= 0.0 && motion_start_fraction <= 1.0)) {
      throw std::invalid_argument(
          "OptimizerConfig: motion_start_fraction must be in [0, 1]");
    }
  }
};

struct TripletProblem {
  std::array<ImageGrid, 3> images;  // previous, middle, next
  Intrinsics intrinsics{1.0, 1.0, 0.0, 0.0};
  LossWeights weights;
  OptimizerConfig config;
  // Optional warm start. When set, the pyramid is skipped and optimization
  // refines these parameters at full resolution only.
  const TripletParams* initial = nullptr;

  void validate() const {
    config.validate();
    weights.validate();
    const ImageGrid& ref = images[0];
    if (ref.channels != 3) {
      throw std::invalid_argument("TripletProblem: images must have 3 channels");
    }
    for (const auto& im : images) {
      require_shape(im, ref.width, ref.height, 3, "TripletProblem image");
      if (!im.all_finite()) {
        throw std::invalid_argument("TripletProblem: non-finite image values");
      }
    }
    if (initial) {
      if (initial->width() != ref.width || initial->height() != ref.height) {
        throw std::invalid_argument("TripletProblem: initial parameter shape mismatch");
      }
    }
  }
};

struct TraceRow {
  int level = 0;      // 0 is the finest level
  int iteration = 0;  // global Adam-step index at evaluation time
  LossBreakdown loss;
};

struct TripletSolution {
  TripletParams params;
  std::array<ImageGrid, 3> depths;
  std::array<MotionField, kFieldCount> fields;
  std::array<PoseSE3, kFieldCount> poses;  // rigid part per directed field
  LossBreakdown final_loss;
  std::vector<TraceRow> trace;
  OptStatus status = OptStatus::kConverged;
  int iterations_used = 0;
  std::string diagnostics;
  int center_index = 1;  // global index of the middle frame, for chaining
};

namespace detail {

// Parameter groups, flattened in a fixed order so updates are deterministic
// and independent of array layout.
enum GroupId { kGroupDepth = 0, kGroupPose = 1, kGroupMotion = 2, kGroupGate = 3 };

inline const char* group_name(GroupId g) {
  switch (g) {
    case kGroupDepth: return "depth_logits";
    case kGroupPose: return "pose";
    case kGroupMotion: return "delta_t";
    case kGroupGate: return "gate_logits";
  }
  return "params";
}

inline std::vector<double> flatten_group(const TripletParams& p, GroupId g) {
  std::vector<double> out;
  switch (g) {
    case kGroupDepth:
      for (const auto& grid : p.depth_logits) {
        out.insert(out.end(), grid.data.begin(), grid.data.end());
      }
      break;
    case kGroupPose:
      for (const auto& m : p.motions) {
        for (int i = 0; i < 3; ++i) out.push_back(m.r0[i]);
        for (int i = 0; i < 3; ++i) out.push_back(m.t0[i]);
      }
      break;
    case kGroupMotion:
      for (const auto& m : p.motions) {
        out.insert(out.end(), m.delta_t.data.begin(), m.delta_t.data.end());
      }
      break;
    case kGroupGate:
      for (const auto& m : p.motions) {
        out.insert(out.end(), m.gate_logits.data.begin(),
                   m.gate_logits.data.end());
      }
      break;
  }
  return out;
}

inline std::vector<double> flatten_group(const TripletGrads& g, GroupId id) {
  std::vector<double> out;
  switch (id) {
    case kGroupDepth:
      for (const auto& grid : g.d_depth_logits) {
        out.insert(out.end(), grid.data.begin(), grid.data.end());
      }
      break;
    case kGroupPose:
      for (const auto& m : g.d_motions) {
        for (int i = 0; i < 3; ++i) out.push_back(m.d_r0[i]);
        for (int i = 0; i < 3; ++i) out.push_back(m.d_t0[i]);
      }
      break;
    case kGroupMotion:
      for (const auto& m : g.d_motions) {
        out.insert(out.end(), m.d_delta_t.data.begin(), m.d_delta_t.data.end());
      }
      break;
    case kGroupGate:
      for (const auto& m : g.d_motions) {
        out.insert(out.end(), m.d_gate_logits.data.begin(),
                   m.d_gate_logits.data.end());
      }
      break;
  }
  return out;
}

inline void unflatten_group(const std::vector<double>& flat, GroupId g,
                            TripletParams* p) {
  size_t k = 0;
  switch (g) {
    case kGroupDepth:
      for (auto& grid : p->depth_logits) {
        std::copy_n(flat.begin() + k, grid.data.size(), grid.data.begin());
        k += grid.data.size();
      }
      break;
    case kGroupPose:
      for (auto& m : p->motions) {
        for (int i = 0; i < 3; ++i) m.r0[i] = flat[k++];
        for (int i = 0; i < 3; ++i) m.t0[i] = flat[k++];
      }
      break;
    case kGroupMotion:
      for (auto& m : p->motions) {
        std::copy_n(flat.begin() + k, m.delta_t.data.size(),
                    m.delta_t.data.begin());
        k += m.delta_t.data.size();
      }
      break;
    case kGroupGate:
      for (auto& m : p->motions) {
        std::copy_n(flat.begin() + k, m.gate_logits.data.size(),
                    m.gate_logits.data.begin());
        k += m.gate_logits.data.size();
      }
      break;
  }
}

// Bilinear 2x upsampling of a one-channel grid under the pixel-center
// convention, with border replication where the fine grid extends past the
// coarse sample lattice.
inline ImageGrid upsample2(const ImageGrid& g) {
  ImageGrid out(g.width * 2, g.height * 2, g.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double u = (x + 0.5) * 0.5 - 0.5;
      double v = (y + 0.5) * 0.5 - 0.5;
      u = std::clamp(u, 0.0, static_cast<double>(g.width - 1));
      v = std::clamp(v, 0.0, static_cast<double>(g.height - 1));
      const BilinearCtx c = bilinear_ctx(g.width, g.height, u, v);
      for (int ch = 0; ch < g.channels; ++ch) {
        out.at(x, y, ch) = bilinear_value(g, c, ch);
      }
    }
  }
  return out;
}

// One pyramid promotion: depth logits upsample bilinearly, poses carry over,
// residual fields restart at their initialization (or upsample when they were
// optimized at the coarse level too).
inline TripletParams promote_params(const TripletParams& coarse,
                                    bool motion_carried) {
  TripletParams fine;
  const int fw = coarse.width() * 2;
  const int fh = coarse.height() * 2;
  for (int f = 0; f < 3; ++f) {
    fine.depth_logits[f] = upsample2(coarse.depth_logits[f]);
  }
  for (int d = 0; d < kFieldCount; ++d) {
    fine.motions[d] = MotionParams(fw, fh, kGateLogitInit);
    fine.motions[d].r0 = coarse.motions[d].r0;
    fine.motions[d].t0 = coarse.motions[d].t0;
    if (motion_carried) {
      fine.motions[d].delta_t = upsample2(coarse.motions[d].delta_t);
      fine.motions[d].gate_logits = upsample2(coarse.motions[d].gate_logits);
    }
  }
  return fine;
}

}  // namespace detail

inline std::array<MotionField, kFieldCount> materialize_fields(
    const TripletParams& p) {
  std::array<MotionField, kFieldCount> out;
  for (int d = 0; d < kFieldCount; ++d) {
    out[d].r0 = p.motions[d].r0;
    out[d].t0 = p.motions[d].t0;
    out[d].delta_t = p.motions[d].delta_t;
    out[d].m = ImageGrid(p.width(), p.height(), 1);
    for (size_t i = 0; i < out[d].m.data.size(); ++i) {
      out[d].m.data[i] =
          1.0 / (1.0 + std::exp(-p.motions[d].gate_logits.data[i]));
    }
  }
  return out;
}

// Coarse-to-fine minimization of the triplet objective with Adam. The
// iteration budget is shared across pyramid levels: every level except the
// finest is capped at budget/levels steps, unused steps roll over, and the
// finest level receives everything that remains. Motion-enabled levels run
// rigid-only for the first motion_start_fraction of their cap, then unfreeze
// the residual field and gates with fresh Adam state. Each level stops early
// when the total changes by less than convergence_rtol (relatively) across
// convergence_window iterations, or immediately when the total falls below
// absolute_exit; either signal during the rigid phase advances to the motion
// phase instead of ending the level. A non-finite total or gradient aborts
// with the last finite state. The returned parameters are the best
// (lowest-total) iterate of the finest level's final phase, and the last
// trace row re-logs that returned state.
inline TripletSolution optimize_triplet(const TripletProblem& problem) {
  problem.validate();
  const OptimizerConfig& cfg = problem.config;
  const int levels = problem.initial ? 1 : cfg.pyramid_levels;

  std::array<std::vector<ImageGrid>, 3> pyramids;
  for (int f = 0; f < 3; ++f) {
    pyramids[f] = build_pyramid(problem.images[f], levels);
  }

  TripletSolution sol;
  int steps_used = 0;
  bool finest_done_by_convergence = false;
  bool diverged = false;

  TripletParams params;
  if (problem.initial) {
    params = *problem.initial;
  } else {
    const ImageGrid& coarsest = pyramids[0][levels - 1];
    params = TripletParams::init(coarsest.width, coarsest.height,
                                 cfg.scene_scale_prior);
  }

  for (int level = levels - 1; level >= 0 && !diverged; --level) {
    const std::array<ImageGrid, 3> imgs = {pyramids[0][level],
                                           pyramids[1][level],
                                           pyramids[2][level]};
    const Intrinsics k_level = intrinsics_for_level(problem.intrinsics, level);
    const bool motion_allowed = (level == 0) || cfg.motion_coarse_enabled;

    LossWeights w_level = problem.weights;
    for (int l = 0; l < level; ++l) {
      w_level.smoothness *= cfg.coarse_smoothness_factor;
    }

    ObjectiveOptions opts;
    opts.occlusion_radius = cfg.occlusion_radius;
    opts.occlusion_tau = cfg.occlusion_tau;
    opts.motion_enabled = false;

    const int level_cap = (level == 0)
                              ? cfg.iteration_budget - steps_used
                              : std::min(cfg.iteration_budget / levels,
                                         cfg.iteration_budget - steps_used);
    const int motion_start_steps = static_cast<int>(
        std::ceil(cfg.motion_start_fraction * static_cast<double>(level_cap)));

    using detail::GroupId;
    std::vector<GroupId> groups = {detail::kGroupDepth, detail::kGroupPose};
    auto lr_scale_for = [&cfg](GroupId g) {
      switch (g) {
        case detail::kGroupDepth: return cfg.lr_depth_scale;
        case detail::kGroupPose: return cfg.lr_pose_scale;
        case detail::kGroupMotion: return cfg.lr_motion_scale;
        case detail::kGroupGate: return cfg.lr_gate_scale;
      }
      return 1.0;
    };
    std::vector<AdamState> states;
    for (GroupId g : groups) {
      states.push_back(AdamState::init(detail::flatten_group(params, g).size(),
                                       cfg.lr * lr_scale_for(g), cfg.beta1,
                                       cfg.beta2, cfg.adam_eps));
    }

    std::vector<double> level_losses;
    TripletParams best_params = params;
    double best_total = std::numeric_limits<double>::infinity();
    TripletParams last_finite = params;
    int level_steps = 0;
    bool motion_active = false;

    // Unfreezes the residual motion field and gates: the objective gains the
    // residual term, fresh Adam state is added for the new groups, and the
    // convergence window and best-iterate tracking restart because totals
    // before and after are not comparable.
    auto activate_motion = [&] {
      motion_active = true;
      opts.motion_enabled = true;
      for (GroupId g : {detail::kGroupMotion, detail::kGroupGate}) {
        groups.push_back(g);
        states.push_back(AdamState::init(
            detail::flatten_group(params, g).size(), cfg.lr * lr_scale_for(g),
            cfg.beta1, cfg.beta2, cfg.adam_eps));
      }
      level_losses.clear();
      best_total = std::numeric_limits<double>::infinity();
    };
    auto motion_pending = [&] { return motion_allowed && !motion_active; };
    if (motion_allowed && motion_start_steps <= 0) activate_motion();

    while (true) {
      if (motion_pending() && level_steps >= motion_start_steps) {
        activate_motion();
      }
      TripletGrads grads = TripletGrads::zeros(imgs[0].width, imgs[0].height);
      const LossBreakdown bd =
          total_loss(imgs, k_level, params, w_level, opts, &grads);
      sol.trace.push_back({level, steps_used, bd});
      if (!std::isfinite(bd.total)) {
        diverged = true;
        sol.diagnostics += "non-finite total at level " +
                           std::to_string(level) + ", step " +
                           std::to_string(steps_used) + "; ";
        params = last_finite;
        break;
      }
      last_finite = params;
      if (bd.total < best_total) {
        best_total = bd.total;
        best_params = params;
      }
      level_losses.push_back(bd.total);
      if (bd.total < cfg.absolute_exit) {
        if (motion_pending()) {
          activate_motion();
          continue;
        }
        if (level == 0) finest_done_by_convergence = true;
        break;
      }
      const size_t n = level_losses.size();
      if (n > static_cast<size_t>(cfg.convergence_window)) {
        const double a = level_losses[n - 1];
        const double b = level_losses[n - 1 - cfg.convergence_window];
        const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
        if (std::abs(a - b) / denom < cfg.convergence_rtol) {
          if (motion_pending()) {
            activate_motion();
            continue;
          }
          if (level == 0) finest_done_by_convergence = true;
          break;
        }
      }
      if (level_steps >= level_cap) break;

      bool step_failed = false;
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<double> flat = detail::flatten_group(params, groups[gi]);
        const std::vector<double> gflat = detail::flatten_group(grads, groups[gi]);
        try {
          adam_step(flat, gflat, states[gi], detail::group_name(groups[gi]));
        } catch (const std::invalid_argument& e) {
          diverged = true;
          step_failed = true;
          sol.diagnostics += std::string(e.what()) + "; ";
          break;
        }
        detail::unflatten_group(flat, groups[gi], &params);
      }
      if (step_failed) {
        params = last_finite;
        break;
      }
      ++level_steps;
      ++steps_used;
    }

    if (diverged) break;
    if (level == 0) {
      params = best_params;
    } else {
      params = detail::promote_params(params, cfg.motion_coarse_enabled);
    }
  }

  // A divergence abort at a coarse level still returns finest-shaped state.
  while (params.width() < problem.images[0].width) {
    params = detail::promote_params(params, cfg.motion_coarse_enabled);
  }

  sol.params = params;
  sol.iterations_used = steps_used;
  if (diverged) {
    sol.status = OptStatus::kDiverged;
  } else if (finest_done_by_convergence) {
    sol.status = OptStatus::kConverged;
  } else {
    sol.status = OptStatus::kBudgetExhausted;
  }

  // Final evaluation of the returned state, re-logged as the last trace row.
  {
    ObjectiveOptions opts;
    opts.occlusion_radius = cfg.occlusion_radius;
    opts.occlusion_tau = cfg.occlusion_tau;
    opts.motion_enabled = true;
    sol.final_loss = total_loss(problem.images, problem.intrinsics, sol.params,
                                problem.weights, opts);
    sol.trace.push_back({0, steps_used, sol.final_loss});
  }
  for (int f = 0; f < 3; ++f) {
    sol.depths[f] = depth_from_logits(sol.params.depth_logits[f]);
  }
  sol.fields = materialize_fields(sol.params);
  for (int d = 0; d < kFieldCount; ++d) {
    sol.poses[d] = PoseSE3{exp_so3(sol.params.motions[d].r0),
                           sol.params.motions[d].t0};
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Sequence chaining

enum class ChainMode {
  kNaive = 0,    // compose relative poses as estimated
  kRescale = 1,  // normalize each triplet's translation by the accumulated
                 // overlap depth-scale ratio before composing
};

struct ChainResult {
  Trajectory trajectory;  // camera-to-world per frame, timestamp = frame index
  // ratio[k] = median over shared-frame pixels of triplet k+1 depth over
  // triplet k depth; 1.0 means the two solutions agree on scale.
  std::vector<double> scale_ratios;
  std::string diagnostics;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) {
    throw std::invalid_argument("median: empty input");
  }
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

}  // namespace detail

// Stitches per-triplet solutions over a frame sequence into one trajectory.
// Solution k must be centered on frame k+1 (consecutive triplets overlap by
// two frames). Field 0 of the first triplet fixes frame 0 at the world
// origin; field 2 (middle -> next) of each triplet appends one step. The
// overlap depth-scale ratios are always reported; kRescale additionally
// divides each triplet's step translation by the accumulated ratio so a
// scale-drifting solution is re-expressed in the first triplet's scale.
inline ChainResult chain_sequence(const std::vector<TripletSolution>& sols,
                                  ChainMode mode = ChainMode::kNaive) {
  if (sols.empty()) {
    throw std::invalid_argument("chain_sequence: no solutions");
  }
  for (size_t i = 0; i < sols.size(); ++i) {
    if (sols[i].center_index != sols[0].center_index + static_cast<int>(i)) {
      throw std::invalid_argument(
          "chain_sequence: solutions must overlap consecutively (center " +
          std::to_string(sols[i].center_index) + " does not follow " +
          std::to_string(sols[0].center_index + static_cast<int>(i) - 1) + ")");
    }
    if (i > 0 && !sols[i].depths[0].same_shape(sols[0].depths[0])) {
      throw std::invalid_argument("chain_sequence: depth shape mismatch");
    }
  }

  ChainResult out;
  for (size_t k = 0; k + 1 < sols.size(); ++k) {
    // Triplet k covers frames (c-1, c, c+1) locally (0, 1, 2); triplet k+1
    // covers (c, c+1, c+2). Shared frames pair local (1, 2) with (0, 1).
    std::vector<double> ratios;
    ratios.reserve(2 * sols[k].depths[1].pixel_count());
    for (int pairidx = 0; pairidx < 2; ++pairidx) {
      const ImageGrid& old_d = sols[k].depths[pairidx + 1];
      const ImageGrid& new_d = sols[k + 1].depths[pairidx];
      for (size_t i = 0; i < old_d.data.size(); ++i) {
        ratios.push_back(new_d.data[i] / old_d.data[i]);
      }
    }
    out.scale_ratios.push_back(detail::median(std::move(ratios)));
  }

  // Frame 0 at the origin; camera-to-world via C_a = C_b * P_ab.
  std::vector<PoseSE3> cams;
  cams.push_back(PoseSE3{});  // frame 0
  double cumulative = 1.0;
  {
    PoseSE3 p10 = sols[0].poses[0];  // middle -> previous
    cams.push_back(pose_compose(p10, cams[0]));
  }
  for (size_t k = 0; k < sols.size(); ++k) {
    if (k > 0 && mode == ChainMode::kRescale) {
      cumulative *= out.scale_ratios[k - 1];
    }
    PoseSE3 step = sols[k].poses[2];  // middle -> next
    if (mode == ChainMode::kRescale && cumulative != 1.0) {
      step.t /= cumulative;
    }
    cams.push_back(pose_compose(pose_inverse(step), cams.back()));
  }
  for (size_t i = 0; i < cams.size(); ++i) {
    out.trajectory.append(static_cast<double>(i), cams[i]);
  }
  for (size_t k = 0; k < out.scale_ratios.size(); ++k) {
    out.diagnostics += "overlap " + std::to_string(k) + "->" +
                       std::to_string(k + 1) + " depth scale ratio " +
                       std::to_string(out.scale_ratios[k]) + "\n";
  }
  return out;
}

}  // namespace dvopt
