#ifndef DVOPT_GRADCHECK_HPP
#define DVOPT_GRADCHECK_HPP

// Central finite-difference validation of every analytic gradient in the
// library. Each named check builds random instances, evaluates the closed
// form against a central difference with an adaptive step, and reports the
// worst relative error. The registry is shared by the test suite and the
// command-line `grad-check` command. A corruption knob perturbs one analytic
// value per instance so the harness can demonstrate that it catches wrong
// gradients.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dvopt/attention.hpp"
#include "dvopt/depth.hpp"
#include "dvopt/geometry.hpp"
#include "dvopt/losses.hpp"
#include "dvopt/objective.hpp"
#include "dvopt/rng.hpp"
#include "dvopt/strfmt.hpp"

namespace dvopt {

struct GradCheckOptions {
  std::uint64_t seed = 2026;
  int configs = 120;        // random instances per check
  double rel_tol = 1e-4;    // relative mismatch above this fails a probe
  double abs_floor = 1e-7;  // absolute mismatch below this never fails
  double corrupt = 0.0;     // nonzero: scale one analytic value per instance
};

struct GradCheckReport {
  std::string name;
  int instances = 0;
  int probes = 0;
  int failures = 0;
  double max_rel_err = 0.0;
  std::string worst;  // description of the worst probe

  bool pass() const { return failures == 0 && probes > 0; }
};

namespace detail {

// Compares analytic values against finite differences for one check,
// applying the corruption knob to the first probe of every instance.
class ProbeTracker {
 public:
  ProbeTracker(GradCheckReport* rep, const GradCheckOptions* opts)
      : rep_(rep), opts_(opts) {}

  void begin_instance() {
    first_ = true;
    ++rep_->instances;
  }

  void probe(double analytic, double fd, const std::string& what) {
    if (opts_->corrupt != 0.0 && first_) {
      analytic = analytic * (1.0 + opts_->corrupt) + opts_->corrupt;
    }
    first_ = false;
    // Both sides negligible: nothing to compare.
    if (std::abs(analytic) < 1e-6 && std::abs(fd) < 1e-4) return;
    ++rep_->probes;
    const double rel = std::abs(analytic - fd) /
                       std::max(std::max(std::abs(analytic), std::abs(fd)), 1e-12);
    if (rel > rep_->max_rel_err) {
      rep_->max_rel_err = rel;
      rep_->worst = what + ": analytic=" + format_g17(analytic) +
                    " fd=" + format_g17(fd);
    }
    if (rel > opts_->rel_tol && std::abs(analytic - fd) > opts_->abs_floor) {
      ++rep_->failures;
    }
  }

 private:
  GradCheckReport* rep_;
  const GradCheckOptions* opts_;
  bool first_ = true;
};

// Central difference of a scalar function of one entry, adaptive step.
template <typename F>
double fd_central(double* slot, double step_scale, F&& eval) {
  const double orig = *slot;
  const double h = step_scale * std::max(1.0, std::abs(orig));
  *slot = orig + h;
  const double fp = eval();
  *slot = orig - h;
  const double fm = eval();
  *slot = orig;
  return (fp - fm) / (2.0 * h);
}

inline ImageGrid random_grid(Rng& rng, int w, int h, int c, double lo, double hi) {
  ImageGrid g(w, h, c);
  for (auto& v : g.data) v = rng.uniform(lo, hi);
  return g;
}

inline ImageGrid random_support(Rng& rng, int w, int h, double keep = 0.8) {
  ImageGrid g(w, h, 1);
  for (auto& v : g.data) v = rng.uniform() < keep ? 1.0 : 0.0;
  return g;
}

// Uniform values kept at least `gap` away from the matching entry of `ref`.
inline ImageGrid random_grid_away_from(Rng& rng, const ImageGrid& ref, double gap,
                                       double lo, double hi) {
  ImageGrid g(ref.width, ref.height, ref.channels);
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    double v = rng.uniform(lo, hi);
    if (std::abs(v - ref.data[i]) < gap) {
      v = ref.data[i] + (v >= ref.data[i] ? gap : -gap);
    }
    g.data[i] = v;
  }
  return g;
}

}  // namespace detail

using GradCheckFn = std::function<GradCheckReport(const GradCheckOptions&)>;

// ---------------------------------------------------------------------------
// Individual checks

inline GradCheckReport check_photometric_l1(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "photometric_l1";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1001));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    const int c = rng.uniform_int(1, 3);
    ImageGrid target = detail::random_grid(rng, w, h, c, 0.0, 1.0);
    // Keep |target - warped| away from the absolute-value kink so the
    // difference quotient stays on one side.
    ImageGrid warped = detail::random_grid_away_from(rng, target, 0.02, 0.0, 1.0);
    ImageGrid support = detail::random_support(rng, w, h);
    auto res = photometric_l1(target, warped, support);
    if (res.empty) continue;
    ImageGrid d_warped(w, h, c);
    photometric_l1_vjp(target, warped, support, res.support, 1.0, &d_warped);
    auto eval = [&]() { return photometric_l1(target, warped, support).value; };
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(warped.data.size()) - 1));
      const double fd = detail::fd_central(&warped.data[i], 1e-5, eval);
      tracker.probe(d_warped.data[i], fd, rep.name + " warped[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_ssim(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "ssim";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1002));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(4, 9), h = rng.uniform_int(4, 9);
    const int c = rng.uniform_int(1, 3);
    ImageGrid a = detail::random_grid(rng, w, h, c, 0.0, 1.0);
    ImageGrid b = detail::random_grid(rng, w, h, c, 0.0, 1.0);
    ImageGrid mask = detail::random_support(rng, w, h, 0.95);
    auto res = ssim_loss(a, b, mask);
    if (res.empty || res.windows == 0) continue;
    ImageGrid d_b(w, h, c);
    ssim_loss_vjp(a, b, mask, res.windows, 1.0, &d_b);
    auto eval = [&]() { return ssim_loss(a, b, mask).value; };
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(b.data.size()) - 1));
      const double fd = detail::fd_central(&b.data[i], 1e-5, eval);
      tracker.probe(d_b.data[i], fd, rep.name + " b[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_smoothness_depth(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "smoothness_depth";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1003));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    ImageGrid depth = detail::random_grid(rng, w, h, 1, 0.5, 5.0);
    ImageGrid image = detail::random_grid(rng, w, h, 3, 0.0, 1.0);
    ImageGrid d_depth(w, h, 1);
    smoothness_loss_vjp(depth, image, 1.0, &d_depth);
    auto eval = [&]() { return smoothness_loss(depth, image); };
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(depth.data.size()) - 1));
      const double fd = detail::fd_central(&depth.data[i], 1e-5, eval);
      tracker.probe(d_depth.data[i], fd, rep.name + " depth[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_smoothness_motion(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "smoothness_motion";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1004));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    ImageGrid field = detail::random_grid(rng, w, h, 3, -0.5, 0.5);
    ImageGrid image = detail::random_grid(rng, w, h, 3, 0.0, 1.0);
    ImageGrid d_field(w, h, 3);
    for (int ch = 0; ch < 3; ++ch) {
      smoothness_raw_vjp(field, ch, image, 1.0, &d_field);
    }
    auto eval = [&]() {
      double s = 0.0;
      for (int ch = 0; ch < 3; ++ch) s += smoothness_raw(field, ch, image);
      return s;
    };
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(field.data.size()) - 1));
      const double fd = detail::fd_central(&field.data[i], 1e-5, eval);
      tracker.probe(d_field.data[i], fd, rep.name + " field[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_scale_consistency(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "scale_consistency";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1005));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    ImageGrid projected = detail::random_grid(rng, w, h, 1, 1.0, 6.0);
    // Keep the two depths apart so the absolute value stays one-sided.
    ImageGrid sampled = detail::random_grid_away_from(rng, projected, 0.05, 1.0, 6.0);
    ImageGrid support = detail::random_support(rng, w, h);
    auto res = scale_consistency_loss(projected, sampled, support);
    if (res.empty) continue;
    ImageGrid d_projected(w, h, 1), d_sampled(w, h, 1);
    scale_consistency_vjp(projected, sampled, support, res.support, 1.0,
                          &d_projected, &d_sampled);
    auto eval = [&]() { return scale_consistency_loss(projected, sampled, support).value; };
    for (int probe = 0; probe < 2; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(projected.data.size()) - 1));
      const double fdp = detail::fd_central(&projected.data[i], 1e-5, eval);
      tracker.probe(d_projected.data[i], fdp, rep.name + " projected[" + std::to_string(i) + "]");
      const double fds = detail::fd_central(&sampled.data[i], 1e-5, eval);
      tracker.probe(d_sampled.data[i], fds, rep.name + " sampled[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_cycle_translation(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "cycle_translation";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1006));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(4, 8), h = rng.uniform_int(4, 8);
    MotionField field_ab(w, h);
    for (int i = 0; i < 3; ++i) field_ab.r0[i] = 0.2 * rng.normal();
    ImageGrid tf_ab = detail::random_grid(rng, w, h, 3, -0.4, 0.4);
    ImageGrid tf_ba = detail::random_grid(rng, w, h, 3, -0.4, 0.4);
    // Sample coordinates stay inside the grid and clear of cell boundaries
    // so bilinear weights are differentiable along the probe.
    ImageGrid coords(w, h, 2);
    for (std::size_t i = 0; i < coords.pixel_count(); ++i) {
      auto pick = [&](int n) {
        double v = rng.uniform(0.2, n - 1.2);
        const double frac = v - std::floor(v);
        if (frac < 0.02) v += 0.02;
        if (frac > 0.98) v -= 0.02;
        return v;
      };
      coords.data[2 * i] = pick(w);
      coords.data[2 * i + 1] = pick(h);
    }
    ImageGrid support = detail::random_support(rng, w, h);
    auto res = cycle_translation_residual(field_ab, tf_ab, tf_ba, coords, support);
    if (res.empty) continue;
    ImageGrid d_tf_ab(w, h, 3), d_tf_ba(w, h, 3), d_coords(w, h, 2);
    Eigen::Vector3d d_r0 = Eigen::Vector3d::Zero();
    cycle_translation_vjp(field_ab, tf_ab, tf_ba, coords, support, res.support,
                          1.0, &d_tf_ab, &d_tf_ba, &d_coords, &d_r0);
    auto eval = [&]() {
      return cycle_translation_residual(field_ab, tf_ab, tf_ba, coords, support).value;
    };
    for (int probe = 0; probe < 2; ++probe) {
      std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(tf_ab.data.size()) - 1));
      tracker.probe(d_tf_ab.data[i], detail::fd_central(&tf_ab.data[i], 1e-5, eval),
                    rep.name + " tf_ab[" + std::to_string(i) + "]");
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(tf_ba.data.size()) - 1));
      tracker.probe(d_tf_ba.data[i], detail::fd_central(&tf_ba.data[i], 1e-5, eval),
                    rep.name + " tf_ba[" + std::to_string(i) + "]");
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(coords.data.size()) - 1));
      tracker.probe(d_coords.data[i], detail::fd_central(&coords.data[i], 1e-5, eval),
                    rep.name + " coords[" + std::to_string(i) + "]");
    }
    const int axis = rng.uniform_int(0, 2);
    tracker.probe(d_r0[axis], detail::fd_central(&field_ab.r0[axis], 1e-5, eval),
                  rep.name + " r0[" + std::to_string(axis) + "]");
  }
  return rep;
}

inline GradCheckReport check_cycle_rotation(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "cycle_rotation";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1007));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    MotionField fab(2, 2), fba(2, 2);
    for (int i = 0; i < 3; ++i) {
      fab.r0[i] = 0.5 * rng.normal();
      fba.r0[i] = 0.5 * rng.normal();
    }
    Eigen::Vector3d d_ab = Eigen::Vector3d::Zero(), d_ba = Eigen::Vector3d::Zero();
    cycle_rotation_vjp(fab, fba, 1.0, &d_ab, &d_ba);
    auto eval = [&]() { return cycle_rotation_residual(fab, fba); };
    for (int axis = 0; axis < 3; ++axis) {
      tracker.probe(d_ab[axis], detail::fd_central(&fab.r0[axis], 1e-5, eval),
                    rep.name + " r0_ab[" + std::to_string(axis) + "]");
      tracker.probe(d_ba[axis], detail::fd_central(&fba.r0[axis], 1e-5, eval),
                    rep.name + " r0_ba[" + std::to_string(axis) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_residual_regularizer(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "residual_regularizer";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1008));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    MotionField f(w, h);
    for (auto& v : f.delta_t.data) {
      // Keep residual translations away from the L1 kink at zero.
      v = rng.uniform(0.02, 0.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    for (auto& v : f.m.data) v = rng.uniform(0.05, 0.95);
    const double lambda = rng.uniform(0.2, 2.0);
    const double gate_w = rng.uniform(0.2, 2.0);
    MotionFieldGrads g(f);
    residual_regularizer_vjp(f, lambda, gate_w, 1.0, &g);
    auto eval = [&]() { return residual_regularizer(f, lambda, gate_w); };
    for (int probe = 0; probe < 3; ++probe) {
      std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(f.delta_t.data.size()) - 1));
      tracker.probe(g.d_delta_t.data[i], detail::fd_central(&f.delta_t.data[i], 1e-5, eval),
                    rep.name + " delta_t[" + std::to_string(i) + "]");
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(f.m.data.size()) - 1));
      tracker.probe(g.d_m.data[i], detail::fd_central(&f.m.data[i], 1e-5, eval),
                    rep.name + " m[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_translation_field(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "translation_field";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x1009));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 6), h = rng.uniform_int(3, 6);
    MotionField f(w, h);
    for (int i = 0; i < 3; ++i) f.t0[i] = rng.normal();
    for (auto& v : f.delta_t.data) v = rng.normal();
    for (auto& v : f.m.data) v = rng.uniform();
    ImageGrid dir = detail::random_grid(rng, w, h, 3, -1.0, 1.0);
    auto eval = [&]() {
      const ImageGrid t = translation_field(f);
      double s = 0.0;
      for (std::size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * dir.data[i];
      return s;
    };
    MotionFieldGrads g(f);
    translation_field_vjp(f, dir, &g);
    for (int axis = 0; axis < 3; ++axis) {
      tracker.probe(g.d_t0[axis], detail::fd_central(&f.t0[axis], 1e-5, eval),
                    rep.name + " t0[" + std::to_string(axis) + "]");
    }
    for (int probe = 0; probe < 2; ++probe) {
      std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(f.delta_t.data.size()) - 1));
      tracker.probe(g.d_delta_t.data[i], detail::fd_central(&f.delta_t.data[i], 1e-5, eval),
                    rep.name + " delta_t[" + std::to_string(i) + "]");
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(f.m.data.size()) - 1));
      tracker.probe(g.d_m.data[i], detail::fd_central(&f.m.data[i], 1e-5, eval),
                    rep.name + " m[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_bilinear_sampler(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "bilinear_sampler";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x100a));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = rng.uniform_int(3, 8), h = rng.uniform_int(3, 8);
    const int c = rng.uniform_int(1, 3);
    ImageGrid g = detail::random_grid(rng, w, h, c, -1.0, 1.0);
    std::vector<double> dir(static_cast<std::size_t>(c));
    for (auto& v : dir) v = rng.normal();
    // Clear of cell boundaries and the outer border.
    double uv[2];
    auto pick = [&](int n) {
      double v = rng.uniform(0.1, n - 1.1);
      const double frac = v - std::floor(v);
      if (frac < 0.02) v += 0.02;
      if (frac > 0.98) v -= 0.02;
      return v;
    };
    uv[0] = pick(w);
    uv[1] = pick(h);
    auto eval = [&]() {
      const BilinearCtx ctx = bilinear_ctx(w, h, uv[0], uv[1]);
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        s += dir[static_cast<std::size_t>(ch)] * bilinear_value(g, ctx, ch);
      }
      return s;
    };
    const BilinearCtx ctx = bilinear_ctx(w, h, uv[0], uv[1]);
    double an_u = 0.0, an_v = 0.0;
    ImageGrid d_grid(w, h, c);
    for (int ch = 0; ch < c; ++ch) {
      double du, dv;
      bilinear_spatial_grad(g, ctx, ch, &du, &dv);
      an_u += dir[static_cast<std::size_t>(ch)] * du;
      an_v += dir[static_cast<std::size_t>(ch)] * dv;
      bilinear_scatter(d_grid, ctx, ch, dir[static_cast<std::size_t>(ch)]);
    }
    tracker.probe(an_u, detail::fd_central(&uv[0], 1e-5, eval), rep.name + " u");
    tracker.probe(an_v, detail::fd_central(&uv[1], 1e-5, eval), rep.name + " v");
    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(g.data.size()) - 1));
      tracker.probe(d_grid.data[i], detail::fd_central(&g.data[i], 1e-5, eval),
                    rep.name + " grid[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_warp_projection(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "warp_projection";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x100b));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    const int w = 8, h = 8;
    const Intrinsics k{14.0 + 4.0 * rng.uniform(), 14.0 + 4.0 * rng.uniform(),
                       (w - 1) / 2.0, (h - 1) / 2.0};
    const auto rays = ray_table(w, h, k);
    ImageGrid depth = detail::random_grid(rng, w, h, 1, 3.0, 5.0);
    Eigen::Vector3d omega, t0;
    for (int i = 0; i < 3; ++i) {
      omega[i] = 0.02 * rng.normal();
      t0[i] = 0.05 * rng.normal();
    }
    const bool per_pixel = inst % 2 == 1;
    ImageGrid tfield(w, h, 3);
    for (std::size_t i = 0; i < tfield.pixel_count(); ++i) {
      for (int ch = 0; ch < 3; ++ch) {
        tfield.data[3 * i + ch] = t0[ch] + 0.01 * rng.normal();
      }
    }
    ImageGrid d_coords = detail::random_grid(rng, w, h, 2, -1.0, 1.0);
    ImageGrid d_depth_out = detail::random_grid(rng, w, h, 1, -1.0, 1.0);

    auto run = [&]() {
      return project_depth(depth, rays, exp_so3(omega), t0,
                           per_pixel ? &tfield : nullptr, k, w, h);
    };
    const WarpPass base = run();
    // Restrict the scalar to pixels whose projection sits well inside the
    // valid region, so perturbations cannot flip validity and jump the value.
    // The upstream gradients outside that set are zeroed to match.
    std::vector<char> safe(base.valid.size(), 0);
    std::size_t safe_count = 0;
    for (std::size_t i = 0; i < base.valid.size(); ++i) {
      if (!base.valid[i]) continue;
      const double u = base.coords.data[2 * i];
      const double v = base.coords.data[2 * i + 1];
      if (u > 0.5 && u < w - 1.5 && v > 0.5 && v < h - 1.5 &&
          base.depth_out.data[i] > 0.1) {
        safe[i] = 1;
        ++safe_count;
      } else {
        d_coords.data[2 * i] = 0.0;
        d_coords.data[2 * i + 1] = 0.0;
        d_depth_out.data[i] = 0.0;
      }
    }
    if (safe_count == 0) continue;
    auto eval = [&]() {
      const WarpPass p = run();
      double s = 0.0;
      for (std::size_t i = 0; i < p.valid.size(); ++i) {
        if (!safe[i]) continue;
        s += d_coords.data[2 * i] * p.coords.data[2 * i] +
             d_coords.data[2 * i + 1] * p.coords.data[2 * i + 1] +
             d_depth_out.data[i] * p.depth_out.data[i];
      }
      return s;
    };
    const WarpPassGrads grads =
        project_depth_vjp(base, depth, rays, omega, exp_so3(omega), t0,
                          per_pixel ? &tfield : nullptr, k, d_coords, &d_depth_out);
    for (int axis = 0; axis < 3; ++axis) {
      tracker.probe(grads.d_omega[axis], detail::fd_central(&omega[axis], 1e-6, eval),
                    rep.name + " omega[" + std::to_string(axis) + "]");
      if (!per_pixel) {
        tracker.probe(grads.d_t0[axis], detail::fd_central(&t0[axis], 1e-6, eval),
                      rep.name + " t0[" + std::to_string(axis) + "]");
      }
    }
    for (int probe = 0; probe < 3; ++probe) {
      std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(depth.data.size()) - 1));
      tracker.probe(grads.d_depth.data[i], detail::fd_central(&depth.data[i], 1e-6, eval),
                    rep.name + " depth[" + std::to_string(i) + "]");
      if (per_pixel) {
        i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(tfield.data.size()) - 1));
        tracker.probe(grads.d_tfield.data[i], detail::fd_central(&tfield.data[i], 1e-6, eval),
                      rep.name + " tfield[" + std::to_string(i) + "]");
      }
    }
  }
  return rep;
}

inline GradCheckReport check_feature_refinement(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "feature_refinement";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x100c));
  int made = 0;
  int guard = 0;
  while (made < opts.configs && guard < opts.configs * 20) {
    ++guard;
    const int c = 4 * rng.uniform_int(1, 2);
    const int h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
    FeatureBlock f(c, h, w);
    for (auto& v : f.data) v = rng.normal();
    DeParams p(c, 4);
    p.randomize(rng, 0.4);
    auto fwd = de_forward(f, p);
    // Stay away from hidden-layer kinks and pooling ties, where a difference
    // quotient would straddle a non-smooth point.
    bool near_kink = false;
    for (double v : fwd.cache.hid_max) {
      if (std::abs(v) < 1e-3) near_kink = true;
    }
    for (double v : fwd.cache.hid_avg) {
      if (std::abs(v) < 1e-3) near_kink = true;
    }
    const int hw = h * w;
    for (int ch = 0; ch < c && !near_kink; ++ch) {
      double best = -1e300, second = -1e300;
      for (int i = 0; i < hw; ++i) {
        const double v = f.data[static_cast<std::size_t>(ch) * hw + i];
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      if (hw > 1 && best - second < 1e-3) near_kink = true;
    }
    for (int i = 0; i < hw && !near_kink; ++i) {
      double best = -1e300, second = -1e300;
      for (int ch = 0; ch < c; ++ch) {
        const double v = fwd.cache.refined[static_cast<std::size_t>(ch) * hw + i];
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      if (c > 1 && best - second < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    ++made;
    tracker.begin_instance();
    FeatureBlock dir(c, h, w);
    for (auto& v : dir.data) v = rng.normal();
    auto bwd = de_backward(fwd.cache, p, dir);
    auto eval_f = [&]() {
      auto r = de_forward(f, p);
      double s = 0.0;
      for (std::size_t i = 0; i < r.output.data.size(); ++i) {
        s += r.output.data[i] * dir.data[i];
      }
      return s;
    };
    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(f.data.size()) - 1));
      tracker.probe(bwd.d_input.data[i], detail::fd_central(&f.data[i], 1e-6, eval_f),
                    rep.name + " input[" + std::to_string(i) + "]");
    }
    auto flat = p.flatten();
    const auto gflat = bwd.d_params.flatten();
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(flat.size()) - 1));
      auto eval_p = [&]() {
        DeParams pp = p;
        pp.unflatten(flat);
        auto r = de_forward(f, pp);
        double s = 0.0;
        for (std::size_t j = 0; j < r.output.data.size(); ++j) {
          s += r.output.data[j] * dir.data[j];
        }
        return s;
      };
      tracker.probe(gflat[i], detail::fd_central(&flat[i], 1e-6, eval_p),
                    rep.name + " param[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

inline GradCheckReport check_softplus_depth(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "softplus_depth";
  detail::ProbeTracker tracker(&rep, &opts);
  Rng rng(hash_u64(opts.seed ^ 0x100d));
  for (int inst = 0; inst < opts.configs; ++inst) {
    tracker.begin_instance();
    double x = rng.uniform(-6.0, 6.0);
    auto eval = [&]() { return softplus(x); };
    tracker.probe(softplus_deriv(x), detail::fd_central(&x, 1e-6, eval),
                  rep.name + " scalar");
    // Chain through the grid mapping: d(sum depth)/d(logit).
    ImageGrid logits = detail::random_grid(rng, 3, 3, 1, -4.0, 4.0);
    const ImageGrid deriv = depth_logit_deriv(logits);
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, 8));
    auto eval_grid = [&]() {
      const ImageGrid d = depth_from_logits(logits);
      double s = 0.0;
      for (double v : d.data) s += v;
      return s;
    };
    tracker.probe(deriv.data[i], detail::fd_central(&logits.data[i], 1e-6, eval_grid),
                  rep.name + " grid[" + std::to_string(i) + "]");
  }
  return rep;
}

// Full objective: analytic gradient of the weighted total against finite
// differences on a small triplet, occlusion frozen at the base parameters.
inline GradCheckReport check_objective_total(const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = "objective_total";
  detail::ProbeTracker tracker(&rep, &opts);
  const int instances = std::max(2, opts.configs / 30);
  for (int inst = 0; inst < instances; ++inst) {
    tracker.begin_instance();
    Rng rng(hash_u64(opts.seed ^ (0x100e + static_cast<std::uint64_t>(inst))));
    const int w = 8, h = 8;
    std::array<ImageGrid, 3> images;
    for (auto& im : images) {
      im = ImageGrid(w, h, 3);
      for (auto& v : im.data) v = rng.uniform();
      for (int pass = 0; pass < 2; ++pass) {
        ImageGrid b(w, h, 3);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
              double sum = 0.0;
              int n = 0;
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  const int xx = x + dx, yy = y + dy;
                  if (xx >= 0 && xx < w && yy >= 0 && yy < h) {
                    sum += im.at(xx, yy, c);
                    ++n;
                  }
                }
              }
              b.at(x, y, c) = sum / n;
            }
          }
        }
        im = b;
      }
    }
    const Intrinsics k{8.0, 8.0, 3.5, 3.5};
    TripletParams params = TripletParams::init(w, h, 4.0);
    for (auto& g : params.depth_logits) {
      for (auto& v : g.data) v += 0.2 * rng.normal();
    }
    for (auto& m : params.motions) {
      for (int i = 0; i < 3; ++i) {
        m.r0[i] = 0.02 * rng.normal();
        m.t0[i] = 0.04 * rng.normal();
      }
      for (auto& v : m.delta_t.data) v = 0.01 * rng.normal();
      for (auto& v : m.gate_logits.data) v = -1.0 + 0.5 * rng.normal();
    }
    LossWeights weights;
    ObjectiveOptions oo;
    std::array<ImageGrid, 3> depths;
    for (int f = 0; f < 3; ++f) depths[f] = depth_from_logits(params.depth_logits[f]);
    std::array<OcclusionMask, 4> occ;
    for (int d = 0; d < 4; ++d) {
      const PoseSE3 p{exp_so3(params.motions[d].r0), params.motions[d].t0};
      occ[d] = occlusion_mask(depths[kFieldFrom[d]], depths[kFieldTo[d]], p, k);
    }
    oo.frozen_occlusion = &occ;

    TripletGrads grads = TripletGrads::zeros(w, h);
    total_loss(images, k, params, weights, oo, &grads);
    auto eval = [&]() { return total_loss(images, k, params, weights, oo).total; };
    // A global parameter moves every warp coordinate, so some probe windows
    // inevitably straddle an absolute-value kink or a bilinear cell edge.
    // Two difference quotients at different steps agree to O(h^2) on smooth
    // stretches and disagree grossly across a kink; the latter are excluded,
    // matching the away-from-kinks scope of the tolerance.
    auto fd_probe = [&](double* slot, double analytic, const std::string& what) {
      const double fd1 = detail::fd_central(slot, 1e-6, eval);
      const double fd2 = detail::fd_central(slot, 2.5e-7, eval);
      const double gap = std::abs(fd1 - fd2);
      if (gap > 1e-6 && gap > 1e-3 * std::max(std::abs(fd1), std::abs(fd2))) {
        return;  // kink inside the window
      }
      tracker.probe(analytic, fd2, what);
    };

    for (int f = 0; f < 3; ++f) {
      for (int probe = 0; probe < 2; ++probe) {
        const std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(params.depth_logits[f].data.size()) - 1));
        fd_probe(&params.depth_logits[f].data[i], grads.d_depth_logits[f].data[i],
                 rep.name + " depth_logits[" + std::to_string(f) + "][" + std::to_string(i) + "]");
      }
    }
    for (int d = 0; d < 4; ++d) {
      const int axis = rng.uniform_int(0, 2);
      fd_probe(&params.motions[d].r0[axis], grads.d_motions[d].d_r0[axis],
               rep.name + " r0[" + std::to_string(d) + "][" + std::to_string(axis) + "]");
      fd_probe(&params.motions[d].t0[axis], grads.d_motions[d].d_t0[axis],
               rep.name + " t0[" + std::to_string(d) + "][" + std::to_string(axis) + "]");
      std::size_t i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(params.motions[d].delta_t.data.size()) - 1));
      fd_probe(&params.motions[d].delta_t.data[i], grads.d_motions[d].d_delta_t.data[i],
               rep.name + " delta_t[" + std::to_string(d) + "][" + std::to_string(i) + "]");
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(params.motions[d].gate_logits.data.size()) - 1));
      fd_probe(&params.motions[d].gate_logits.data[i], grads.d_motions[d].d_gate_logits.data[i],
               rep.name + " gate_logits[" + std::to_string(d) + "][" + std::to_string(i) + "]");
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Registry

inline const std::vector<std::pair<std::string, GradCheckFn>>& gradient_check_registry() {
  static const std::vector<std::pair<std::string, GradCheckFn>> registry = {
      {"photometric_l1", check_photometric_l1},
      {"ssim", check_ssim},
      {"smoothness_depth", check_smoothness_depth},
      {"smoothness_motion", check_smoothness_motion},
      {"scale_consistency", check_scale_consistency},
      {"cycle_translation", check_cycle_translation},
      {"cycle_rotation", check_cycle_rotation},
      {"residual_regularizer", check_residual_regularizer},
      {"translation_field", check_translation_field},
      {"bilinear_sampler", check_bilinear_sampler},
      {"warp_projection", check_warp_projection},
      {"feature_refinement", check_feature_refinement},
      {"softplus_depth", check_softplus_depth},
      {"objective_total", check_objective_total},
  };
  return registry;
}

inline std::vector<GradCheckReport> run_all_gradient_checks(const GradCheckOptions& opts) {
  std::vector<GradCheckReport> reports;
  for (const auto& [name, fn] : gradient_check_registry()) {
    reports.push_back(fn(opts));
  }
  return reports;
}

}  // namespace dvopt

#endif  // DVOPT_GRADCHECK_HPP
