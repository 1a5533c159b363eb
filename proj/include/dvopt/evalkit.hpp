#ifndef DVOPT_EVALKIT_HPP
#define DVOPT_EVALKIT_HPP

// Trajectory and depth evaluation: closed-form similarity alignment of
// estimated to reference trajectories, absolute trajectory error, relative
// pose error over fixed segment lengths, and the seven-column depth error
// suite with optional median rescaling.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/image.hpp"
#include "dvopt/se3.hpp"
#include "dvopt/trajectory.hpp"

namespace dvopt {

struct Sim3 {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

struct AlignmentResult {
  Sim3 sim;
  bool degenerate = false;
  double condition = 0.0;  // ratio of second to first singular value
  std::string diagnostic;
};

// Least-squares similarity transform minimizing sum ||s R p_est + t - p_gt||^2
// over corresponding positions. Trajectories are associated by index.
inline AlignmentResult umeyama_align(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("umeyama_align: trajectory sizes differ (" +
                                std::to_string(est.size()) + " vs " +
                                std::to_string(gt.size()) + ")");
  }
  const std::size_t n = est.size();
  if (n < 3) {
    throw std::invalid_argument("umeyama_align: need at least 3 poses, got " +
                                std::to_string(n));
  }

  Eigen::Vector3d mean_p = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_q = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mean_p += est[i].pose.t;
    mean_q += gt[i].pose.t;
  }
  mean_p /= static_cast<double>(n);
  mean_q /= static_cast<double>(n);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d dp = est[i].pose.t - mean_p;
    const Eigen::Vector3d dq = gt[i].pose.t - mean_q;
    cov += dq * dp.transpose();
    var_p += dp.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_p /= static_cast<double>(n);

  AlignmentResult out;
  if (var_p <= 0.0) {
    out.degenerate = true;
    out.condition = 0.0;
    out.diagnostic =
        "estimated positions are all identical; scale and rotation are "
        "unconstrained, returning identity alignment with centroid shift";
    out.sim.scale = 1.0;
    out.sim.rotation = Eigen::Matrix3d::Identity();
    out.sim.translation = mean_q - mean_p;
    return out;
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  Eigen::Matrix3d s_fix = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s_fix(2, 2) = -1.0;
  }
  out.sim.rotation = svd.matrixU() * s_fix * svd.matrixV().transpose();
  out.sim.scale = (sv(0) * s_fix(0, 0) + sv(1) * s_fix(1, 1) + sv(2) * s_fix(2, 2)) / var_p;
  out.sim.translation = mean_q - out.sim.scale * (out.sim.rotation * mean_p);

  out.condition = sv(0) > 0.0 ? sv(1) / sv(0) : 0.0;
  if (out.condition < 1e-9) {
    out.degenerate = true;
    out.diagnostic =
        "positions are collinear to numerical precision (singular value "
        "ratio " +
        std::to_string(out.condition) + "); rotation about the line is unconstrained";
  }
  if (out.sim.scale <= 0.0) {
    out.degenerate = true;
    if (!out.diagnostic.empty()) out.diagnostic += "; ";
    out.diagnostic += "recovered non-positive scale " + std::to_string(out.sim.scale);
  }
  return out;
}

inline double ate_rmse(const Trajectory& est, const Trajectory& gt, const Sim3& alignment) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("ate_rmse: trajectory sizes differ");
  }
  if (est.empty()) {
    throw std::invalid_argument("ate_rmse: empty trajectories");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    acc += (alignment.apply(est[i].pose.t) - gt[i].pose.t).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(est.size()));
}

inline const std::vector<double>& default_rpe_lengths() {
  static const std::vector<double> lengths{7.0, 14.0, 21.0, 28.0, 35.0};
  return lengths;
}

struct RpeSegmentStats {
  double length = 0.0;      // requested segment length, meters
  int count = 0;            // segments found
  double t_err_pct = 0.0;   // mean translation error, percent of distance
  double r_err_deg = 0.0;   // mean rotation error, degrees per 100 m
};

struct RpeResult {
  std::vector<RpeSegmentStats> per_length;
  int total_segments = 0;
  double avg_t_err_pct = 0.0;  // mean over all segments of all lengths
  double avg_r_err_deg = 0.0;
  std::string diagnostic;      // non-empty when no segment fits

  bool empty() const { return total_segments == 0; }
};

// Relative pose error over fixed-length segments. For every start index the
// end index is the first pose whose reference arc length exceeds the segment
// length. Errors are normalized by the actual reference arc length covered.
inline RpeResult segment_rpe(const Trajectory& est, const Trajectory& gt,
                             const std::vector<double>& lengths = default_rpe_lengths()) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("segment_rpe: trajectory sizes differ (" +
                                std::to_string(est.size()) + " vs " +
                                std::to_string(gt.size()) + ")");
  }
  if (lengths.empty()) {
    throw std::invalid_argument("segment_rpe: no segment lengths given");
  }
  for (double l : lengths) {
    if (!(l > 0.0)) {
      throw std::invalid_argument("segment_rpe: segment lengths must be positive");
    }
  }
  const std::size_t n = est.size();

  std::vector<double> arc(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    arc[i] = arc[i - 1] + (gt[i].pose.t - gt[i - 1].pose.t).norm();
  }

  RpeResult out;
  double t_sum = 0.0, r_sum = 0.0;
  for (double len : lengths) {
    RpeSegmentStats stats;
    stats.length = len;
    double t_acc = 0.0, r_acc = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      std::size_t j = i + 1;
      while (j < n && arc[j] - arc[i] < len) ++j;
      if (j >= n) break;  // later starts only have shorter remainders
      const double dist = arc[j] - arc[i];
      if (!(dist > 0.0)) continue;

      const PoseSE3 rel_gt = pose_compose(gt[i].pose, pose_inverse(gt[j].pose));
      const PoseSE3 rel_est = pose_compose(est[i].pose, pose_inverse(est[j].pose));
      const PoseSE3 err = pose_compose(rel_est, pose_inverse(rel_gt));

      const double t_err = err.t.norm();
      const double r_err = rotation_angle(err.R);

      t_acc += 100.0 * t_err / dist;
      r_acc += (r_err * 180.0 / M_PI) / dist * 100.0;
      ++stats.count;
    }
    if (stats.count > 0) {
      stats.t_err_pct = t_acc / stats.count;
      stats.r_err_deg = r_acc / stats.count;
      t_sum += t_acc;
      r_sum += r_acc;
      out.total_segments += stats.count;
    }
    out.per_length.push_back(stats);
  }

  if (out.total_segments > 0) {
    out.avg_t_err_pct = t_sum / out.total_segments;
    out.avg_r_err_deg = r_sum / out.total_segments;
  } else {
    double arc_total = arc.empty() ? 0.0 : arc.back();
    out.diagnostic = "trajectory covers " + std::to_string(arc_total) +
                     " m, shorter than the smallest segment length " +
                     std::to_string(*std::min_element(lengths.begin(), lengths.end())) +
                     " m; no segments evaluated";
  }
  return out;
}

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double rms_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  int valid_count = 0;
  double median_ratio = 1.0;  // factor applied to pred when median scaling is on
};

inline constexpr double kDepthEvalMin = 0.1;
inline constexpr double kDepthEvalMax = 80.0;

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) {
    throw std::invalid_argument("median of empty set");
  }
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + (mid - 1), v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

}  // namespace detail

// Depth error suite over pixels that are flagged valid and whose reference
// depth lies in [0.1, 80] m. Predictions must be positive there.
inline DepthMetrics depth_metrics(const ImageGrid& pred, const ImageGrid& gt,
                                  const ImageGrid& valid_mask, bool median_scale) {
  require_same_shape(pred, gt, "depth_metrics: pred vs gt");
  require_same_shape(pred, valid_mask, "depth_metrics: pred vs mask");
  if (pred.channels != 1) {
    throw std::invalid_argument("depth_metrics: expected single-channel grids");
  }

  std::vector<double> ps, gs;
  ps.reserve(pred.data.size());
  gs.reserve(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (valid_mask.data[i] < 0.5) continue;
    const double g = gt.data[i];
    if (!(g >= kDepthEvalMin) || !(g <= kDepthEvalMax)) continue;
    const double p = pred.data[i];
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument(
          "depth_metrics: non-positive or non-finite prediction at linear index " +
          std::to_string(i));
    }
    ps.push_back(p);
    gs.push_back(g);
  }
  if (ps.empty()) {
    throw std::invalid_argument("depth_metrics: no valid pixels to evaluate");
  }

  DepthMetrics m;
  m.valid_count = static_cast<int>(ps.size());
  if (median_scale) {
    m.median_ratio = detail::median_of(gs) / detail::median_of(ps);
    for (auto& p : ps) p *= m.median_ratio;
  }

  double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, sq_log = 0.0;
  int d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double p = ps[i], g = gs[i];
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  const double n = static_cast<double>(ps.size());
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rms = std::sqrt(sq / n);
  m.rms_log = std::sqrt(sq_log / n);
  m.delta1 = d1 / n;
  m.delta2 = d2 / n;
  m.delta3 = d3 / n;
  return m;
}

inline DepthMetrics depth_metrics(const ImageGrid& pred, const ImageGrid& gt,
                                  bool median_scale) {
  ImageGrid all_valid(gt.width, gt.height, 1, 1.0);
  return depth_metrics(pred, gt, all_valid, median_scale);
}

}  // namespace dvopt

#endif  // DVOPT_EVALKIT_HPP
