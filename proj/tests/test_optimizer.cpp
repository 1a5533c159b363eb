// Triplet optimizer: convergence statuses, staging, determinism, chaining.
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include <dvopt/optimizer.hpp>
#include <dvopt/rng.hpp>

using namespace dvopt;

namespace {

ImageGrid constant_color(int w, int h, double r, double g, double b) {
  ImageGrid img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  return img;
}

ImageGrid random_color(Rng& rng, int w, int h) {
  ImageGrid img(w, h, 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

// Smooth periodic texture sampled at a horizontal offset, so three frames
// related by a pure lateral camera step see consistent content.
ImageGrid shifted_texture(int w, int h, double shift) {
  ImageGrid img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = x + shift;
      img.at(x, y, 0) = 0.5 + 0.3 * std::sin(0.7 * u) * std::cos(0.5 * y);
      img.at(x, y, 1) = 0.5 + 0.25 * std::cos(0.4 * u + 0.3 * y);
      img.at(x, y, 2) = 0.5 + 0.2 * std::sin(0.3 * u + 0.9 * y);
    }
  }
  return img;
}

// Exact parameters for a fronto-parallel constant-depth scene under a pure
// lateral camera track: camera f sits at x = f * step, so the relative
// translation mapping frame a coordinates into frame b is x_a - x_b.
TripletParams exact_lateral_params(int w, int h, double depth, double step) {
  TripletParams p = TripletParams::init(w, h, 2.0 * depth);
  const Eigen::Vector3d dx(step, 0.0, 0.0);
  p.motions[0].t0 = dx;    // middle -> previous
  p.motions[1].t0 = -dx;   // previous -> middle
  p.motions[2].t0 = -dx;   // middle -> next
  p.motions[3].t0 = dx;    // next -> middle
  for (auto& m : p.motions) {
    std::fill(m.gate_logits.data.begin(), m.gate_logits.data.end(), -40.0);
  }
  return p;
}

TripletSolution plain_solution(int center, double depth, double camera_x_step) {
  TripletSolution s;
  s.center_index = center;
  for (auto& d : s.depths) d = ImageGrid(4, 4, 1, depth);
  const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
  // Camera k at world x = k * step: translation of a->b equals x_a - x_b.
  s.poses[0] = PoseSE3{eye, Eigen::Vector3d(camera_x_step, 0, 0)};
  s.poses[1] = PoseSE3{eye, Eigen::Vector3d(-camera_x_step, 0, 0)};
  s.poses[2] = PoseSE3{eye, Eigen::Vector3d(-camera_x_step, 0, 0)};
  s.poses[3] = PoseSE3{eye, Eigen::Vector3d(camera_x_step, 0, 0)};
  return s;
}

}  // namespace

TEST(OptimizerTest, ExactInitialGuessExitsWithoutIterating) {
  const int n = 12;
  const double z = 2.0, step = 0.125;
  TripletProblem prob;
  prob.images = {constant_color(n, n, 0.3, 0.6, 0.9),
                 constant_color(n, n, 0.3, 0.6, 0.9),
                 constant_color(n, n, 0.3, 0.6, 0.9)};
  prob.intrinsics = Intrinsics{12.0, 12.0, 5.5, 5.5};
  const TripletParams exact = exact_lateral_params(n, n, z, step);
  prob.initial = &exact;

  const TripletSolution sol = optimize_triplet(prob);
  EXPECT_EQ(sol.status, OptStatus::kConverged);
  EXPECT_EQ(sol.iterations_used, 0);
  EXPECT_LT(sol.final_loss.total, 1e-8);
  for (const TraceRow& row : sol.trace) EXPECT_EQ(row.iteration, 0);
  for (int f = 0; f < 3; ++f) {
    for (double d : sol.depths[f].data) EXPECT_DOUBLE_EQ(d, z);
  }
}

TEST(OptimizerTest, TinyBudgetReportsExhaustion) {
  Rng rng(41);
  TripletProblem prob;
  prob.images = {random_color(rng, 8, 8), random_color(rng, 8, 8),
                 random_color(rng, 8, 8)};
  prob.intrinsics = Intrinsics{8.0, 8.0, 3.5, 3.5};
  prob.config.pyramid_levels = 1;
  prob.config.iteration_budget = 3;

  const TripletSolution sol = optimize_triplet(prob);
  EXPECT_EQ(sol.status, OptStatus::kBudgetExhausted);
  EXPECT_EQ(sol.iterations_used, 3);
  EXPECT_GT(sol.final_loss.total, 1e-8);
}

TEST(OptimizerTest, ResidualMotionStaysFrozenDuringRigidPhase) {
  Rng rng(42);
  TripletProblem prob;
  prob.images = {random_color(rng, 8, 8), random_color(rng, 8, 8),
                 random_color(rng, 8, 8)};
  prob.intrinsics = Intrinsics{8.0, 8.0, 3.5, 3.5};
  prob.config.pyramid_levels = 1;
  prob.config.iteration_budget = 10;
  prob.config.motion_start_fraction = 0.5;

  const TripletSolution sol = optimize_triplet(prob);
  int rigid_rows = 0, motion_rows = 0;
  for (const TraceRow& row : sol.trace) {
    if (row.iteration < 5) {
      EXPECT_EQ(row.loss.residual_reg, 0.0);
      ++rigid_rows;
    } else {
      EXPECT_GT(row.loss.residual_reg, 0.0);
      ++motion_rows;
    }
  }
  EXPECT_EQ(rigid_rows, 5);
  EXPECT_GE(motion_rows, 2);
}

TEST(OptimizerTest, CoarseLevelsRunRigidOnly) {
  Rng rng(43);
  TripletProblem prob;
  prob.images = {random_color(rng, 12, 12), random_color(rng, 12, 12),
                 random_color(rng, 12, 12)};
  prob.intrinsics = Intrinsics{12.0, 12.0, 5.5, 5.5};
  prob.config.pyramid_levels = 2;
  prob.config.iteration_budget = 16;
  prob.config.motion_start_fraction = 0.0;  // finest level starts with motion

  const TripletSolution sol = optimize_triplet(prob);
  bool saw_coarse = false, saw_fine_motion = false;
  int last_level = prob.config.pyramid_levels;
  int last_iter = -1;
  for (size_t i = 0; i < sol.trace.size(); ++i) {
    const TraceRow& row = sol.trace[i];
    EXPECT_LE(row.level, last_level);
    EXPECT_GE(row.iteration, last_iter);
    last_level = std::min(last_level, row.level);
    last_iter = row.iteration;
    if (row.level > 0) {
      EXPECT_EQ(row.loss.residual_reg, 0.0);
      saw_coarse = true;
    } else if (row.loss.residual_reg > 0.0) {
      saw_fine_motion = true;
    }
  }
  EXPECT_TRUE(saw_coarse);
  EXPECT_TRUE(saw_fine_motion);
}

TEST(OptimizerTest, RepeatedRunsAreBitwiseIdentical) {
  auto run = [] {
    Rng rng(44);
    TripletProblem prob;
    prob.images = {random_color(rng, 12, 12), random_color(rng, 12, 12),
                   random_color(rng, 12, 12)};
    prob.intrinsics = Intrinsics{12.0, 12.0, 5.5, 5.5};
    prob.config.pyramid_levels = 2;
    prob.config.iteration_budget = 30;
    return optimize_triplet(prob);
  };
  const TripletSolution a = run();
  const TripletSolution b = run();
  EXPECT_EQ(a.iterations_used, b.iterations_used);
  EXPECT_EQ(a.status, b.status);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].level, b.trace[i].level);
    EXPECT_EQ(a.trace[i].iteration, b.trace[i].iteration);
    EXPECT_EQ(a.trace[i].loss.total, b.trace[i].loss.total);
  }
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(a.params.depth_logits[f].data, b.params.depth_logits[f].data);
  }
  for (int d = 0; d < kFieldCount; ++d) {
    EXPECT_EQ(a.params.motions[d].t0, b.params.motions[d].t0);
    EXPECT_EQ(a.params.motions[d].r0, b.params.motions[d].r0);
    EXPECT_EQ(a.params.motions[d].delta_t.data, b.params.motions[d].delta_t.data);
    EXPECT_EQ(a.params.motions[d].gate_logits.data,
              b.params.motions[d].gate_logits.data);
  }
}

TEST(OptimizerTest, LossDropsOnTexturedLateralScene) {
  const int n = 16;
  TripletProblem prob;
  prob.images = {shifted_texture(n, n, 0.0), shifted_texture(n, n, 1.0),
                 shifted_texture(n, n, 2.0)};
  prob.intrinsics = Intrinsics{16.0, 16.0, 7.5, 7.5};
  prob.config.pyramid_levels = 1;
  prob.config.iteration_budget = 150;
  prob.config.motion_start_fraction = 1.0;  // rigid model throughout
  prob.config.lr_pose_scale = 20.0;

  const TripletSolution sol = optimize_triplet(prob);
  ASSERT_FALSE(sol.trace.empty());
  const double first = sol.trace.front().loss.total;
  double best = first;
  for (const TraceRow& row : sol.trace) best = std::min(best, row.loss.total);
  EXPECT_GT(first, 0.01);
  EXPECT_LT(best, 0.7 * first);
  EXPECT_NE(sol.status, OptStatus::kDiverged);
}

TEST(OptimizerTest, ConfigValidationRejectsBadValues) {
  OptimizerConfig good;
  EXPECT_NO_THROW(good.validate());
  auto expect_throw = [](auto mutate) {
    OptimizerConfig cfg;
    mutate(cfg);
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
  };
  expect_throw([](OptimizerConfig& c) { c.pyramid_levels = 0; });
  expect_throw([](OptimizerConfig& c) { c.iteration_budget = 0; });
  expect_throw([](OptimizerConfig& c) { c.lr = 0.0; });
  expect_throw([](OptimizerConfig& c) { c.scene_scale_prior = -1.0; });
  expect_throw([](OptimizerConfig& c) { c.convergence_window = 0; });
  expect_throw([](OptimizerConfig& c) { c.motion_start_fraction = 1.5; });
}

TEST(OptimizerTest, ProblemValidationRejectsBadInputs) {
  Rng rng(45);
  TripletProblem gray;
  gray.images = {ImageGrid(4, 4, 1, 0.5), ImageGrid(4, 4, 1, 0.5),
                 ImageGrid(4, 4, 1, 0.5)};
  EXPECT_THROW(optimize_triplet(gray), std::invalid_argument);

  TripletProblem mixed;
  mixed.images = {random_color(rng, 4, 4), random_color(rng, 4, 4),
                  random_color(rng, 6, 4)};
  EXPECT_THROW(optimize_triplet(mixed), std::invalid_argument);

  TripletProblem nonfinite;
  nonfinite.images = {random_color(rng, 4, 4), random_color(rng, 4, 4),
                      random_color(rng, 4, 4)};
  nonfinite.images[1].at(2, 2, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(optimize_triplet(nonfinite), std::invalid_argument);

  TripletProblem wrong_init;
  wrong_init.images = {random_color(rng, 8, 8), random_color(rng, 8, 8),
                       random_color(rng, 8, 8)};
  const TripletParams small = TripletParams::init(4, 4, 10.0);
  wrong_init.initial = &small;
  EXPECT_THROW(optimize_triplet(wrong_init), std::invalid_argument);
}

TEST(ChainTest, NaiveComposesStepsAndReportsScaleRatios) {
  std::vector<TripletSolution> sols;
  sols.push_back(plain_solution(1, 2.0, 1.0));
  sols.push_back(plain_solution(2, 3.0, 1.0));

  const ChainResult r = chain_sequence(sols, ChainMode::kNaive);
  ASSERT_EQ(r.scale_ratios.size(), 1u);
  EXPECT_DOUBLE_EQ(r.scale_ratios[0], 1.5);
  ASSERT_EQ(r.trajectory.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(r.trajectory[i].timestamp, static_cast<double>(i));
    const Eigen::Vector3d expect(static_cast<double>(i), 0.0, 0.0);
    EXPECT_NEAR((r.trajectory[i].pose.t - expect).norm(), 0.0, 1e-12);
    EXPECT_NEAR(
        (r.trajectory[i].pose.R - Eigen::Matrix3d::Identity()).norm(), 0.0,
        1e-12);
  }
  EXPECT_NE(r.diagnostics.find("scale ratio"), std::string::npos);
}

TEST(ChainTest, RescaleDividesLaterStepsByAccumulatedRatio) {
  std::vector<TripletSolution> sols;
  sols.push_back(plain_solution(1, 2.0, 1.0));
  sols.push_back(plain_solution(2, 3.0, 1.0));

  const ChainResult r = chain_sequence(sols, ChainMode::kRescale);
  ASSERT_EQ(r.trajectory.size(), 4u);
  EXPECT_NEAR(r.trajectory[2].pose.t.x(), 2.0, 1e-12);
  // The second triplet reports depths 1.5x the first, so its unit step is
  // re-expressed in the first triplet's scale: 1 / 1.5.
  EXPECT_NEAR(r.trajectory[3].pose.t.x(), 2.0 + 1.0 / 1.5, 1e-12);
}

TEST(ChainTest, RejectsMalformedSequences) {
  EXPECT_THROW(chain_sequence({}), std::invalid_argument);

  std::vector<TripletSolution> gap;
  gap.push_back(plain_solution(1, 2.0, 1.0));
  gap.push_back(plain_solution(3, 2.0, 1.0));
  EXPECT_THROW(chain_sequence(gap), std::invalid_argument);

  std::vector<TripletSolution> mismatch;
  mismatch.push_back(plain_solution(1, 2.0, 1.0));
  mismatch.push_back(plain_solution(2, 2.0, 1.0));
  for (auto& d : mismatch[1].depths) d = ImageGrid(5, 4, 1, 2.0);
  EXPECT_THROW(chain_sequence(mismatch), std::invalid_argument);
}
