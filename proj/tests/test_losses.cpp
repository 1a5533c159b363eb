// Loss terms: hand-computable values, closed forms, and assembly invariants.
#include <gtest/gtest.h>

#include <cmath>

#include <dvopt/objective.hpp>
#include <dvopt/rng.hpp>

using namespace dvopt;

namespace {

ImageGrid ones_grid(int w, int h) { return ImageGrid(w, h, 1, 1.0); }

ImageGrid random_grid(Rng& rng, int w, int h, int c, double lo = 0.0,
                      double hi = 1.0) {
  ImageGrid g(w, h, c);
  for (auto& v : g.data) v = rng.uniform(lo, hi);
  return g;
}

ImageGrid identity_coords(int w, int h) {
  ImageGrid coords(w, h, 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      coords.at(x, y, 0) = x;
      coords.at(x, y, 1) = y;
    }
  }
  return coords;
}

}  // namespace

TEST(PhotometricTest, HandValueAndExactMatch) {
  ImageGrid target(2, 1, 1), warped(2, 1, 1);
  target.data = {0.2, 0.2};
  warped.data = {0.5, 0.5};
  const PhotometricResult r = photometric_l1(target, warped, ones_grid(2, 1));
  EXPECT_DOUBLE_EQ(r.value, 0.3);
  EXPECT_EQ(r.support, 2u);
  EXPECT_FALSE(r.empty);
  const PhotometricResult zero = photometric_l1(target, target, ones_grid(2, 1));
  EXPECT_EQ(zero.value, 0.0);
}

TEST(PhotometricTest, EmptySupportFlagged) {
  ImageGrid target(2, 2, 1, 0.4), warped(2, 2, 1, 0.9);
  const PhotometricResult r = photometric_l1(target, warped, ImageGrid(2, 2, 1));
  EXPECT_TRUE(r.empty);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.support, 0u);
}

TEST(PhotometricTest, SubgradientVanishesAtKink) {
  Rng rng(5);
  const ImageGrid target = random_grid(rng, 4, 4, 2);
  ImageGrid d_warped(4, 4, 2);
  photometric_l1_vjp(target, target, ones_grid(4, 4), 16, 1.0, &d_warped);
  for (double v : d_warped.data) EXPECT_EQ(v, 0.0);
}

TEST(PhotometricTest, MaskingNeverGrowsSupport) {
  Rng rng(6);
  const ImageGrid target = random_grid(rng, 6, 6, 3);
  const ImageGrid warped = random_grid(rng, 6, 6, 3);
  ImageGrid support = ones_grid(6, 6);
  size_t prev = photometric_l1(target, warped, support).support;
  for (int drop = 0; drop < 36; drop += 7) {
    support.data[drop] = 0.0;
    const size_t cur = photometric_l1(target, warped, support).support;
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(SsimTest, IdenticalImagesZeroLoss) {
  Rng rng(7);
  const ImageGrid a = random_grid(rng, 8, 8, 3);
  const SsimResult r = ssim_loss(a, a, ones_grid(8, 8));
  EXPECT_FALSE(r.empty);
  EXPECT_EQ(r.windows, 36u);
  EXPECT_NEAR(r.value, 0.0, 1e-12);
  const ImageGrid c(8, 8, 1, 0.5);
  EXPECT_NEAR(ssim_loss(c, c, ones_grid(8, 8)).value, 0.0, 1e-12);
}

TEST(SsimTest, MatchesIndependentDirectFormula) {
  Rng rng(8);
  const int w = 9, h = 7, ch = 2;
  const ImageGrid a = random_grid(rng, w, h, ch);
  const ImageGrid b = random_grid(rng, w, h, ch);
  ImageGrid mask = ones_grid(w, h);
  mask.at(2, 3) = 0.0;
  mask.at(6, 1) = 0.0;
  const SsimResult r = ssim_loss(a, b, mask);

  // Direct per-window evaluation with population statistics.
  double sum = 0.0;
  size_t windows = 0;
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) all &= mask.at(x + dx, y + dy) == 1.0;
      if (!all) continue;
      ++windows;
      for (int c = 0; c < ch; ++c) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double va = a.at(x + dx, y + dy, c);
            const double vb = b.at(x + dx, y + dy, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double mu_a = sa / 9.0, mu_b = sb / 9.0;
        const double var_a = saa / 9.0 - mu_a * mu_a;
        const double var_b = sbb / 9.0 - mu_b * mu_b;
        const double cov = sab / 9.0 - mu_a * mu_b;
        const double s = ((2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kSsimC1) *
                          (var_a + var_b + kSsimC2));
        sum += (1.0 - s) * 0.5;
      }
    }
  }
  ASSERT_EQ(r.windows, windows);
  EXPECT_NEAR(r.value, sum / (static_cast<double>(windows) * ch), 1e-10);
}

TEST(SsimTest, TinyImagesAndFullMasksAreEmpty) {
  const ImageGrid tiny(2, 2, 1, 0.5);
  EXPECT_TRUE(ssim_loss(tiny, tiny, ones_grid(2, 2)).empty);
  const ImageGrid a(5, 5, 1, 0.5);
  EXPECT_TRUE(ssim_loss(a, a, ImageGrid(5, 5, 1)).empty);
}

TEST(SmoothnessTest, ConstantDepthIsZero) {
  Rng rng(9);
  const ImageGrid image = random_grid(rng, 6, 6, 3);
  EXPECT_EQ(smoothness_loss(ImageGrid(6, 6, 1, 7.3), image), 0.0);
}

TEST(SmoothnessTest, UnitRampCountsInteriorPixels) {
  // Depth x + 0.5 on a 2x3 grid has mean 1, so the normalized map keeps a
  // unit forward difference; under a uniform image each of the three
  // x-interior pixels contributes exactly 1.
  ImageGrid depth(2, 3, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 2; ++x) depth.at(x, y) = x + 0.5;
  const ImageGrid image(2, 3, 1, 0.25);
  EXPECT_DOUBLE_EQ(smoothness_loss(depth, image), 3.0);
}

TEST(SmoothnessTest, CoLocatedEdgeDiscountsByExpTwoG) {
  ImageGrid depth(2, 1, 1);
  depth.at(0, 0) = 0.5;
  depth.at(1, 0) = 1.5;
  const double g = 0.7;
  ImageGrid flat(2, 1, 1, 0.3);
  ImageGrid edge(2, 1, 1, 0.3);
  edge.at(1, 0) = 0.3 + g;
  const double base = smoothness_loss(depth, flat);
  const double damped = smoothness_loss(depth, edge);
  EXPECT_DOUBLE_EQ(base, 1.0);
  EXPECT_NEAR(damped / base, std::exp(-2.0 * g), 1e-12);
}

TEST(ScaleConsistencyTest, HandValues) {
  ImageGrid za(1, 1, 1, 2.0), zb(1, 1, 1, 1.0);
  const ScaleConsistencyResult r = scale_consistency_loss(za, zb, ones_grid(1, 1));
  EXPECT_DOUBLE_EQ(r.value, 1.0 / 3.0);
  EXPECT_EQ(scale_consistency_loss(zb, zb, ones_grid(1, 1)).value, 0.0);
  double prev = 0.0;
  for (const double k : {1.1, 2.0, 10.0}) {
    ImageGrid scaled(4, 4, 1, k * 3.0);
    const ImageGrid base(4, 4, 1, 3.0);
    const double v = scale_consistency_loss(scaled, base, ones_grid(4, 4)).value;
    EXPECT_NEAR(v, (k - 1.0) / (k + 1.0), 1e-15);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(ScaleConsistencyTest, NormalizedGapRangeAndScaleInvariance) {
  Rng rng(10);
  for (int i = 0; i < 100000; ++i) {
    const double za = std::exp(rng.uniform(-6.0, 6.0));
    const double zb = std::exp(rng.uniform(-6.0, 6.0));
    const double d = relative_depth_gap(za, zb);
    ASSERT_GE(d, 0.0);
    ASSERT_LT(d, 1.0);
    const double k = std::exp(rng.uniform(-6.0, 6.0));
    ASSERT_NEAR(relative_depth_gap(k * za, k * zb), d, 1e-12);
  }
  EXPECT_EQ(relative_depth_gap(3.7, 3.7), 0.0);
  // Scaling only one side away from agreement strictly increases the gap.
  EXPECT_GT(relative_depth_gap(1.5 * 2.0, 2.0), 0.0);
}

TEST(ScaleConsistencyTest, EmptySupportFlagged) {
  const ImageGrid z(3, 3, 1, 2.0);
  EXPECT_TRUE(scale_consistency_loss(z, z, ImageGrid(3, 3, 1)).empty);
}

TEST(CycleTest, ZeroMotionIsZero) {
  MotionField ab(4, 4), ba(4, 4);
  const double v = cycle_consistency_loss(ab, ba, identity_coords(4, 4),
                                          ones_grid(4, 4));
  EXPECT_EQ(v, 0.0);
}

TEST(CycleTest, EpsilonMismatchGivesEpsilonSquared) {
  const double eps = 1.0 / 1024.0;
  MotionField ab(4, 4), ba(4, 4);
  ab.t0 = Eigen::Vector3d(1.0, 0.0, 0.0);
  ba.t0 = Eigen::Vector3d(-1.0 + eps, 0.0, 0.0);
  const double v = cycle_consistency_loss(ab, ba, identity_coords(4, 4),
                                          ones_grid(4, 4));
  EXPECT_DOUBLE_EQ(v, eps * eps);
}

TEST(CycleTest, ExactInversePairIsZero) {
  MotionField ab(4, 4), ba(4, 4);
  ab.r0 = Eigen::Vector3d(0.2, -0.1, 0.3);
  ab.t0 = Eigen::Vector3d(0.4, -0.2, 0.7);
  ba.r0 = -ab.r0;
  ba.t0 = -(ab.rotation().transpose() * ab.t0);
  const double v = cycle_consistency_loss(ab, ba, identity_coords(4, 4),
                                          ones_grid(4, 4));
  EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(CycleTest, EmptySupportFlagged) {
  MotionField ab(3, 3), ba(3, 3);
  const CycleTranslationResult r = cycle_translation_residual(
      ab, translation_field(ab), translation_field(ba), identity_coords(3, 3),
      ImageGrid(3, 3, 1));
  EXPECT_TRUE(r.empty);
}

TEST(ResidualRegularizerTest, HandValues) {
  MotionField f(5, 4);
  Rng rng(11);
  for (auto& v : f.delta_t.data) v = rng.uniform(-1.0, 1.0);
  EXPECT_EQ(residual_regularizer(f, 1.0, 1.0), 0.0);  // gate closed
  for (auto& v : f.delta_t.data) v = 0.0;
  for (auto& v : f.m.data) v = 1.0;
  EXPECT_EQ(residual_regularizer(f, 1.0, 0.0), 0.0);  // nothing to gate
  for (size_t i = 0; i < f.m.pixel_count(); ++i) f.delta_t.data[3 * i] = 0.1;
  EXPECT_DOUBLE_EQ(residual_regularizer(f, 1.0, 1.0), 1.1);
  EXPECT_DOUBLE_EQ(residual_regularizer(f, 2.0, 0.5), 0.7);
}

TEST(MotionFieldTest, TranslationFieldMaterialization) {
  MotionField f(2, 1);
  f.t0 = Eigen::Vector3d(1.0, 2.0, 3.0);
  f.delta_t.data = {0.5, 0.0, -0.5, 10.0, 10.0, 10.0};
  f.m.data = {1.0, 0.25};
  const ImageGrid t = translation_field(f);
  EXPECT_DOUBLE_EQ(t.data[0], 1.5);
  EXPECT_DOUBLE_EQ(t.data[1], 2.0);
  EXPECT_DOUBLE_EQ(t.data[2], 2.5);
  EXPECT_DOUBLE_EQ(t.data[3], 3.5);
  EXPECT_DOUBLE_EQ(t.data[4], 4.5);
  EXPECT_DOUBLE_EQ(t.data[5], 5.5);
}

namespace {

// A random but structured triplet configuration for assembly tests.
struct TripletFixture {
  std::array<ImageGrid, 3> images;
  Intrinsics intr{8.0, 8.0, 3.5, 3.5};
  TripletParams params;

  explicit TripletFixture(uint64_t seed) : params(TripletParams::init(8, 8, 4.0)) {
    Rng rng(seed);
    for (int f = 0; f < 3; ++f) {
      images[f] = ImageGrid(8, 8, 1);
      for (auto& v : images[f].data) v = rng.uniform();
      for (auto& v : params.depth_logits[f].data) v += rng.uniform(-0.3, 0.3);
    }
    for (int d = 0; d < kFieldCount; ++d) {
      params.motions[d].t0 = Eigen::Vector3d(rng.uniform(-0.05, 0.05),
                                             rng.uniform(-0.05, 0.05),
                                             rng.uniform(-0.05, 0.05));
      params.motions[d].r0 = Eigen::Vector3d(rng.uniform(-0.02, 0.02),
                                             rng.uniform(-0.02, 0.02),
                                             rng.uniform(-0.02, 0.02));
      for (auto& v : params.motions[d].delta_t.data) v = rng.uniform(-0.02, 0.02);
      for (auto& v : params.motions[d].gate_logits.data) v = rng.uniform(-3.0, 1.0);
    }
  }
};

}  // namespace

TEST(TotalLossTest, BreakdownIsExactWeightedSum) {
  const TripletFixture fx(21);
  LossWeights w;
  w.photometric = 0.8;
  w.ssim = 0.2;
  w.smoothness = 0.03;
  w.scale_consistency = 0.4;
  w.cycle = 0.12;
  w.residual_reg = 0.02;
  const LossBreakdown b = total_loss(fx.images, fx.intr, fx.params, w,
                                     ObjectiveOptions{});
  const double recon = w.photometric * b.photometric + w.ssim * b.ssim +
                       w.smoothness * b.smoothness +
                       w.scale_consistency * b.scale_consistency +
                       w.cycle * b.cycle + w.residual_reg * b.residual_reg;
  EXPECT_NEAR(b.total, recon, 1e-12);
  EXPECT_GE(b.photometric, 0.0);
  EXPECT_GE(b.ssim, 0.0);
  EXPECT_GE(b.smoothness, 0.0);
  EXPECT_GE(b.scale_consistency, 0.0);
  EXPECT_GE(b.cycle, 0.0);
  EXPECT_GE(b.residual_reg, 0.0);
  EXPECT_GT(b.total, 0.0);
}

TEST(TotalLossTest, PhotometricOnlyWeightsCollapseTotal) {
  const TripletFixture fx(22);
  LossWeights w;
  w.photometric = 1.0;
  w.ssim = 0.0;
  w.smoothness = 0.0;
  w.scale_consistency = 0.0;
  w.cycle = 0.0;
  w.residual_reg = 0.0;
  const LossBreakdown b = total_loss(fx.images, fx.intr, fx.params, w,
                                     ObjectiveOptions{});
  EXPECT_EQ(b.total, b.photometric);
}

TEST(TotalLossTest, NegativeWeightsRejected) {
  const TripletFixture fx(23);
  LossWeights w;
  w.cycle = -0.1;
  EXPECT_THROW(
      total_loss(fx.images, fx.intr, fx.params, w, ObjectiveOptions{}),
      std::invalid_argument);
}

TEST(TotalLossTest, PerfectReconstructionHasNearZeroDataTerms) {
  // Static fronto-parallel plane at z = 2 seen by three cameras spaced so
  // that consecutive frames shift by exactly one pixel: bilinear sampling is
  // exact and the ground-truth configuration must explain the images.
  const int w = 16, h = 16;
  const Intrinsics intr{16.0, 16.0, 7.5, 7.5};
  const double z = 2.0, step = z / intr.fx;
  std::array<ImageGrid, 3> images;
  for (int f = 0; f < 3; ++f) {
    images[f] = ImageGrid(w, h, 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        images[f].at(x, y) = hash_to_unit(x + f, y, 99);
  }
  TripletParams params = TripletParams::init(w, h, 10.0);
  const double logit = softplus_inverse(z);
  for (int f = 0; f < 3; ++f)
    std::fill(params.depth_logits[f].data.begin(),
              params.depth_logits[f].data.end(), logit);
  // Camera-to-world translations t_i = (i*step, 0, 0); a->b pose translation
  // is t_a - t_b. Directed fields: 1->0, 0->1, 1->2, 2->1.
  const Eigen::Vector3d dx(step, 0.0, 0.0);
  params.motions[0].t0 = dx;
  params.motions[1].t0 = -dx;
  params.motions[2].t0 = -dx;
  params.motions[3].t0 = dx;
  for (int d = 0; d < kFieldCount; ++d)
    std::fill(params.motions[d].gate_logits.data.begin(),
              params.motions[d].gate_logits.data.end(), -40.0);
  const LossBreakdown b = total_loss(images, intr, params, LossWeights{},
                                     ObjectiveOptions{});
  EXPECT_LT(b.photometric, 1e-8);
  EXPECT_LT(b.scale_consistency, 1e-8);
  EXPECT_LT(b.cycle, 1e-8);
  EXPECT_FALSE(b.photometric_empty);
  EXPECT_FALSE(b.scale_empty);
  EXPECT_FALSE(b.cycle_empty);
}
