// Feature refinement block: forward conventions, equivariance, validation.
#include <gtest/gtest.h>

#include <cmath>

#include <dvopt/attention.hpp>

using namespace dvopt;

namespace {

FeatureBlock random_block(Rng& rng, int c, int h, int w, double scale = 1.0) {
  FeatureBlock f(c, h, w);
  for (auto& v : f.data) v = scale * rng.normal();
  return f;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(AttentionTest, ZeroParametersQuarterTheInput) {
  Rng rng(31);
  const FeatureBlock f = random_block(rng, 8, 5, 6);
  const DeParams p(8, 4);  // all weights zero
  const DeForwardResult r = de_forward(f, p);
  ASSERT_TRUE(r.output.same_shape(f));
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    EXPECT_NEAR(r.output.data[i], 0.25 * f.data[i], 1e-15);
  }
}

TEST(AttentionTest, SinglePixelSingleChannelClosedForm) {
  FeatureBlock f(1, 1, 1);
  const double v = 0.8;
  f.data[0] = v;
  DeParams p(1, 1);
  p.w1 = {0.5};
  p.b1 = {0.1};
  p.w2 = {-0.7};
  p.b2 = {0.3};
  for (auto& cw : p.conv_w) cw = 0.01;
  p.conv_b = -0.2;

  // Max and average pools both see the single value; the shared two-layer
  // mapping runs once per pooled descriptor and the results add.
  const double hidden = std::max(0.0, p.b1[0] + p.w1[0] * v);
  const double chan_pre = 2.0 * p.b2[0] + 2.0 * p.w2[0] * hidden;
  const double a_c = logistic(chan_pre);
  const double refined = a_c * v;
  // Reflection collapses every tap onto the one pixel; both stacked maps
  // equal the refined value.
  const double conv_pre = p.conv_b + 0.01 * 49.0 * 2.0 * refined;
  const double a_s = logistic(conv_pre);

  const DeForwardResult r = de_forward(f, p);
  EXPECT_NEAR(r.output.data[0], a_s * refined, 1e-14);
  EXPECT_NEAR(r.cache.chan_att[0], a_c, 1e-14);
  EXPECT_NEAR(r.cache.spatial_att[0], a_s, 1e-14);
}

TEST(AttentionTest, AttentionStaysInsideUnitInterval) {
  Rng rng(32);
  const FeatureBlock f = random_block(rng, 4, 6, 5);
  DeParams p(4, 2);
  p.randomize(rng, 0.3);
  const DeForwardResult r = de_forward(f, p);
  for (double a : r.cache.chan_att) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  for (double a : r.cache.spatial_att) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    EXPECT_LE(std::abs(r.output.data[i]), std::abs(f.data[i]));
  }
}

TEST(AttentionTest, ChannelPermutationEquivariance) {
  Rng rng(33);
  const int c = 6, h = 4, w = 3;
  const FeatureBlock f = random_block(rng, c, h, w);
  DeParams p(c, 2);
  p.randomize(rng, 0.4);

  const std::array<int, 6> perm = {3, 0, 5, 1, 4, 2};  // dst <- src
  FeatureBlock fp(c, h, w);
  DeParams pp(c, 2);
  pp.conv_w = p.conv_w;
  pp.conv_b = p.conv_b;
  pp.b1 = p.b1;
  for (int dst = 0; dst < c; ++dst) {
    const int src = perm[dst];
    for (int i = 0; i < h * w; ++i) {
      fp.data[static_cast<std::size_t>(dst) * h * w + i] =
          f.data[static_cast<std::size_t>(src) * h * w + i];
    }
    pp.b2[dst] = p.b2[src];
    for (int j = 0; j < p.hidden; ++j) {
      pp.w1[static_cast<std::size_t>(j) * c + dst] =
          p.w1[static_cast<std::size_t>(j) * c + src];
      pp.w2[static_cast<std::size_t>(dst) * p.hidden + j] =
          p.w2[static_cast<std::size_t>(src) * p.hidden + j];
    }
  }

  const DeForwardResult base = de_forward(f, p);
  const DeForwardResult permuted = de_forward(fp, pp);
  for (int dst = 0; dst < c; ++dst) {
    const int src = perm[dst];
    for (int i = 0; i < h * w; ++i) {
      EXPECT_NEAR(
          permuted.output.data[static_cast<std::size_t>(dst) * h * w + i],
          base.output.data[static_cast<std::size_t>(src) * h * w + i], 1e-12);
    }
  }
}

TEST(AttentionTest, FlattenUnflattenRoundTrip) {
  Rng rng(34);
  DeParams p(8, 4);
  p.randomize(rng);
  const std::vector<double> flat = p.flatten();
  ASSERT_EQ(flat.size(), p.param_count());
  DeParams q(8, 4);
  q.unflatten(flat);
  EXPECT_EQ(q.w1, p.w1);
  EXPECT_EQ(q.b1, p.b1);
  EXPECT_EQ(q.w2, p.w2);
  EXPECT_EQ(q.b2, p.b2);
  EXPECT_EQ(q.conv_w, p.conv_w);
  EXPECT_EQ(q.conv_b, p.conv_b);
  std::vector<double> wrong(flat.size() + 1, 0.0);
  EXPECT_THROW(q.unflatten(wrong), std::invalid_argument);
}

TEST(AttentionTest, ConstructionAndShapeValidation) {
  EXPECT_THROW(DeParams(6, 4), std::invalid_argument);   // 6 % 4 != 0
  EXPECT_THROW(DeParams(0, 1), std::invalid_argument);
  EXPECT_THROW(FeatureBlock(0, 2, 2), std::invalid_argument);
  Rng rng(35);
  const FeatureBlock f = random_block(rng, 4, 3, 3);
  DeParams wrong_c(8, 4);
  EXPECT_THROW(de_forward(f, wrong_c), std::invalid_argument);
  FeatureBlock malformed = f;
  malformed.data.pop_back();
  DeParams p(4, 2);
  EXPECT_THROW(de_forward(malformed, p), std::invalid_argument);
}

TEST(AttentionTest, BackwardRejectsStaleCacheAndBadShapes) {
  Rng rng(36);
  const FeatureBlock f = random_block(rng, 4, 4, 4);
  DeParams p(4, 2);
  p.randomize(rng, 0.3);
  const DeForwardResult r = de_forward(f, p);
  FeatureBlock upstream(4, 4, 4, 1.0);
  // Sanity: matching parameters succeed.
  const DeBackwardResult ok = de_backward(r.cache, p, upstream);
  EXPECT_TRUE(ok.d_input.same_shape(f));
  DeParams tweaked = p;
  tweaked.conv_b += 1.0;
  EXPECT_THROW(de_backward(r.cache, tweaked, upstream), std::invalid_argument);
  FeatureBlock bad_shape(4, 4, 3, 1.0);
  EXPECT_THROW(de_backward(r.cache, p, bad_shape), std::invalid_argument);
}

TEST(AttentionTest, MaxPoolRoutingFollowsArgmax) {
  // Raising the non-max entries below the max must leave pooled values, and
  // hence the whole forward result, unchanged.
  FeatureBlock f(2, 2, 2);
  f.data = {0.9, 0.1, 0.2, 0.3,   // channel 0: max 0.9 at (0,0)
            0.4, 0.8, 0.0, 0.2};  // channel 1: max 0.8 at (0,1)
  DeParams p(2, 1);
  Rng rng(37);
  p.randomize(rng, 0.4);
  const DeForwardResult r = de_forward(f, p);
  EXPECT_EQ(r.cache.pool_argmax[0], 0);
  EXPECT_EQ(r.cache.pool_argmax[1], 1);
  EXPECT_DOUBLE_EQ(r.cache.pool_max[0], 0.9);
  EXPECT_DOUBLE_EQ(r.cache.pool_max[1], 0.8);
  EXPECT_DOUBLE_EQ(r.cache.pool_avg[0], (0.9 + 0.1 + 0.2 + 0.3) / 4.0);
}
