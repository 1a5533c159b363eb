// Geometric occlusion detection against the brute-force z-buffer reference.
#include <gtest/gtest.h>

#include <dvopt/occlusion.hpp>
#include <dvopt/rng.hpp>

using namespace dvopt;

namespace {

struct TwoPlaneScene {
  ImageGrid d_a{32, 32, 1};
  ImageGrid d_b{32, 32, 1};
  PoseSE3 p_ab;
};

// Two fronto-parallel planes: a near vertical strip in front of a far
// backdrop, seen from two laterally displaced cameras, with exact
// closed-form depth in both frames. Strip edges sit on pixel-square
// boundaries and the near plane's pixel shift is near-integer, so the
// reference's square splat footprints and the point-sampled depth maps
// classify every boundary column identically; the occlusion bands
// themselves span several pixels and are fully randomized.
TwoPlaneScene make_two_plane_scene(uint64_t seed, const Intrinsics& k) {
  Rng rng(seed);
  TwoPlaneScene s;
  const double zn = rng.uniform(1.8, 2.8);
  const double zf = rng.uniform(5.0, 9.0);
  const int ca0 = static_cast<int>(rng.uniform_int(8, 13));
  const int ca1 = static_cast<int>(rng.uniform_int(18, 23));
  const double x0 = (ca0 - 0.5 - k.cx) / k.fx * zn;
  const double x1 = (ca1 + 0.5 - k.cx) / k.fx * zn;
  const double mag = rng.uniform_int(2, 4) + rng.uniform(-0.1, 0.1);
  const double shift_px = (rng.uniform() < 0.5 ? -mag : mag);
  const double tx = shift_px * zn / k.fx;
  const Eigen::Vector3d cam_b(tx, 0.0, 0.0);
  s.p_ab = PoseSE3{Eigen::Matrix3d::Identity(), -cam_b};
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double rx = (x - k.cx) / k.fx;
      const double wa = rx * zn;
      s.d_a.at(x, y) = (wa >= x0 && wa <= x1) ? zn : zf;
      const double wb = cam_b.x() + rx * zn;
      s.d_b.at(x, y) = (wb >= x0 && wb <= x1) ? zn : zf;
    }
  }
  return s;
}

int count_visible(const OcclusionMask& m) {
  int n = 0;
  for (double v : m.mask.data) n += v > 0.5 ? 1 : 0;
  return n;
}

}  // namespace

TEST(OcclusionMaskTest, IdentityPoseSmoothDepthAllVisible) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  // Constant depth round-trips exactly, so every pixel stays in bounds.
  const ImageGrid flat(32, 32, 1, 4.0);
  EXPECT_EQ(count_visible(occlusion_mask(flat, flat, PoseSE3{}, k)), 32 * 32);
  // A sloped map adds one-ulp landing drift at the border, which the strict
  // in-bounds rule may mask out; the interior must still be fully visible.
  ImageGrid d(32, 32, 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) d.at(x, y) = 4.0 + 0.02 * x + 0.01 * y;
  const OcclusionMask m = occlusion_mask(d, d, PoseSE3{}, k);
  for (int y = 1; y < 31; ++y) {
    for (int x = 1; x < 31; ++x) {
      EXPECT_EQ(m.mask.at(x, y), 1.0) << x << "," << y;
    }
  }
}

TEST(OcclusionMaskTest, SinglePlaneLateralTranslationInteriorVisible) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  const ImageGrid d_a(32, 32, 1, 3.0);
  const ImageGrid d_b(32, 32, 1, 3.0);
  const PoseSE3 p{Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.1, 0, 0)};
  const OcclusionMask m = occlusion_mask(d_a, d_b, p, k);
  // One surface cannot self-occlude; only pixels projected off the grid drop.
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 30; ++x) {
      EXPECT_EQ(m.mask.at(x, y), 1.0) << x << "," << y;
    }
  }
}

TEST(OcclusionMaskTest, CanonicalTwoPlaneSceneEqualsZBufferReference) {
  // Near plane at 2 m covering the left half, far backdrop at 6 m, lateral
  // pose translation 0.2 m, 32x32.
  const Intrinsics k{40.0, 40.0, 15.5, 15.5};
  const double zn = 2.0, zf = 6.0;
  ImageGrid d_a(32, 32, 1), d_b(32, 32, 1);
  const PoseSE3 p_ab{Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.2, 0, 0)};
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double rx = (x - k.cx) / k.fx;
      d_a.at(x, y) = (rx * zn < 0.0) ? zn : zf;
      d_b.at(x, y) = (-0.2 + rx * zn < 0.0) ? zn : zf;
    }
  }
  const OcclusionMask fast = occlusion_mask(d_a, d_b, p_ab, k, 1, 0.01);
  const OcclusionMask slow = z_buffer_oracle(d_a, d_b, p_ab, k, 4, 1, 0.01);
  ASSERT_EQ(fast.mask.data.size(), slow.mask.data.size());
  for (size_t i = 0; i < fast.mask.data.size(); ++i) {
    ASSERT_EQ(fast.mask.data[i], slow.mask.data[i]) << "pixel " << i;
  }
  // The strip slides over the backdrop; a multi-column band must be occluded.
  EXPECT_LE(count_visible(fast), 32 * 32 - 96);
}

TEST(OcclusionMaskTest, HundredRandomTwoPlaneScenesEqualZBufferReference) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  int occlusion_rich = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const TwoPlaneScene s = make_two_plane_scene(seed, k);
    const OcclusionMask fast = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.01);
    const OcclusionMask slow =
        z_buffer_oracle(s.d_a, s.d_b, s.p_ab, k, 4, 1, 0.01);
    for (size_t i = 0; i < fast.mask.data.size(); ++i) {
      ASSERT_EQ(fast.mask.data[i], slow.mask.data[i])
          << "seed " << seed << " pixel " << i;
    }
    if (count_visible(fast) <= 32 * 32 - 16) ++occlusion_rich;
  }
  // The family must actually exercise occlusion, not agree vacuously.
  EXPECT_EQ(occlusion_rich, 100);
}

TEST(OcclusionMaskTest, StrictZOrderAtRadiusZeroForgivenAtRadiusOne) {
  // The near strip shifts exactly one pixel, so the first far column lands
  // on a buffer cell owned by the near plane: occluded under the strict
  // same-cell rule, visible once the neighborhood may vouch for it.
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  const double zn = 2.0, zf = 8.0, tx = zn / k.fx;
  ImageGrid d_a(32, 32, 1), d_b(32, 32, 1);
  const PoseSE3 p_ab{Eigen::Matrix3d::Identity(), Eigen::Vector3d(tx, 0, 0)};
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double rx = (x - k.cx) / k.fx;
      d_a.at(x, y) = (rx * zn < 0.0) ? zn : zf;
      d_b.at(x, y) = (rx * zn - tx < 0.0) ? zn : zf;
    }
  }
  for (const int radius : {0, 1}) {
    const OcclusionMask fast = occlusion_mask(d_a, d_b, p_ab, k, radius, 0.01);
    const OcclusionMask slow =
        z_buffer_oracle(d_a, d_b, p_ab, k, 4, radius, 0.01);
    for (size_t i = 0; i < fast.mask.data.size(); ++i) {
      ASSERT_EQ(fast.mask.data[i], slow.mask.data[i]) << "radius " << radius;
    }
    EXPECT_EQ(fast.mask.at(16, 16), radius == 0 ? 0.0 : 1.0);
  }
}

TEST(OcclusionMaskTest, VisibleSetGrowsWithTolerance) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const TwoPlaneScene s = make_two_plane_scene(seed, k);
    const OcclusionMask tight = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.01);
    const OcclusionMask mid = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.05);
    const OcclusionMask loose = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.9);
    for (size_t i = 0; i < tight.mask.data.size(); ++i) {
      EXPECT_LE(tight.mask.data[i], mid.mask.data[i]);
      EXPECT_LE(mid.mask.data[i], loose.mask.data[i]);
    }
  }
}

TEST(OcclusionMaskTest, VisibleSetGrowsWithNeighborhoodRadius) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const TwoPlaneScene s = make_two_plane_scene(seed, k);
    const OcclusionMask r0 = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 0, 0.01);
    const OcclusionMask r1 = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.01);
    const OcclusionMask r2 = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 2, 0.01);
    for (size_t i = 0; i < r0.mask.data.size(); ++i) {
      EXPECT_LE(r0.mask.data[i], r1.mask.data[i]);
      EXPECT_LE(r1.mask.data[i], r2.mask.data[i]);
    }
  }
}

TEST(OcclusionMaskTest, MirroredSceneGivesMirroredMask) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const TwoPlaneScene s = make_two_plane_scene(seed, k);
    TwoPlaneScene m;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        m.d_a.at(x, y) = s.d_a.at(31 - x, y);
        m.d_b.at(x, y) = s.d_b.at(31 - x, y);
      }
    }
    m.p_ab = PoseSE3{Eigen::Matrix3d::Identity(),
                     Eigen::Vector3d(-s.p_ab.t.x(), 0.0, 0.0)};
    const OcclusionMask base = occlusion_mask(s.d_a, s.d_b, s.p_ab, k, 1, 0.01);
    const OcclusionMask mirr = occlusion_mask(m.d_a, m.d_b, m.p_ab, k, 1, 0.01);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        ASSERT_EQ(mirr.mask.at(x, y), base.mask.at(31 - x, y))
            << "seed " << seed << " " << x << "," << y;
      }
    }
  }
}

TEST(OcclusionMaskTest, RejectsBadParameters) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  const ImageGrid d(8, 8, 1, 2.0);
  EXPECT_THROW(occlusion_mask(d, d, PoseSE3{}, k, -1, 0.01),
               std::invalid_argument);
  EXPECT_THROW(occlusion_mask(d, d, PoseSE3{}, k, 1, 0.0),
               std::invalid_argument);
  EXPECT_THROW(occlusion_mask(d, d, PoseSE3{}, k, 1, -0.5),
               std::invalid_argument);
}

TEST(ZBufferReferenceTest, RejectsLargeGridsAndCoarseSupersampling) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  const ImageGrid big(65, 65, 1, 2.0);
  const ImageGrid ok(8, 8, 1, 2.0);
  EXPECT_THROW(z_buffer_oracle(big, big, PoseSE3{}, k, 4), std::invalid_argument);
  EXPECT_THROW(z_buffer_oracle(ok, ok, PoseSE3{}, k, 3), std::invalid_argument);
}

TEST(ZBufferReferenceTest, DeterministicUnderRerun) {
  const Intrinsics k{32.0, 32.0, 15.5, 15.5};
  const TwoPlaneScene s = make_two_plane_scene(42, k);
  const OcclusionMask a = z_buffer_oracle(s.d_a, s.d_b, s.p_ab, k, 4, 1, 0.01);
  const OcclusionMask b = z_buffer_oracle(s.d_a, s.d_b, s.p_ab, k, 4, 1, 0.01);
  EXPECT_EQ(a.mask.data, b.mask.data);
}
