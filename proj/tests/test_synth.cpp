// Synthetic scene rendering: exact depths, ground-truth motion, scene files.
#include <gtest/gtest.h>

#include <cmath>

#include <dvopt/geometry.hpp>
#include <dvopt/occlusion.hpp>
#include <dvopt/synth.hpp>

using namespace dvopt;

namespace {

SceneSpec base_scene(int n) {
  SceneSpec s;
  s.width = n;
  s.height = n;
  s.intrinsics = Intrinsics{static_cast<double>(n), static_cast<double>(n),
                            0.5 * n - 0.5, 0.5 * n - 0.5};
  s.poses.push_back(PoseSE3{});
  return s;
}

PlaneSpec fronto_plane(double z, double s_min, double s_max, double t_half) {
  PlaneSpec p;
  p.point = Eigen::Vector3d(0.0, 0.0, z);
  p.normal = Eigen::Vector3d(0.0, 0.0, -1.0);
  p.s_min = s_min;
  p.s_max = s_max;
  p.t_min = -t_half;
  p.t_max = t_half;
  p.texture = TextureKind::kChecker;
  p.tex_scale = 0.4;
  return p;
}

// Slanted noise-textured plane under a gentle forward-lateral camera track.
SceneSpec gentle_slant_scene() {
  SceneSpec s;
  s.width = 64;
  s.height = 64;
  s.intrinsics = Intrinsics{60.0, 60.0, 31.5, 31.5};
  s.background_depth = 40.0;
  s.seed = 7;
  PlaneSpec p;
  p.point = Eigen::Vector3d(0.2, 0.0, 4.0);
  p.normal = Eigen::Vector3d(0.25, 0.1, -1.0);
  p.s_min = -6.0;
  p.s_max = 6.0;
  p.t_min = -6.0;
  p.t_max = 6.0;
  p.texture = TextureKind::kNoise;
  p.tex_scale = 0.9;
  p.color_a = Eigen::Vector3d(0.15, 0.25, 0.1);
  p.color_b = Eigen::Vector3d(0.9, 0.8, 0.7);
  s.planes.push_back(p);
  const Eigen::Vector3d step(0.1, 0.0, 0.05);
  for (int i = 0; i < 3; ++i) {
    s.poses.push_back(
        PoseSE3{Eigen::Matrix3d::Identity(), static_cast<double>(i) * step});
  }
  return s;
}

}  // namespace

TEST(RenderTest, FrontoParallelPlaneHasExactConstantDepth) {
  SceneSpec s = base_scene(16);
  s.planes.push_back(fronto_plane(5.0, -10.0, 10.0, 10.0));
  const RenderResult r = render_scene(s, 0);
  for (int i = 0; i < 16 * 16; ++i) {
    EXPECT_DOUBLE_EQ(r.depth.data[i], 5.0);
    EXPECT_DOUBLE_EQ(r.mask.data[i], 1.0);
  }
  for (double v : r.image.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(RenderTest, SlantedPlaneMatchesClosedFormDepth) {
  SceneSpec s = base_scene(16);
  PlaneSpec p;
  p.point = Eigen::Vector3d(0.0, 0.0, 4.0);
  p.normal = Eigen::Vector3d(0.2, 0.1, -1.0);
  p.s_min = -20.0;
  p.s_max = 20.0;
  p.t_min = -20.0;
  p.t_max = 20.0;
  s.planes.push_back(p);
  const RenderResult r = render_scene(s, 0);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const double rx = (x - s.intrinsics.cx) / s.intrinsics.fx;
      const double ry = (y - s.intrinsics.cy) / s.intrinsics.fy;
      const double expect = 4.0 / (1.0 - 0.2 * rx - 0.1 * ry);
      EXPECT_NEAR(r.depth.at(x, y), expect, 1e-12);
      EXPECT_DOUBLE_EQ(r.mask.at(x, y), 1.0);
    }
  }
}

TEST(RenderTest, NearerPlaneWinsTheDepthTest) {
  SceneSpec s = base_scene(16);
  s.planes.push_back(fronto_plane(6.0, -20.0, 20.0, 20.0));
  s.planes.push_back(fronto_plane(3.0, -20.0, 0.0, 20.0));  // left half only
  const RenderResult r = render_scene(s, 0);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      // The near strip covers world x <= 0, i.e. pixels left of the center.
      const double expect = (x <= 7) ? 3.0 : 6.0;
      EXPECT_DOUBLE_EQ(r.depth.at(x, y), expect);
    }
  }
}

TEST(RenderTest, BackgroundFillsMissesAndRejectsBadPoseIndex) {
  SceneSpec s = base_scene(8);
  s.background_depth = 25.0;
  s.planes.push_back(fronto_plane(2.0, -0.01, 0.01, 0.01));  // sliver
  const RenderResult r = render_scene(s, 0);
  int misses = 0;
  for (int i = 0; i < 8 * 8; ++i) {
    if (r.mask.data[i] == 0.0) {
      EXPECT_DOUBLE_EQ(r.depth.data[i], 25.0);
      ++misses;
    }
  }
  EXPECT_GT(misses, 0);
  EXPECT_THROW(render_scene(s, 1), std::out_of_range);
  EXPECT_THROW(render_scene(s, -1), std::out_of_range);
}

TEST(RenderTest, DeterministicAcrossCalls) {
  const SceneSpec s = gentle_slant_scene();
  const RenderResult a = render_scene(s, 1);
  const RenderResult b = render_scene(s, 1);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.depth.data, b.depth.data);
  EXPECT_EQ(a.mask.data, b.mask.data);
}

TEST(GroundTruthTest, RelativePoseFollowsCameraTrack) {
  SceneSpec s = base_scene(16);
  s.planes.push_back(fronto_plane(5.0, -20.0, 20.0, 20.0));
  s.poses.push_back(PoseSE3{Eigen::Matrix3d::Identity(),
                            Eigen::Vector3d(0.3, 0.0, 0.1)});
  const GroundTruthMotion gt = ground_truth_motion(s, 0, 1);
  EXPECT_NEAR((gt.pose.t - Eigen::Vector3d(-0.3, 0.0, -0.1)).norm(), 0.0,
              1e-15);
  EXPECT_NEAR((gt.pose.R - Eigen::Matrix3d::Identity()).norm(), 0.0, 1e-15);
  // The camera advanced 0.1 toward a static fronto plane at z = 5.
  const RenderResult r1 = render_scene(s, 1);
  for (double d : r1.depth.data) EXPECT_DOUBLE_EQ(d, 4.9);
  EXPECT_THROW(ground_truth_motion(s, 0, 2), std::out_of_range);
}

TEST(GroundTruthTest, VisibilityMatchesZBufferReference) {
  // Two fronto planes, integer pixel shifts at both depths, strip edges on
  // pixel-square boundaries: every projection and bound test is exact, so
  // the segment-test visibility and the splatting reference must agree at
  // probe radius zero.
  SceneSpec s = base_scene(32);
  s.intrinsics = Intrinsics{16.0, 16.0, 15.5, 15.5};
  s.planes.push_back(fronto_plane(6.0, -40.0, 40.0, 40.0));
  s.planes.push_back(fronto_plane(2.0, -0.5, 0.5, 20.0));
  s.poses.push_back(PoseSE3{Eigen::Matrix3d::Identity(),
                            Eigen::Vector3d(0.375, 0.0, 0.0)});

  const RenderResult r0 = render_scene(s, 0);
  const RenderResult r1 = render_scene(s, 1);
  const GroundTruthMotion gt = ground_truth_motion(s, 0, 1);
  const ImageGrid oracle = z_buffer_oracle(r0.depth, r1.depth, gt.pose,
                                           s.intrinsics, 4, 0, 0.01);
  const ImageGrid fast =
      occlusion_mask(r0.depth, r1.depth, gt.pose, s.intrinsics, 0, 0.01);
  int hidden = 0;
  for (int i = 0; i < 32 * 32; ++i) {
    EXPECT_EQ(gt.occlusion.data[i], oracle.data[i]) << "pixel " << i;
    EXPECT_EQ(gt.occlusion.data[i], fast.data[i]) << "pixel " << i;
    if (gt.occlusion.data[i] == 0.0) ++hidden;
  }
  EXPECT_GE(hidden, 64);
}

TEST(GroundTruthTest, MovingPlaneMaskAndResidualTranslation) {
  const SceneSpec s = preset_scene("moving");
  const GroundTruthMotion fwd = ground_truth_motion(s, 1, 2);
  const GroundTruthMotion bwd = ground_truth_motion(s, 1, 0);
  int moving = 0;
  for (double v : fwd.moving_mask.data) moving += (v == 1.0);
  EXPECT_GT(moving, 100);
  EXPECT_GT(fwd.delta_t.norm(), 0.0);
  EXPECT_NEAR((fwd.delta_t + bwd.delta_t).norm(), 0.0, 1e-15);

  const SceneSpec rigid = preset_scene("plane3");
  const GroundTruthMotion gt = ground_truth_motion(rigid, 0, 1);
  EXPECT_EQ(gt.delta_t.norm(), 0.0);
  for (double v : gt.moving_mask.data) EXPECT_EQ(v, 0.0);
}

TEST(GroundTruthTest, WarpWithTrueDepthAndPoseReproducesTheTarget) {
  const SceneSpec s = gentle_slant_scene();
  const RenderResult r0 = render_scene(s, 0);
  const RenderResult r1 = render_scene(s, 1);
  const GroundTruthMotion gt10 = ground_truth_motion(s, 1, 0);
  const WarpResult w = warp_frame(r0.image, r1.depth, gt10.pose, s.intrinsics);

  double err = 0.0;
  int count = 0;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      if (w.validity.at(x, y) != 1.0) continue;
      if (gt10.occlusion.at(x, y) != 1.0) continue;
      for (int c = 0; c < 3; ++c) {
        err += std::abs(w.warped.at(x, y, c) - r1.image.at(x, y, c));
        ++count;
      }
    }
  }
  ASSERT_GT(count, 3000);
  EXPECT_LT(err / count, 1e-3);
}

TEST(SceneFileTest, SerializeParseRoundTripPreservesRenders) {
  const SceneSpec s = gentle_slant_scene();
  const SceneSpec back = parse_scene(serialize_scene(s));
  const RenderResult a = render_scene(s, 2);
  const RenderResult b = render_scene(back, 2);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.depth.data, b.depth.data);
  ASSERT_EQ(back.planes.size(), s.planes.size());
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.planes[0].texture, s.planes[0].texture);
}

TEST(SceneFileTest, ErrorsCarryLineNumbers) {
  auto expect_error = [](const std::string& text, const std::string& needle) {
    try {
      parse_scene(text);
      FAIL() << "expected parse failure for: " << text;
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
          << e.what();
    }
  };
  expect_error("width = 32\nheight 32\n", "line 2");
  expect_error("# comment\n\nplane.0.bounds = 1 2 3\n", "expected 4 numbers");
  expect_error("plane.0.wobble = 3\n", "unknown plane field");
  expect_error("pose.x = 0 0 0 0 0 0 1\n", "malformed pose index");
  expect_error("gravity = 9.8\n", "unknown key");
  expect_error("plane.0.tex_scale = fast\n", "malformed number");
  expect_error("width = 32\n", "at least one plane");
}

TEST(SceneFileTest, CommentsAndBlankLinesAreIgnored) {
  const std::string text =
      "# full scene\n"
      "width = 8\n"
      "height = 8\n"
      "fx = 8\nfy = 8\ncx = 3.5\ncy = 3.5\n"
      "\n"
      "plane.0.point = 0 0 5   # fronto\n"
      "plane.0.normal = 0 0 -1\n"
      "plane.0.bounds = -9 9 -9 9\n"
      "pose.0 = 0 0 0 0 0 0 1\n";
  const SceneSpec s = parse_scene(text);
  EXPECT_EQ(s.width, 8);
  const RenderResult r = render_scene(s, 0);
  for (double d : r.depth.data) EXPECT_DOUBLE_EQ(d, 5.0);
}

TEST(PresetTest, AllPresetsValidateAndRender) {
  for (const char* name : {"plane3", "corridor7", "moving"}) {
    const SceneSpec s = preset_scene(name);
    EXPECT_NO_THROW(s.validate()) << name;
    const RenderResult r = render_scene(s, 0);
    EXPECT_TRUE(r.image.all_finite()) << name;
    EXPECT_TRUE(r.depth.all_finite()) << name;
  }
  EXPECT_EQ(preset_scene("plane3").poses.size(), 3u);
  EXPECT_EQ(preset_scene("corridor7").poses.size(), 7u);
  EXPECT_EQ(preset_scene("moving").poses.size(), 3u);
  EXPECT_THROW(preset_scene("nope"), std::invalid_argument);
}
