#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/camera.hpp"
#include "dvopt/geometry.hpp"
#include "dvopt/image.hpp"
#include "dvopt/occlusion.hpp"
#include "dvopt/rng.hpp"
#include "dvopt/se3.hpp"
#include "dvopt/strfmt.hpp"

namespace dvopt {

enum class TextureKind { kChecker = 0, kNoise = 1, kSinusoid = 2 };

inline const char* texture_kind_name(TextureKind t) {
  switch (t) {
    case TextureKind::kChecker: return "checker";
    case TextureKind::kNoise: return "noise";
    case TextureKind::kSinusoid: return "sinusoid";
  }
  return "unknown";
}

inline TextureKind texture_kind_from_name(const std::string& s) {
  if (s == "checker") return TextureKind::kChecker;
  if (s == "noise") return TextureKind::kNoise;
  if (s == "sinusoid") return TextureKind::kSinusoid;
  throw std::invalid_argument("unknown texture kind: " + s);
}

// A bounded textured rectangle. The rectangle lives on the plane through
// `point` with unit tangent directions derived deterministically from
// `normal`; bounds are in tangent coordinates (meters) relative to `point`.
// A nonzero velocity (world meters per frame index) makes the plane rigid-
// translate over time; the texture rides with it.
struct PlaneSpec {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, -1);
  double s_min = -1.0, s_max = 1.0;
  double t_min = -1.0, t_max = 1.0;
  TextureKind texture = TextureKind::kNoise;
  double tex_scale = 0.5;  // meters per texture period / cell / lattice step
  Eigen::Vector3d color_a = Eigen::Vector3d(0.2, 0.2, 0.2);
  Eigen::Vector3d color_b = Eigen::Vector3d(0.8, 0.8, 0.8);
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
};

// Deterministic tangent basis for a plane normal.
struct TangentBasis {
  Eigen::Vector3d e1;
  Eigen::Vector3d e2;
};

inline TangentBasis tangent_basis(const Eigen::Vector3d& normal) {
  const double norm = normal.norm();
  if (!(norm > 0.0)) {
    throw std::invalid_argument("tangent_basis: zero normal");
  }
  const Eigen::Vector3d n = normal / norm;
  Eigen::Vector3d up(0.0, 1.0, 0.0);
  if (std::abs(n.dot(up)) > 0.9) up = Eigen::Vector3d(1.0, 0.0, 0.0);
  TangentBasis b;
  b.e1 = n.cross(up).normalized();
  b.e2 = n.cross(b.e1);
  return b;
}

struct SceneSpec {
  int width = 64;
  int height = 64;
  Intrinsics intrinsics{60.0, 60.0, 31.5, 31.5};
  double background_depth = 50.0;
  Eigen::Vector3d background_color = Eigen::Vector3d(0.4, 0.4, 0.4);
  uint64_t seed = 1;
  std::vector<PlaneSpec> planes;
  std::vector<PoseSE3> poses;  // camera-to-world per frame

  void validate() const {
    if (width < 2 || height < 2) {
      throw std::invalid_argument("SceneSpec: image dimensions must be >= 2");
    }
    if (!(background_depth > 0.1) || !(background_depth < 100.0)) {
      throw std::invalid_argument(
          "SceneSpec: background_depth must lie in (0.1, 100)");
    }
    if (planes.empty()) {
      throw std::invalid_argument("SceneSpec: at least one plane required");
    }
    if (poses.empty()) {
      throw std::invalid_argument("SceneSpec: at least one pose required");
    }
    for (const auto& p : planes) {
      if (!(p.normal.norm() > 0.0)) {
        throw std::invalid_argument("SceneSpec: plane normal must be nonzero");
      }
      if (!(p.s_max > p.s_min) || !(p.t_max > p.t_min)) {
        throw std::invalid_argument("SceneSpec: empty plane bounds");
      }
      if (!(p.tex_scale > 0.0)) {
        throw std::invalid_argument("SceneSpec: tex_scale must be positive");
      }
    }
  }
};

namespace detail {

// C1 value-noise in one tangent coordinate pair: bilinear lattice hash with
// smoothstep fade, two octaves, values in [0, 1].
inline double value_noise(double s, double t, uint64_t seed) {
  auto lattice = [&](double xs, double yt, uint64_t sd) {
    const double fx = std::floor(xs);
    const double fy = std::floor(yt);
    const int64_t ix = static_cast<int64_t>(fx);
    const int64_t iy = static_cast<int64_t>(fy);
    double u = xs - fx;
    double v = yt - fy;
    u = u * u * (3.0 - 2.0 * u);
    v = v * v * (3.0 - 2.0 * v);
    const double a = hash_to_unit(ix, iy, sd);
    const double b = hash_to_unit(ix + 1, iy, sd);
    const double c = hash_to_unit(ix, iy + 1, sd);
    const double d = hash_to_unit(ix + 1, iy + 1, sd);
    const double top = a + u * (b - a);
    const double bot = c + u * (d - c);
    return top + v * (bot - top);
  };
  return 0.65 * lattice(s, t, seed) + 0.35 * lattice(2.0 * s + 17.0, 2.0 * t - 9.0, seed + 1);
}

inline double texture_value(const PlaneSpec& p, uint64_t scene_seed,
                            size_t plane_index, double s, double t) {
  const uint64_t seed = scene_seed ^ hash_u64(plane_index + 0x51ed2701ULL);
  switch (p.texture) {
    case TextureKind::kChecker: {
      const long long cs = static_cast<long long>(std::floor(s / p.tex_scale));
      const long long ct = static_cast<long long>(std::floor(t / p.tex_scale));
      return ((cs + ct) % 2 + 2) % 2 == 0 ? 0.0 : 1.0;
    }
    case TextureKind::kNoise:
      return value_noise(s / p.tex_scale, t / p.tex_scale, seed);
    case TextureKind::kSinusoid: {
      const double two_pi = 6.283185307179586476925287;
      return 0.5 +
             0.5 * std::sin(two_pi * s / p.tex_scale) *
                 std::sin(two_pi * t / p.tex_scale);
    }
  }
  return 0.0;
}

struct RayHit {
  double z = std::numeric_limits<double>::infinity();  // camera-space depth
  int plane = -1;
  Eigen::Vector3d world = Eigen::Vector3d::Zero();
  double s = 0.0;
  double t = 0.0;
};

// Nearest plane hit along the ray through camera coordinates `dir_cam`
// (z component 1, so the ray parameter equals camera-space depth).
inline RayHit trace_ray(const SceneSpec& spec, int frame,
                        const PoseSE3& cam_to_world,
                        const Eigen::Vector3d& dir_cam) {
  RayHit best;
  const Eigen::Vector3d origin = cam_to_world.t;
  const Eigen::Vector3d dir = cam_to_world.R * dir_cam;
  for (size_t pi = 0; pi < spec.planes.size(); ++pi) {
    const PlaneSpec& p = spec.planes[pi];
    const Eigen::Vector3d anchor = p.point + frame * p.velocity;
    const Eigen::Vector3d n = p.normal.normalized();
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double z = n.dot(anchor - origin) / denom;
    if (!(z > kZMin) || z >= best.z) continue;
    const Eigen::Vector3d x = origin + z * dir;
    const TangentBasis basis = tangent_basis(p.normal);
    const Eigen::Vector3d rel = x - anchor;
    const double s = rel.dot(basis.e1);
    const double t = rel.dot(basis.e2);
    if (s < p.s_min || s > p.s_max || t < p.t_min || t > p.t_max) continue;
    best.z = z;
    best.plane = static_cast<int>(pi);
    best.world = x;
    best.s = s;
    best.t = t;
  }
  return best;
}

}  // namespace detail

struct RenderResult {
  ImageGrid image;  // 3 channels in [0, 1]
  ImageGrid depth;  // exact camera-space z of the nearest hit at pixel center
  ImageGrid mask;   // 1 where a plane was hit, 0 where background
};

// Renders one frame by exact per-pixel ray casting. Depth and the hit mask
// come from the pixel-center ray; color averages a 2x2 subsample grid so
// texture edges are mildly antialiased.
inline RenderResult render_scene(const SceneSpec& spec, int pose_index) {
  spec.validate();
  if (pose_index < 0 || pose_index >= static_cast<int>(spec.poses.size())) {
    throw std::out_of_range("render_scene: pose index " +
                            std::to_string(pose_index) + " out of range");
  }
  const PoseSE3& cam = spec.poses[pose_index];
  RenderResult out;
  out.image = ImageGrid(spec.width, spec.height, 3);
  out.depth = ImageGrid(spec.width, spec.height, 1);
  out.mask = ImageGrid(spec.width, spec.height, 1);
  constexpr double kOffsets[2] = {-0.25, 0.25};
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const detail::RayHit center = detail::trace_ray(
          spec, pose_index, cam, spec.intrinsics.ray(x, y));
      if (center.plane >= 0) {
        if (center.z <= 0.1 || center.z >= 100.0) {
          throw std::invalid_argument(
              "render_scene: visible depth outside (0.1, 100) at pixel (" +
              std::to_string(x) + ", " + std::to_string(y) + ")");
        }
        out.depth.at(x, y) = center.z;
        out.mask.at(x, y) = 1.0;
      } else {
        out.depth.at(x, y) = spec.background_depth;
      }
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      for (double dy : kOffsets) {
        for (double dx : kOffsets) {
          const detail::RayHit hit = detail::trace_ray(
              spec, pose_index, cam, spec.intrinsics.ray(x + dx, y + dy));
          if (hit.plane >= 0) {
            const PlaneSpec& p = spec.planes[hit.plane];
            const double v = detail::texture_value(
                p, spec.seed, static_cast<size_t>(hit.plane), hit.s, hit.t);
            color += p.color_a + v * (p.color_b - p.color_a);
          } else {
            color += spec.background_color;
          }
        }
      }
      color *= 0.25;
      for (int c = 0; c < 3; ++c) {
        out.image.at(x, y, c) = std::clamp(color[c], 0.0, 1.0);
      }
    }
  }
  return out;
}

struct GroundTruthMotion {
  PoseSE3 pose;            // maps frame-i camera coordinates into frame j
  ImageGrid occlusion;     // 1 where frame i's surface point is visible in j
  ImageGrid moving_mask;   // 1 on pixels of planes with nonzero velocity
  Eigen::Vector3d delta_t; // true residual translation of the moving plane,
                           // in frame-j camera coordinates, zero if none
};

// Exact relative pose and visibility between two frames. A surface point
// seen at frame i's pixel is visible in frame j iff it sits in front of
// camera j, its center projection rounds to a pixel inside the image, and no
// scene surface (at frame j's time) intersects the segment from camera j to
// the (possibly moved) material point strictly closer than the point itself.
inline GroundTruthMotion ground_truth_motion(const SceneSpec& spec, int i,
                                             int j) {
  spec.validate();
  const int nposes = static_cast<int>(spec.poses.size());
  if (i < 0 || i >= nposes || j < 0 || j >= nposes) {
    throw std::out_of_range("ground_truth_motion: frame index out of range");
  }
  const PoseSE3& cam_i = spec.poses[i];
  const PoseSE3& cam_j = spec.poses[j];
  GroundTruthMotion out;
  out.pose = pose_compose(cam_i, pose_inverse(cam_j));
  out.occlusion = ImageGrid(spec.width, spec.height, 1);
  out.moving_mask = ImageGrid(spec.width, spec.height, 1);
  out.delta_t = Eigen::Vector3d::Zero();
  for (const auto& p : spec.planes) {
    if (p.velocity.squaredNorm() > 0.0) {
      out.delta_t = cam_j.R.transpose() * ((j - i) * p.velocity);
      break;
    }
  }
  const Eigen::Vector3d origin_j = cam_j.t;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const detail::RayHit hit =
          detail::trace_ray(spec, i, cam_i, spec.intrinsics.ray(x, y));
      if (hit.plane < 0) continue;
      const PlaneSpec& plane = spec.planes[hit.plane];
      if (plane.velocity.squaredNorm() > 0.0) {
        out.moving_mask.at(x, y) = 1.0;
      }
      // Material point at frame j's time.
      const Eigen::Vector3d xj = hit.world + (j - i) * plane.velocity;
      const Eigen::Vector3d xc = cam_j.inverse().apply(xj);
      if (!(xc.z() > kZMin)) continue;
      const double u = spec.intrinsics.fx * xc.x() / xc.z() + spec.intrinsics.cx;
      const double v = spec.intrinsics.fy * xc.y() / xc.z() + spec.intrinsics.cy;
      const int pu = nearest_pixel(u);
      const int pv = nearest_pixel(v);
      if (pu < 0 || pu >= spec.width || pv < 0 || pv >= spec.height) continue;
      // Segment test against the scene at frame j. The segment parameter is
      // expressed as a fraction of the distance to the material point.
      const Eigen::Vector3d seg = xj - origin_j;
      bool blocked = false;
      for (size_t pi = 0; pi < spec.planes.size() && !blocked; ++pi) {
        const PlaneSpec& q = spec.planes[pi];
        const Eigen::Vector3d anchor = q.point + j * q.velocity;
        const Eigen::Vector3d n = q.normal.normalized();
        const double denom = n.dot(seg);
        if (std::abs(denom) < 1e-15) continue;
        const double f = n.dot(anchor - origin_j) / denom;
        if (!(f > 1e-9) || f >= 1.0 - 1e-9) continue;
        const Eigen::Vector3d xq = origin_j + f * seg;
        const TangentBasis basis = tangent_basis(q.normal);
        const Eigen::Vector3d rel = xq - anchor;
        const double s = rel.dot(basis.e1);
        const double t = rel.dot(basis.e2);
        if (s >= q.s_min && s <= q.s_max && t >= q.t_min && t <= q.t_max) {
          blocked = true;
        }
      }
      if (!blocked) out.occlusion.at(x, y) = 1.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene file grammar: flat "key = value" lines, one per line, '#' comments.
// Vectors are space-separated numbers. Plane fields are indexed
// (plane.<n>.point etc.); poses are TUM-ordered seven-tuples
// "tx ty tz qx qy qz qw" under pose.<n>.

namespace detail {

inline std::vector<double> parse_numbers(const std::string& s, size_t expected,
                                         int line_no) {
  std::istringstream iss(s);
  std::vector<double> out;
  double v;
  while (iss >> v) out.push_back(v);
  std::string rest;
  if (iss.fail() && !iss.eof()) {
    throw std::invalid_argument("scene file line " + std::to_string(line_no) +
                                ": malformed number in \"" + s + "\"");
  }
  if (out.size() != expected) {
    throw std::invalid_argument("scene file line " + std::to_string(line_no) +
                                ": expected " + std::to_string(expected) +
                                " numbers, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace detail

inline SceneSpec parse_scene(const std::string& text) {
  SceneSpec spec;
  spec.planes.clear();
  spec.poses.clear();
  std::vector<PoseSE3> poses;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  auto plane_at = [&](size_t idx) -> PlaneSpec& {
    if (spec.planes.size() <= idx) spec.planes.resize(idx + 1);
    return spec.planes[idx];
  };
  auto pose_at = [&](size_t idx) -> PoseSE3& {
    if (poses.size() <= idx) poses.resize(idx + 1);
    return poses[idx];
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("scene file line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto one = [&]() { return detail::parse_numbers(value, 1, line_no)[0]; };
    auto vec3 = [&]() {
      const auto v = detail::parse_numbers(value, 3, line_no);
      return Eigen::Vector3d(v[0], v[1], v[2]);
    };
    if (key == "width") {
      spec.width = static_cast<int>(one());
    } else if (key == "height") {
      spec.height = static_cast<int>(one());
    } else if (key == "fx") {
      spec.intrinsics.fx = one();
    } else if (key == "fy") {
      spec.intrinsics.fy = one();
    } else if (key == "cx") {
      spec.intrinsics.cx = one();
    } else if (key == "cy") {
      spec.intrinsics.cy = one();
    } else if (key == "background_depth") {
      spec.background_depth = one();
    } else if (key == "background_color") {
      spec.background_color = vec3();
    } else if (key == "seed") {
      spec.seed = static_cast<uint64_t>(one());
    } else if (key.rfind("plane.", 0) == 0) {
      const size_t dot = key.find('.', 6);
      if (dot == std::string::npos) {
        throw std::invalid_argument("scene file line " +
                                    std::to_string(line_no) +
                                    ": malformed plane key " + key);
      }
      size_t idx = 0;
      try {
        idx = static_cast<size_t>(std::stoul(key.substr(6, dot - 6)));
      } catch (const std::exception&) {
        throw std::invalid_argument("scene file line " +
                                    std::to_string(line_no) +
                                    ": malformed plane index in " + key);
      }
      const std::string field = key.substr(dot + 1);
      PlaneSpec& p = plane_at(idx);
      if (field == "point") {
        p.point = vec3();
      } else if (field == "normal") {
        p.normal = vec3();
      } else if (field == "bounds") {
        const auto v = detail::parse_numbers(value, 4, line_no);
        p.s_min = v[0];
        p.s_max = v[1];
        p.t_min = v[2];
        p.t_max = v[3];
      } else if (field == "texture") {
        p.texture = texture_kind_from_name(value);
      } else if (field == "tex_scale") {
        p.tex_scale = one();
      } else if (field == "color_a") {
        p.color_a = vec3();
      } else if (field == "color_b") {
        p.color_b = vec3();
      } else if (field == "velocity") {
        p.velocity = vec3();
      } else {
        throw std::invalid_argument("scene file line " +
                                    std::to_string(line_no) +
                                    ": unknown plane field " + field);
      }
    } else if (key.rfind("pose.", 0) == 0) {
      size_t idx = 0;
      try {
        idx = static_cast<size_t>(std::stoul(key.substr(5)));
      } catch (const std::exception&) {
        throw std::invalid_argument("scene file line " +
                                    std::to_string(line_no) +
                                    ": malformed pose index in " + key);
      }
      const auto v = detail::parse_numbers(value, 7, line_no);
      PoseSE3& pose = pose_at(idx);
      pose.R = quat_to_rot(v[3], v[4], v[5], v[6]);
      pose.t = Eigen::Vector3d(v[0], v[1], v[2]);
    } else {
      throw std::invalid_argument("scene file line " + std::to_string(line_no) +
                                  ": unknown key " + key);
    }
  }
  spec.poses = poses;
  spec.validate();
  return spec;
}

inline std::string serialize_scene(const SceneSpec& spec) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) {
    out += k + " = " + v + "\n";
  };
  auto num = detail::format_g17;
  auto vec = [&](const Eigen::Vector3d& v) {
    return num(v.x()) + " " + num(v.y()) + " " + num(v.z());
  };
  kv("width", std::to_string(spec.width));
  kv("height", std::to_string(spec.height));
  kv("fx", num(spec.intrinsics.fx));
  kv("fy", num(spec.intrinsics.fy));
  kv("cx", num(spec.intrinsics.cx));
  kv("cy", num(spec.intrinsics.cy));
  kv("background_depth", num(spec.background_depth));
  kv("background_color", vec(spec.background_color));
  kv("seed", std::to_string(spec.seed));
  for (size_t i = 0; i < spec.planes.size(); ++i) {
    const PlaneSpec& p = spec.planes[i];
    const std::string pre = "plane." + std::to_string(i) + ".";
    kv(pre + "point", vec(p.point));
    kv(pre + "normal", vec(p.normal));
    kv(pre + "bounds", num(p.s_min) + " " + num(p.s_max) + " " + num(p.t_min) +
                           " " + num(p.t_max));
    kv(pre + "texture", texture_kind_name(p.texture));
    kv(pre + "tex_scale", num(p.tex_scale));
    kv(pre + "color_a", vec(p.color_a));
    kv(pre + "color_b", vec(p.color_b));
    kv(pre + "velocity", vec(p.velocity));
  }
  for (size_t i = 0; i < spec.poses.size(); ++i) {
    const Eigen::Vector4d q = rot_to_quat(spec.poses[i].R);
    kv("pose." + std::to_string(i),
       vec(spec.poses[i].t) + " " + num(q[0]) + " " + num(q[1]) + " " +
           num(q[2]) + " " + num(q[3]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preset scenes used across the test suite and the command-line examples.

// Single slanted noise-textured plane, three poses translating
// (0.1, 0, 0.05) per frame. About 1.5 px of parallax per frame at the plane.
inline SceneSpec preset_plane3() {
  SceneSpec s;
  s.width = 64;
  s.height = 64;
  s.intrinsics = Intrinsics{60.0, 60.0, 31.5, 31.5};
  s.background_depth = 40.0;
  s.seed = 11;
  PlaneSpec p;
  p.point = Eigen::Vector3d(0.2, 0.0, 4.0);
  p.normal = Eigen::Vector3d(0.25, 0.1, -1.0);
  p.s_min = -6.0;
  p.s_max = 6.0;
  p.t_min = -6.0;
  p.t_max = 6.0;
  // High-frequency texture: depth recovery needs strong image gradients so
  // the photometric term can overpower the regularizers' pull toward flat.
  p.texture = TextureKind::kSinusoid;
  p.tex_scale = 0.7;
  p.color_a = Eigen::Vector3d(0.12, 0.2, 0.1);
  p.color_b = Eigen::Vector3d(0.95, 0.85, 0.7);
  s.planes.push_back(p);
  const Eigen::Vector3d step(0.1, 0.0, 0.05);
  for (int i = 0; i < 3; ++i) {
    s.poses.push_back(PoseSE3{Eigen::Matrix3d::Identity(),
                              static_cast<double>(i) * step});
  }
  return s;
}

// Textured corridor: two side walls, floor and ceiling, camera advancing
// along +z. Seven poses give five overlapping triplets.
inline SceneSpec preset_corridor7() {
  SceneSpec s;
  s.width = 64;
  s.height = 64;
  s.intrinsics = Intrinsics{60.0, 60.0, 31.5, 31.5};
  s.background_depth = 60.0;
  s.background_color = Eigen::Vector3d(0.25, 0.25, 0.3);
  s.seed = 23;
  struct WallDef {
    Eigen::Vector3d point, normal, ca, cb;
    double scale;
  };
  // High-frequency sinusoid textures so the photometric term can actually
  // sculpt depth; scales differ per wall to break symmetry.
  // Texture periods are sized so that even far wall sections keep a few
  // pixels per period; finer patterns alias at grazing angles and the
  // resampling noise drowns the photometric signal.
  const WallDef walls[4] = {
      {{-1.6, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.25, 0.1, 0.1}, {0.9, 0.6, 0.5}, 1.6},
      {{1.6, 0.0, 0.0}, {-1.0, 0.0, 0.0}, {0.1, 0.22, 0.1}, {0.6, 0.9, 0.55}, 2.0},
      {{0.0, 1.0, 0.0}, {0.0, -1.0, 0.0}, {0.1, 0.1, 0.25}, {0.55, 0.6, 0.95}, 1.8},
      {{0.0, -1.0, 0.0}, {0.0, 1.0, 0.0}, {0.2, 0.2, 0.08}, {0.95, 0.9, 0.5}, 1.4},
  };
  for (const auto& wdef : walls) {
    PlaneSpec p;
    p.point = wdef.point;
    p.normal = wdef.normal;
    p.s_min = -40.0;
    p.s_max = 40.0;
    p.t_min = -40.0;
    p.t_max = 40.0;
    p.texture = TextureKind::kSinusoid;
    p.tex_scale = wdef.scale;
    p.color_a = wdef.ca;
    p.color_b = wdef.cb;
    s.planes.push_back(p);
  }
  // Far end cap so central pixels see texture instead of background.
  PlaneSpec cap;
  cap.point = Eigen::Vector3d(0.0, 0.0, 10.0);
  cap.normal = Eigen::Vector3d(0.0, 0.0, -1.0);
  cap.s_min = -2.5;
  cap.s_max = 2.5;
  cap.t_min = -2.5;
  cap.t_max = 2.5;
  cap.texture = TextureKind::kSinusoid;
  cap.tex_scale = 0.7;
  cap.color_a = Eigen::Vector3d(0.3, 0.25, 0.2);
  cap.color_b = Eigen::Vector3d(0.85, 0.8, 0.75);
  s.planes.push_back(cap);
  // Accelerating advance: consecutive triplets see different step sizes, so
  // nothing but the loss itself can make their depth scales agree.
  double z = 0.0;
  for (int i = 0; i < 7; ++i) {
    s.poses.push_back(
        PoseSE3{Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, z)});
    z += 0.024 + 0.005 * i;
  }
  return s;
}

// Static textured backdrop plus a laterally moving square plane in front,
// camera also translating, three poses. Exercises the residual translation
// field and its gate.
inline SceneSpec preset_moving() {
  SceneSpec s;
  s.width = 64;
  s.height = 64;
  s.intrinsics = Intrinsics{60.0, 60.0, 31.5, 31.5};
  s.background_depth = 30.0;
  s.seed = 31;
  PlaneSpec back;
  back.point = Eigen::Vector3d(0.0, 0.0, 6.0);
  back.normal = Eigen::Vector3d(0.0, 0.0, -1.0);
  back.s_min = -8.0;
  back.s_max = 8.0;
  back.t_min = -8.0;
  back.t_max = 8.0;
  // Strong high-frequency textures: the gate only opens where the rigid
  // model's photometric error clearly outweighs the gate cost, which needs
  // crisp image gradients on and around the moving surface.
  back.texture = TextureKind::kSinusoid;
  back.tex_scale = 0.5;
  back.color_a = Eigen::Vector3d(0.15, 0.18, 0.12);
  back.color_b = Eigen::Vector3d(0.8, 0.85, 0.75);
  s.planes.push_back(back);
  PlaneSpec mover;
  mover.point = Eigen::Vector3d(-0.5, 0.0, 3.0);
  mover.normal = Eigen::Vector3d(0.0, 0.0, -1.0);
  mover.s_min = -0.5;
  mover.s_max = 0.5;
  mover.t_min = -0.5;
  mover.t_max = 0.5;
  mover.texture = TextureKind::kNoise;
  mover.tex_scale = 0.3;
  mover.color_a = Eigen::Vector3d(0.5, 0.1, 0.1);
  mover.color_b = Eigen::Vector3d(1.0, 0.75, 0.4);
  // Faster than the camera's advance: the apparent flow on the mover then
  // runs opposite to the static flow, so no depth value can explain it and
  // the residual field is the only way to reconstruct those pixels.
  mover.velocity = Eigen::Vector3d(0.12, 0.0, 0.0);
  s.planes.push_back(mover);
  for (int i = 0; i < 3; ++i) {
    s.poses.push_back(PoseSE3{Eigen::Matrix3d::Identity(),
                              Eigen::Vector3d(0.1 * i, 0.0, 0.0)});
  }
  return s;
}

inline SceneSpec preset_scene(const std::string& name) {
  if (name == "plane3") return preset_plane3();
  if (name == "corridor7") return preset_corridor7();
  if (name == "moving") return preset_moving();
  throw std::invalid_argument("unknown preset scene: " + name +
                              " (available: plane3, corridor7, moving)");
}

}  // namespace dvopt
