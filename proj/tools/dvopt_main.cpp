// Command line front end for the dvopt library.
//
// Subcommands:
//   synth-gen   render a synthetic scene to frames, depths, masks, and poses
//   optimize    recover depth, ego-motion, and residual motion from frames
//   grad-check  run the finite-difference gradient verification suite
//   eval-traj   compare an estimated trajectory against ground truth
//   eval-depth  compare predicted depth maps against ground truth

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <dvopt/evalkit.hpp>
#include <dvopt/gradcheck.hpp>
#include <dvopt/io.hpp>
#include <dvopt/optimizer.hpp>
#include <dvopt/strfmt.hpp>
#include <dvopt/synth.hpp>

namespace fs = std::filesystem;

namespace {

using dvopt::ChainMode;
using dvopt::ImageGrid;
using dvopt::Intrinsics;
using dvopt::LossWeights;
using dvopt::OptimizerConfig;
using dvopt::OptStatus;
using dvopt::PoseSE3;
using dvopt::SceneSpec;
using dvopt::Trajectory;
using dvopt::TripletProblem;
using dvopt::TripletSolution;

std::string fmt(double v) { return dvopt::detail::format_g17(v); }

// All run-time knobs reachable through config files and --set overrides.
// Flat key=value names are listed next to each field.
struct RunConfig {
  std::uint64_t seed = 1;         // seed
  int width = 416;                // image.width  (synth-gen re-render size)
  int height = 256;               // image.height
  LossWeights weights;            // weights.*
  OptimizerConfig opt;            // optimizer.*, occlusion.*
  ChainMode chain_mode = ChainMode::kNaive;  // chain.mode = naive | rescale
  bool median_scale = true;       // eval.median_scale
};

double parse_f64(const std::string& key, const std::string& value,
                 const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    while (used < value.size() &&
           std::isspace(static_cast<unsigned char>(value[used]))) {
      ++used;
    }
    if (used != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": invalid number '" + value +
                             "' for key '" + key + "'");
  }
}

long long parse_i64(const std::string& key, const std::string& value,
                    const std::string& where) {
  const double v = parse_f64(key, value, where);
  const long long n = static_cast<long long>(v);
  if (static_cast<double>(n) != v) {
    throw std::runtime_error(where + ": expected an integer for key '" + key +
                             "', got '" + value + "'");
  }
  return n;
}

bool parse_boolean(const std::string& key, const std::string& value,
                   const std::string& where) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::runtime_error(where + ": expected true/false for key '" + key +
                           "', got '" + value + "'");
}

void apply_config_entry(RunConfig& rc, const std::string& key,
                        const std::string& value, const std::string& where) {
  auto f = [&] { return parse_f64(key, value, where); };
  auto i = [&] { return parse_i64(key, value, where); };
  auto b = [&] { return parse_boolean(key, value, where); };

  if (key == "seed") {
    const long long n = i();
    if (n < 0) throw std::runtime_error(where + ": seed must be >= 0");
    rc.seed = static_cast<std::uint64_t>(n);
  } else if (key == "image.width") {
    rc.width = static_cast<int>(i());
  } else if (key == "image.height") {
    rc.height = static_cast<int>(i());
  } else if (key == "chain.mode") {
    if (value == "naive") {
      rc.chain_mode = ChainMode::kNaive;
    } else if (value == "rescale") {
      rc.chain_mode = ChainMode::kRescale;
    } else {
      throw std::runtime_error(where + ": chain.mode must be naive or rescale, got '" +
                               value + "'");
    }
  } else if (key == "eval.median_scale") {
    rc.median_scale = b();
  } else if (key == "weights.photometric") {
    rc.weights.photometric = f();
  } else if (key == "weights.ssim") {
    rc.weights.ssim = f();
  } else if (key == "weights.smoothness") {
    rc.weights.smoothness = f();
  } else if (key == "weights.scale") {
    rc.weights.scale_consistency = f();
  } else if (key == "weights.cycle") {
    rc.weights.cycle = f();
  } else if (key == "weights.residual") {
    rc.weights.residual_reg = f();
  } else if (key == "weights.cycle_rotation_scale") {
    rc.weights.cycle_rotation_scale = f();
  } else if (key == "weights.motion_smoothness_scale") {
    rc.weights.motion_smoothness_scale = f();
  } else if (key == "weights.residual_lambda") {
    rc.weights.residual_lambda = f();
  } else if (key == "weights.residual_gate_weight") {
    rc.weights.residual_gate_weight = f();
  } else if (key == "occlusion.radius") {
    rc.opt.occlusion_radius = static_cast<int>(i());
  } else if (key == "occlusion.tau") {
    rc.opt.occlusion_tau = f();
  } else if (key == "optimizer.levels") {
    rc.opt.pyramid_levels = static_cast<int>(i());
  } else if (key == "optimizer.budget") {
    rc.opt.iteration_budget = static_cast<int>(i());
  } else if (key == "optimizer.lr") {
    rc.opt.lr = f();
  } else if (key == "optimizer.lr_depth") {
    rc.opt.lr_depth_scale = f();
  } else if (key == "optimizer.lr_pose") {
    rc.opt.lr_pose_scale = f();
  } else if (key == "optimizer.lr_motion") {
    rc.opt.lr_motion_scale = f();
  } else if (key == "optimizer.lr_gate") {
    rc.opt.lr_gate_scale = f();
  } else if (key == "optimizer.beta1") {
    rc.opt.beta1 = f();
  } else if (key == "optimizer.beta2") {
    rc.opt.beta2 = f();
  } else if (key == "optimizer.eps") {
    rc.opt.adam_eps = f();
  } else if (key == "optimizer.rtol") {
    rc.opt.convergence_rtol = f();
  } else if (key == "optimizer.window") {
    rc.opt.convergence_window = static_cast<int>(i());
  } else if (key == "optimizer.absolute_exit") {
    rc.opt.absolute_exit = f();
  } else if (key == "optimizer.scale_prior") {
    rc.opt.scene_scale_prior = f();
  } else if (key == "optimizer.motion_coarse") {
    rc.opt.motion_coarse_enabled = b();
  } else if (key == "optimizer.motion_start") {
    rc.opt.motion_start_fraction = f();
  } else if (key == "optimizer.coarse_smoothness") {
    rc.opt.coarse_smoothness_factor = f();
  } else {
    throw std::runtime_error(where + ": unknown config key '" + key + "'");
  }
}

// Shared --config/--set/--seed options attached to every subcommand.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "flat key=value config file (see README for keys)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", sets,
                    "override one config key, e.g. --set optimizer.budget=500")
        ->take_all();
    seed_opt = cmd->add_option("--seed", seed, "random seed override");
  }

  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) {
      for (const auto& e : dvopt::read_config(config_path)) {
        apply_config_entry(rc, e.key, e.value,
                           config_path + ":" + std::to_string(e.line));
      }
    }
    for (const std::string& s : sets) {
      const size_t eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw std::runtime_error("--set expects key=value, got '" + s + "'");
      }
      apply_config_entry(rc, dvopt::detail::trim(s.substr(0, eq)),
                         dvopt::detail::trim(s.substr(eq + 1)), "--set");
    }
    if (seed_opt != nullptr && seed_opt->count() > 0) rc.seed = seed;
    return rc;
  }
};

int thread_count(size_t jobs) {
  int n = 1;
  if (const char* env = std::getenv("DVOPT_THREADS")) {
    try {
      n = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("invalid DVOPT_THREADS value '") +
                               env + "'");
    }
  }
  return static_cast<int>(std::min<size_t>(n, std::max<size_t>(jobs, 1)));
}

std::string frame_name(const char* prefix, size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, index, ext);
  return buf;
}

// ---------------------------------------------------------------------------
// synth-gen

struct SynthArgs {
  CommonOpts common;
  std::string out_dir;
  std::string scene_name = "plane3";
  std::string scene_file;
  int width = 0;
  int height = 0;
  CLI::Option* width_opt = nullptr;
  CLI::Option* height_opt = nullptr;
};

int run_synth_gen(const SynthArgs& a) {
  const RunConfig rc = a.common.resolve();

  SceneSpec spec;
  if (!a.scene_file.empty()) {
    spec = dvopt::parse_scene(dvopt::read_file_bytes(a.scene_file));
  } else {
    spec = dvopt::preset_scene(a.scene_name);
  }
  if (a.common.seed_opt != nullptr && a.common.seed_opt->count() > 0) {
    spec.seed = rc.seed;
  }

  const bool resize = (a.width_opt != nullptr && a.width_opt->count() > 0) ||
                      (a.height_opt != nullptr && a.height_opt->count() > 0);
  if (resize) {
    const int w = a.width_opt->count() > 0 ? a.width : rc.width;
    const int h = a.height_opt->count() > 0 ? a.height : rc.height;
    if (w < 2 || h < 2) {
      throw std::runtime_error("synth-gen: target size must be at least 2x2");
    }
    const double sx = static_cast<double>(w) / spec.width;
    const double sy = static_cast<double>(h) / spec.height;
    spec.intrinsics.fx *= sx;
    spec.intrinsics.fy *= sy;
    spec.intrinsics.cx = (spec.intrinsics.cx + 0.5) * sx - 0.5;
    spec.intrinsics.cy = (spec.intrinsics.cy + 0.5) * sy - 0.5;
    spec.width = w;
    spec.height = h;
  }
  spec.validate();

  fs::create_directories(a.out_dir);
  const fs::path out(a.out_dir);
  dvopt::write_file_atomic((out / "scene.txt").string(),
                           dvopt::serialize_scene(spec));
  dvopt::write_intrinsics((out / "intrinsics.txt").string(), spec.intrinsics);

  Trajectory gt;
  for (size_t i = 0; i < spec.poses.size(); ++i) {
    const dvopt::RenderResult r =
        dvopt::render_scene(spec, static_cast<int>(i));
    dvopt::write_ppm((out / frame_name("frame", i, "ppm")).string(), r.image);
    dvopt::write_pfm((out / frame_name("depth", i, "pfm")).string(), r.depth);
    dvopt::write_pgm((out / frame_name("mask", i, "pgm")).string(), r.mask);
    gt.append(static_cast<double>(i), spec.poses[i]);
  }
  dvopt::write_trajectory_tum((out / "poses_gt.txt").string(), gt);
  dvopt::write_trajectory_kitti((out / "poses_gt_kitti.txt").string(), gt);

  std::cout << "synth-gen: wrote " << spec.poses.size() << " frames ("
            << spec.width << "x" << spec.height << ") to " << a.out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// optimize

struct OptimizeArgs {
  CommonOpts common;
  std::string in_dir;
  std::string out_dir;
  int budget = 0;
  int levels = 0;
  double lr = 0.0;
  double scale_prior = 0.0;
  std::string chain_mode;
  CLI::Option* budget_opt = nullptr;
  CLI::Option* levels_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* prior_opt = nullptr;
  CLI::Option* chain_opt = nullptr;
};

std::vector<std::string> list_sorted(const std::string& dir,
                                     const std::string& prefix,
                                     const std::string& ext) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > prefix.size() + ext.size() &&
        name.compare(0, prefix.size(), prefix) == 0 &&
        name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
      names.push_back(name);
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

int run_optimize(const OptimizeArgs& a) {
  RunConfig rc = a.common.resolve();
  if (a.budget_opt->count() > 0) rc.opt.iteration_budget = a.budget;
  if (a.levels_opt->count() > 0) rc.opt.pyramid_levels = a.levels;
  if (a.lr_opt->count() > 0) rc.opt.lr = a.lr;
  if (a.prior_opt->count() > 0) rc.opt.scene_scale_prior = a.scale_prior;
  if (a.chain_opt->count() > 0) {
    apply_config_entry(rc, "chain.mode", a.chain_mode, "--chain-mode");
  }
  rc.weights.validate();
  rc.opt.validate();

  const fs::path in(a.in_dir);
  const fs::path intrinsics_path = in / "intrinsics.txt";
  if (!fs::exists(intrinsics_path)) {
    std::cerr << "optimize: missing required intrinsics file: "
              << intrinsics_path.string() << "\n";
    return 1;
  }
  const Intrinsics k = dvopt::read_intrinsics(intrinsics_path.string());

  const std::vector<std::string> names = list_sorted(a.in_dir, "frame_", ".ppm");
  if (names.size() < 3) {
    std::cerr << "optimize: need at least 3 frame_*.ppm images in " << a.in_dir
              << ", found " << names.size() << "\n";
    return 1;
  }
  std::vector<ImageGrid> frames;
  frames.reserve(names.size());
  for (const std::string& n : names) {
    frames.push_back(dvopt::read_ppm((in / n).string()));
    if (!frames.back().same_shape(frames.front())) {
      throw std::runtime_error("optimize: frame size mismatch at " + n);
    }
  }

  const size_t total = frames.size() - 2;
  std::vector<TripletSolution> sols(total);
  const int nthreads = thread_count(total);
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;
  auto worker = [&] {
    for (;;) {
      const size_t t = next.fetch_add(1);
      if (t >= total) return;
      try {
        TripletProblem prob;
        prob.images = {frames[t], frames[t + 1], frames[t + 2]};
        prob.intrinsics = k;
        prob.weights = rc.weights;
        prob.config = rc.opt;
        TripletSolution sol = dvopt::optimize_triplet(prob);
        sol.center_index = static_cast<int>(t) + 1;
        sols[t] = std::move(sol);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty()) {
          first_error = "triplet " + std::to_string(t) + ": " + e.what();
        }
      }
    }
  };
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!first_error.empty()) throw std::runtime_error("optimize: " + first_error);

  const dvopt::ChainResult chain = dvopt::chain_sequence(sols, rc.chain_mode);

  fs::create_directories(a.out_dir);
  const fs::path out(a.out_dir);

  // Depth per frame: the center depth of the triplet centered there; the two
  // boundary frames come from the first and last triplet's outer views.
  dvopt::write_pfm((out / frame_name("depth", 0, "pfm")).string(),
                   sols.front().depths[0]);
  for (size_t t = 0; t < total; ++t) {
    dvopt::write_pfm((out / frame_name("depth", t + 1, "pfm")).string(),
                     sols[t].depths[1]);
  }
  dvopt::write_pfm(
      (out / frame_name("depth", frames.size() - 1, "pfm")).string(),
      sols.back().depths[2]);

  dvopt::write_trajectory_tum((out / "trajectory.txt").string(),
                              chain.trajectory);
  dvopt::write_trajectory_kitti((out / "trajectory_kitti.txt").string(),
                                chain.trajectory);

  {
    std::vector<std::vector<std::string>> rows;
    for (size_t t = 0; t < total; ++t) {
      for (const auto& row : sols[t].trace) {
        rows.push_back({std::to_string(t), std::to_string(row.level),
                        std::to_string(row.iteration),
                        fmt(row.loss.photometric), fmt(row.loss.ssim),
                        fmt(row.loss.smoothness),
                        fmt(row.loss.scale_consistency), fmt(row.loss.cycle),
                        fmt(row.loss.residual_reg), fmt(row.loss.total)});
      }
    }
    dvopt::write_csv((out / "loss_trace.csv").string(),
                     {"triplet", "level", "iteration", "photometric", "ssim",
                      "smoothness", "scale_consistency", "cycle",
                      "residual_reg", "total"},
                     rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < chain.scale_ratios.size(); ++i) {
      rows.push_back({std::to_string(i), fmt(chain.scale_ratios[i])});
    }
    dvopt::write_csv((out / "scale_ratios.csv").string(), {"overlap", "ratio"},
                     rows);
  }

  int exit_code = 0;
  std::string diag;
  for (size_t t = 0; t < total; ++t) {
    const TripletSolution& s = sols[t];
    diag += "triplet " + std::to_string(t) + ": status=" +
            dvopt::opt_status_name(s.status) +
            " iterations=" + std::to_string(s.iterations_used) +
            " final_loss=" + fmt(s.final_loss.total) + "\n";
    if (!s.diagnostics.empty()) diag += s.diagnostics;
    if (s.status == OptStatus::kDiverged) {
      exit_code = 3;
    } else if (s.status == OptStatus::kBudgetExhausted && exit_code == 0) {
      exit_code = 2;
    }
  }
  diag += chain.diagnostics;
  diag += "chain mode " +
          std::string(rc.chain_mode == ChainMode::kRescale ? "rescale"
                                                           : "naive") +
          "\n";
  diag += "exit status " + std::to_string(exit_code) + "\n";
  dvopt::write_file_atomic((out / "diagnostics.txt").string(), diag);

  std::cout << "optimize: " << frames.size() << " frames, " << total
            << " triplets, threads " << nthreads << "\n";
  for (size_t t = 0; t < total; ++t) {
    std::cout << "  triplet " << t << ": "
              << dvopt::opt_status_name(sols[t].status) << " after "
              << sols[t].iterations_used
              << " iterations, loss " << fmt(sols[t].final_loss.total) << "\n";
  }
  std::cout << "optimize: wrote outputs to " << a.out_dir << " (exit "
            << exit_code << ")\n";
  return exit_code;
}

// ---------------------------------------------------------------------------
// grad-check

struct GradArgs {
  CommonOpts common;
  int configs = 120;
  double corrupt = 0.0;
  std::string out_csv;
};

int run_grad_check(const GradArgs& a) {
  const RunConfig rc = a.common.resolve();
  dvopt::GradCheckOptions opts;
  if (a.common.seed_opt != nullptr && a.common.seed_opt->count() > 0) {
    opts.seed = rc.seed;
  }
  opts.configs = a.configs;
  opts.corrupt = a.corrupt;

  const std::vector<dvopt::GradCheckReport> reports =
      dvopt::run_all_gradient_checks(opts);

  int failed = 0;
  std::printf("%-24s %10s %8s %8s %12s  %s\n", "check", "instances", "probes",
              "failures", "max_rel_err", "status");
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    const bool ok = r.pass();
    if (!ok) ++failed;
    std::printf("%-24s %10d %8d %8d %12.3e  %s\n", r.name.c_str(), r.instances,
                r.probes, r.failures, r.max_rel_err, ok ? "PASS" : "FAIL");
    if (!ok && !r.worst.empty()) {
      std::printf("    worst: %s\n", r.worst.c_str());
    }
    rows.push_back({r.name, std::to_string(r.instances),
                    std::to_string(r.probes), std::to_string(r.failures),
                    fmt(r.max_rel_err), ok ? "PASS" : "FAIL"});
  }
  std::printf("grad-check: %zu checks, %d failing\n", reports.size(), failed);
  if (!a.out_csv.empty()) {
    dvopt::write_csv(a.out_csv,
                     {"check", "instances", "probes", "failures",
                      "max_rel_err", "status"},
                     rows);
  }
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// eval-traj

struct EvalTrajArgs {
  CommonOpts common;
  std::string est_path;
  std::string gt_path;
  std::string out_dir = ".";
  double max_dt = 0.02;
};

int run_eval_traj(const EvalTrajArgs& a) {
  (void)a.common.resolve();
  const Trajectory est_all = dvopt::read_trajectory(a.est_path);
  const Trajectory gt_all = dvopt::read_trajectory(a.gt_path);

  Trajectory est, gt;
  if (est_all.size() == gt_all.size()) {
    est = est_all;
    gt = gt_all;
  } else {
    int last_gt = -1;
    for (size_t i = 0; i < est_all.size(); ++i) {
      const int j = gt_all.find_nearest(est_all[i].timestamp, a.max_dt);
      if (j <= last_gt) continue;
      est.append(est_all[i].timestamp, est_all[i].pose);
      gt.append(est_all[i].timestamp, gt_all[j].pose);
      last_gt = j;
    }
  }
  if (est.size() < 3) {
    std::cerr << "eval-traj: need at least 3 associated poses, got "
              << est.size() << " (est " << est_all.size() << ", gt "
              << gt_all.size() << ", max_dt " << a.max_dt << ")\n";
    return 1;
  }

  const dvopt::AlignmentResult align = dvopt::umeyama_align(est, gt);
  const double ate = dvopt::ate_rmse(est, gt, align.sim);
  const dvopt::RpeResult rpe =
      dvopt::segment_rpe(est, gt, dvopt::default_rpe_lengths());

  fs::create_directories(a.out_dir);
  const fs::path out(a.out_dir);
  dvopt::write_csv(
      (out / "ate.csv").string(),
      {"ate_rmse", "scale", "degenerate", "condition", "diagnostic"},
      {{fmt(ate), fmt(align.sim.scale), align.degenerate ? "1" : "0",
        fmt(align.condition), align.diagnostic}});
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : rpe.per_length) {
      rows.push_back({fmt(s.length), std::to_string(s.count), fmt(s.t_err_pct),
                      fmt(s.r_err_deg)});
    }
    rows.push_back({"all", std::to_string(rpe.total_segments),
                    fmt(rpe.avg_t_err_pct), fmt(rpe.avg_r_err_deg)});
    dvopt::write_csv((out / "rpe.csv").string(),
                     {"length_m", "segments", "t_err_pct", "r_err_deg_per_100m"},
                     rows);
  }

  std::cout << "eval-traj: " << est.size() << " associated poses\n";
  std::cout << "  ATE RMSE " << fmt(ate) << " (alignment scale "
            << fmt(align.sim.scale) << ")\n";
  if (!align.diagnostic.empty()) {
    std::cout << "  alignment: " << align.diagnostic << "\n";
  }
  if (rpe.empty()) {
    std::cout << "  RPE: no segments";
    if (!rpe.diagnostic.empty()) std::cout << " (" << rpe.diagnostic << ")";
    std::cout << "\n";
  } else {
    for (const auto& s : rpe.per_length) {
      std::cout << "  RPE " << s.length << " m: " << s.count << " segments, t "
                << fmt(s.t_err_pct) << " %, r " << fmt(s.r_err_deg)
                << " deg/100m\n";
    }
    std::cout << "  RPE avg: t " << fmt(rpe.avg_t_err_pct) << " %, r "
              << fmt(rpe.avg_r_err_deg) << " deg/100m over "
              << rpe.total_segments << " segments\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval-depth

struct EvalDepthArgs {
  CommonOpts common;
  std::string pred_dir;
  std::string gt_dir;
  std::string mask_dir;
  std::string out_dir = ".";
  bool median_scale = true;
  CLI::Option* median_opt = nullptr;
};

std::string mask_name_for(const std::string& depth_name) {
  std::string stem = fs::path(depth_name).stem().string();
  if (stem.rfind("depth", 0) == 0) stem = "mask" + stem.substr(5);
  return stem + ".pgm";
}

int run_eval_depth(const EvalDepthArgs& a) {
  RunConfig rc = a.common.resolve();
  if (a.median_opt != nullptr && a.median_opt->count() > 0) {
    rc.median_scale = a.median_scale;
  }

  const std::vector<std::string> names = list_sorted(a.pred_dir, "", ".pfm");
  if (names.empty()) {
    std::cerr << "eval-depth: no .pfm files in " << a.pred_dir << "\n";
    return 1;
  }

  std::vector<std::vector<std::string>> rows;
  dvopt::DepthMetrics sum;
  double ratio_sum = 0.0;
  size_t valid_total = 0;
  for (const std::string& name : names) {
    const fs::path gt_path = fs::path(a.gt_dir) / name;
    if (!fs::exists(gt_path)) {
      std::cerr << "eval-depth: missing ground truth for " << name << " in "
                << a.gt_dir << "\n";
      return 1;
    }
    const ImageGrid pred = dvopt::read_pfm((fs::path(a.pred_dir) / name).string());
    const ImageGrid gt = dvopt::read_pfm(gt_path.string());
    dvopt::DepthMetrics m;
    if (!a.mask_dir.empty()) {
      const fs::path mask_path = fs::path(a.mask_dir) / mask_name_for(name);
      if (!fs::exists(mask_path)) {
        std::cerr << "eval-depth: missing mask " << mask_path.string() << "\n";
        return 1;
      }
      const ImageGrid mask = dvopt::read_pgm(mask_path.string());
      m = dvopt::depth_metrics(pred, gt, mask, rc.median_scale);
    } else {
      m = dvopt::depth_metrics(pred, gt, rc.median_scale);
    }
    rows.push_back({name, fmt(m.abs_rel), fmt(m.sq_rel), fmt(m.rms),
                    fmt(m.rms_log), fmt(m.delta1), fmt(m.delta2),
                    fmt(m.delta3), std::to_string(m.valid_count),
                    fmt(m.median_ratio)});
    sum.abs_rel += m.abs_rel;
    sum.sq_rel += m.sq_rel;
    sum.rms += m.rms;
    sum.rms_log += m.rms_log;
    sum.delta1 += m.delta1;
    sum.delta2 += m.delta2;
    sum.delta3 += m.delta3;
    valid_total += m.valid_count;
    ratio_sum += m.median_ratio;
  }
  const double n = static_cast<double>(names.size());
  rows.push_back({"avg", fmt(sum.abs_rel / n), fmt(sum.sq_rel / n),
                  fmt(sum.rms / n), fmt(sum.rms_log / n), fmt(sum.delta1 / n),
                  fmt(sum.delta2 / n), fmt(sum.delta3 / n),
                  std::to_string(valid_total), fmt(ratio_sum / n)});

  fs::create_directories(a.out_dir);
  dvopt::write_csv((fs::path(a.out_dir) / "depth_metrics.csv").string(),
                   {"image", "abs_rel", "sq_rel", "rms", "rms_log", "delta1",
                    "delta2", "delta3", "valid_px", "median_ratio"},
                   rows);

  std::cout << "eval-depth: " << names.size() << " images, median scaling "
            << (rc.median_scale ? "on" : "off") << "\n";
  std::cout << "  avg abs_rel " << fmt(sum.abs_rel / n) << ", rms "
            << fmt(sum.rms / n) << ", delta1 " << fmt(sum.delta1 / n) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dvopt: per-pixel depth, ego-motion, and residual motion by direct "
      "optimization of a photometric objective"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth-gen", "render a synthetic scene to frames, depths, and poses");
  synth.common.attach(synth_cmd);
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")
      ->required();
  synth_cmd->add_option("--scene", synth.scene_name,
                        "preset name: plane3, corridor7, moving");
  synth_cmd
      ->add_option("--scene-file", synth.scene_file,
                   "scene description file (overrides --scene)")
      ->check(CLI::ExistingFile);
  synth.width_opt =
      synth_cmd->add_option("--width", synth.width, "re-render width");
  synth.height_opt =
      synth_cmd->add_option("--height", synth.height, "re-render height");

  OptimizeArgs opt;
  CLI::App* opt_cmd = app.add_subcommand(
      "optimize",
      "recover depth and motion from frame_*.ppm + intrinsics.txt");
  opt.common.attach(opt_cmd);
  opt_cmd->add_option("--in-dir", opt.in_dir, "input directory")->required();
  opt_cmd->add_option("--out-dir", opt.out_dir, "output directory")
      ->required();
  opt.budget_opt =
      opt_cmd->add_option("--budget", opt.budget, "iteration budget");
  opt.levels_opt =
      opt_cmd->add_option("--levels", opt.levels, "pyramid levels");
  opt.lr_opt = opt_cmd->add_option("--lr", opt.lr, "learning rate");
  opt.prior_opt = opt_cmd->add_option("--scale-prior", opt.scale_prior,
                                      "scene scale prior (depth init)");
  opt.chain_opt = opt_cmd->add_option("--chain-mode", opt.chain_mode,
                                      "trajectory chaining: naive or rescale");

  GradArgs grad;
  CLI::App* grad_cmd = app.add_subcommand(
      "grad-check", "finite-difference verification of all gradients");
  grad.common.attach(grad_cmd);
  grad_cmd->add_option("--configs", grad.configs,
                       "random instances per check");
  grad_cmd->add_option("--corrupt", grad.corrupt,
                       "perturb analytic values to prove detection");
  grad_cmd->add_option("--out", grad.out_csv, "also write results as CSV");

  EvalTrajArgs etraj;
  CLI::App* etraj_cmd = app.add_subcommand(
      "eval-traj", "trajectory error versus ground truth (ATE + segment RPE)");
  etraj.common.attach(etraj_cmd);
  etraj_cmd->add_option("est", etraj.est_path, "estimated trajectory file")
      ->required()
      ->check(CLI::ExistingFile);
  etraj_cmd->add_option("gt", etraj.gt_path, "ground-truth trajectory file")
      ->required()
      ->check(CLI::ExistingFile);
  etraj_cmd->add_option("--out-dir", etraj.out_dir, "where to write CSVs");
  etraj_cmd->add_option("--max-dt", etraj.max_dt,
                        "timestamp association tolerance in seconds");

  EvalDepthArgs edepth;
  CLI::App* edepth_cmd = app.add_subcommand(
      "eval-depth", "depth error versus ground truth .pfm maps");
  edepth.common.attach(edepth_cmd);
  edepth_cmd->add_option("--pred-dir", edepth.pred_dir, "predicted depth dir")
      ->required();
  edepth_cmd->add_option("--gt-dir", edepth.gt_dir, "ground-truth depth dir")
      ->required();
  edepth_cmd->add_option("--mask-dir", edepth.mask_dir,
                         "validity mask dir (mask_*.pgm)");
  edepth_cmd->add_option("--out-dir", edepth.out_dir, "where to write CSVs");
  edepth.median_opt = edepth_cmd->add_flag(
      "--median-scale,!--no-median-scale", edepth.median_scale,
      "scale predictions by the median depth ratio before scoring");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return run_synth_gen(synth);
    if (opt_cmd->parsed()) return run_optimize(opt);
    if (grad_cmd->parsed()) return run_grad_check(grad);
    if (etraj_cmd->parsed()) return run_eval_traj(etraj);
    if (edepth_cmd->parsed()) return run_eval_depth(edepth);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
