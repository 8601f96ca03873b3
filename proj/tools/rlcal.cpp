// Command-line front end: synthetic dataset generation, data selection,
// calibration, evaluation against ground truth, and standalone alignment.
//
// Exit codes: 0 success/converged, 2 calibration did not converge,
// 1 input or usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rlcal/env.hpp"
#include "rlcal/excitation.hpp"
#include "rlcal/geometry.hpp"
#include "rlcal/io.hpp"
#include "rlcal/ppo.hpp"

namespace {

using namespace rlcal;

Config load_config_with_overrides(const std::string& path,
                                  const std::vector<std::string>& sets) {
  Config cfg = path.empty() ? Config() : Config::load(path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ParseError("--set expects key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

SynthConfig synth_config_from(const Config& cfg) {
  SynthConfig sc;
  sc.duration = cfg.get_double("synth.duration", sc.duration);
  sc.pose_rate = cfg.get_double("synth.pose_rate", sc.pose_rate);
  sc.imu_rate = cfg.get_double("synth.imu_rate", sc.imu_rate);
  sc.rot_amplitude = cfg.get_vec3("synth.rot_amp", sc.rot_amplitude);
  sc.rot_frequency = cfg.get_vec3("synth.rot_freq", sc.rot_frequency);
  sc.trans_amplitude = cfg.get_vec3("synth.trans_amp", sc.trans_amplitude);
  sc.trans_frequency = cfg.get_vec3("synth.trans_freq", sc.trans_frequency);
  sc.noise_sigma_t = cfg.get_double("synth.sigma_t", sc.noise_sigma_t);
  sc.noise_sigma_r = cfg.get_double("synth.sigma_r", sc.noise_sigma_r);
  sc.kappa = cfg.get_double("synth.kappa", sc.kappa);
  sc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  return sc;
}

Pose extrinsic_from_config(const Config& cfg) {
  const Vec3 axis = cfg.get_vec3("synth.ext_axis", Vec3(1, 1, 1));
  const double angle_deg = cfg.get_double("synth.ext_angle_deg", 20.0);
  const Vec3 trans =
      cfg.get_vec3("synth.ext_trans", Vec3(0.650, -0.372, -0.016));
  Pose x;
  x.rotation = UnitQuaternion::from_axis_angle(
      axis, angle_deg * std::numbers::pi / 180.0);
  x.translation = trans;
  return x;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig tc;
  tc.batch_size = static_cast<int>(cfg.get_int("ppo.batch_size", tc.batch_size));
  tc.max_iterations =
      static_cast<int>(cfg.get_int("ppo.max_iters", tc.max_iterations));
  tc.clip = cfg.get_double("ppo.clip", tc.clip);
  tc.learning_rate = cfg.get_double("ppo.lr", tc.learning_rate);
  tc.epochs = static_cast<int>(cfg.get_int("ppo.epochs", tc.epochs));
  tc.entropy_coef = cfg.get_double("ppo.entropy_coef", tc.entropy_coef);
  tc.baseline_lr = cfg.get_double("ppo.baseline_lr", tc.baseline_lr);
  tc.convergence_window =
      static_cast<int>(cfg.get_int("ppo.conv_window", tc.convergence_window));
  tc.convergence_tol = cfg.get_double("ppo.conv_tol", tc.convergence_tol);
  tc.kl_stop = cfg.get_double("ppo.kl_stop", tc.kl_stop);
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  tc.multistart = static_cast<int>(cfg.get_int("ppo.multistart", tc.multistart));
  tc.quadrature_nodes =
      static_cast<int>(cfg.get_int("quadrature.nodes", tc.quadrature_nodes));
  tc.target_mean_reward =
      cfg.get_double("ppo.target_mean_reward", tc.target_mean_reward);
  tc.freeze_rotation = cfg.get_bool("ppo.freeze_rotation", tc.freeze_rotation);
  tc.threads = static_cast<unsigned>(cfg.get_int("ppo.threads", 0));
  const std::string rot = cfg.get_string("policy.rotation", "bingham");
  if (rot == "bingham") {
    tc.rotation_policy = RotationPolicyKind::bingham;
  } else if (rot == "gaussian4") {
    tc.rotation_policy = RotationPolicyKind::gaussian4;
  } else {
    throw ParseError("policy.rotation must be 'bingham' or 'gaussian4'");
  }
  return tc;
}

RewardOptions reward_options_from(const Config& cfg) {
  RewardOptions ro;
  ro.max_dt = cfg.get_double("assoc.max_dt", ro.max_dt);
  ro.translation_normalizer =
      cfg.get_double("reward.translation_normalizer", ro.translation_normalizer);
  ro.squared_errors = cfg.get_bool("reward.squared_errors", ro.squared_errors);
  return ro;
}

SelectionOptions selection_options_from(const Config& cfg) {
  SelectionOptions so;
  so.window = cfg.get_double("selection.window", so.window);
  so.stride = cfg.get_double("selection.stride", so.stride);
  so.tau_rot = cfg.get_double("selection.tau_rot", so.tau_rot);
  so.tau_acc = cfg.get_double("selection.tau_acc", so.tau_acc);
  so.centered = cfg.get_bool("selection.centered", so.centered);
  return so;
}

int cmd_simulate(const Config& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  SynthConfig sc = synth_config_from(cfg);
  const Pose x_true = extrinsic_from_config(cfg);
  RngStream rng(sc.seed);
  const SynthData data = synth_trajectory(sc, rng);
  RngStream noise_rng = rng.fork(0xb0b);
  const SequencePair pair = make_observed_pair(
      data.trajectory, x_true, sc.noise_sigma_t, sc.noise_sigma_r, sc.kappa,
      noise_rng);
  const std::filesystem::path dir(out_dir);
  save_trajectory((dir / "ref.txt").string(), data.trajectory);
  save_trajectory((dir / "observed.txt").string(), pair.observed);
  save_imu((dir / "imu.csv").string(), data.imu);
  save_extrinsic((dir / "gt.json").string(), x_true);
  std::cout << "wrote " << (dir / "ref.txt").string() << ", observed.txt, "
            << "imu.csv, gt.json (" << data.trajectory.size() << " poses, "
            << data.imu.samples.size() << " IMU samples)\n";
  return 0;
}

int cmd_select(const Config& cfg, const std::vector<std::string>& imu_paths,
               const std::string& out_path) {
  std::vector<ImuSequence> seqs;
  for (const std::string& p : imu_paths) seqs.push_back(load_imu(p));
  std::vector<Segment> segments;
  try {
    segments = select_segments(seqs, selection_options_from(cfg));
  } catch (const EmptySelection& e) {
    std::cerr << "warning: " << e.what() << "\n";
  }
  if (out_path.empty()) {
    save_segments_csv(std::cout, segments);
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write " + out_path);
    save_segments_csv(out, segments);
  }
  return 0;
}

int cmd_calibrate(const Config& cfg, const std::vector<std::string>& refs,
                  const std::vector<std::string>& trajs,
                  const std::vector<std::string>& imus,
                  const std::string& gt_path, const std::string& out_dir) {
  if (refs.size() != trajs.size() || refs.empty()) {
    throw ParseError("calibrate: need matching --ref/--traj lists");
  }
  if (!imus.empty() && imus.size() != refs.size()) {
    throw ParseError("calibrate: --imu list must match --ref list");
  }
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);

  std::vector<SequencePair> pairs;
  std::vector<ImuSequence> imu_seqs;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Trajectory ref = load_trajectory(refs[i]);
    Trajectory obs = load_trajectory(trajs[i]);
    std::optional<ImuSequence> imu;
    if (!imus.empty()) {
      imu = load_imu(imus[i]);
      imu_seqs.push_back(*imu);
    }
    pairs.push_back(make_replay_pair(std::move(ref), std::move(obs),
                                     std::move(imu)));
  }

  const bool selection_enabled = cfg.get_bool("selection.enabled", true);
  if (selection_enabled && !imu_seqs.empty()) {
    try {
      const std::vector<Segment> segments =
          select_segments(imu_seqs, selection_options_from(cfg));
      std::vector<SequencePair> selected;
      for (const SequencePair& pair : pairs) {
        std::vector<SequencePair> cropped = crop_to_segments(pair, segments);
        if (cropped.empty()) {
          std::cerr << "warning: no usable segment for sequence '"
                    << (pair.imu ? pair.imu->id : std::string("?"))
                    << "'; using the full sequence\n";
          selected.push_back(pair);
        } else {
          for (auto& c : cropped) selected.push_back(std::move(c));
        }
      }
      pairs = std::move(selected);
    } catch (const EmptySelection& e) {
      std::cerr << "warning: " << e.what()
                << "; calibrating on all data\n";
    }
  }

  const TrainConfig tc = train_config_from(cfg);
  CalibrationReport rep;
  rep.seed = tc.seed;
  rep.config_echo = cfg.entries();
  rep.config_echo["seed"] = std::to_string(tc.seed);

  std::unique_ptr<CalibrationEnv> env;
  try {
    env = std::make_unique<CalibrationEnv>(std::move(pairs),
                                           reward_options_from(cfg));
  } catch (const Error& e) {
    std::cerr << "degenerate input: " << e.what() << "\n";
    rep.status = TrainStatus::degenerate_input;
    save_calibration_result((dir / "result.json").string(), rep);
    return 2;
  }

  TrainResult result = train_multistart(env->reward_fn(), tc);
  rep.estimate = result.estimate;
  rep.final_reward = result.final_reward;
  rep.status = result.status;
  rep.iterations = result.iterations;
  rep.low_confidence = result.low_confidence;
  rep.wall_time_sec =
      cfg.get_bool("report.wall_time", true) ? result.wall_time_sec : 0.0;
  if (!gt_path.empty()) {
    rep.errors = evaluate_extrinsic(result.estimate, load_extrinsic(gt_path));
  }
  save_calibration_result((dir / "result.json").string(), rep);
  save_reward_curve((dir / "curve.csv").string(), result.trace);

  std::cout << "status: " << to_string(result.status)
            << "  reward: " << result.final_reward
            << "  iterations: " << result.iterations << "\n";
  return result.status == TrainStatus::converged ? 0 : 2;
}

int cmd_evaluate(const std::string& est_path, const std::string& gt_path,
                 const std::string& out_path) {
  const Pose est = load_extrinsic(est_path);
  const Pose gt = load_extrinsic(gt_path);
  const ExtrinsicErrors e = evaluate_extrinsic(est, gt);
  const nlohmann::ordered_json j = errors_to_json(e);
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write " + out_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_align(const std::string& ref_path, const std::string& est_path,
              double max_dt) {
  const Trajectory ref = load_trajectory(ref_path);
  const Trajectory est = load_trajectory(est_path);
  RewardOptions opts;
  opts.max_dt = max_dt;
  Pose identity;
  const AlignmentResult res = trajectory_reward(ref, est, identity, opts);
  double sum_t = 0.0, sum_t2 = 0.0, sum_r = 0.0;
  for (double v : res.translation_errors) {
    sum_t += v;
    sum_t2 += v * v;
  }
  for (double v : res.rotation_errors) sum_r += v;
  const double n = static_cast<double>(res.pair_count);
  nlohmann::ordered_json j;
  j["transform"] = pose_to_json(res.transform);
  j["pairs"] = res.pair_count;
  j["mean_translation_error"] = sum_t / n;
  j["rms_translation_error"] = std::sqrt(sum_t2 / n);
  j["mean_rotation_error_deg"] = sum_r / n * 180.0 / std::numbers::pi;
  j["reward"] = res.reward;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SE(3) extrinsic calibration by policy-gradient search"};
  app.require_subcommand(1);

  std::string config_path, out_path, gt_path, est_path, ref_single, est_single;
  std::vector<std::string> set_overrides, refs, trajs, imus;
  std::optional<std::uint64_t> seed_flag;
  double max_dt = 0.02;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file");
    sub->add_option("--set", set_overrides, "override config entries (key=value)");
    sub->add_option("--seed", seed_flag, "seed override (wins over config)");
  };

  CLI::App* sim = app.add_subcommand("simulate", "emit a synthetic dataset");
  add_common(sim);
  sim->add_option("--out", out_path, "output directory")->required();

  CLI::App* sel = app.add_subcommand("select", "score and select IMU segments");
  add_common(sel);
  sel->add_option("--imu", imus, "IMU CSV file(s)")->required();
  sel->add_option("--out", out_path, "output CSV (default stdout)");

  CLI::App* cal = app.add_subcommand("calibrate", "run the full pipeline");
  add_common(cal);
  cal->add_option("--ref", refs, "reference trajectory file(s)")->required();
  cal->add_option("--traj", trajs, "sensor-B trajectory file(s)")->required();
  cal->add_option("--imu", imus, "IMU CSV file(s), one per sequence");
  cal->add_option("--gt", gt_path, "ground-truth extrinsic for error reporting");
  cal->add_option("--out", out_path, "output directory")->required();

  CLI::App* eva = app.add_subcommand("evaluate", "compare estimate vs ground truth");
  eva->add_option("--est", est_path, "estimate (extrinsic or result JSON)")->required();
  eva->add_option("--gt", gt_path, "ground-truth extrinsic JSON")->required();
  eva->add_option("--out", out_path, "output JSON (default stdout)");

  CLI::App* ali = app.add_subcommand("align", "align two trajectories (APE)");
  ali->add_option("--ref", ref_single, "reference trajectory")->required();
  ali->add_option("--est", est_single, "estimated trajectory")->required();
  ali->add_option("--max-dt", max_dt, "association tolerance (s)");

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = load_config_with_overrides(config_path, set_overrides);
    if (seed_flag) cfg.set("seed", std::to_string(*seed_flag));
    if (sim->parsed()) return cmd_simulate(cfg, out_path);
    if (sel->parsed()) return cmd_select(cfg, imus, out_path);
    if (cal->parsed()) {
      return cmd_calibrate(cfg, refs, trajs, imus, gt_path, out_path);
    }
    if (eva->parsed()) return cmd_evaluate(est_path, gt_path, out_path);
    if (ali->parsed()) return cmd_align(ref_single, est_single, max_dt);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
