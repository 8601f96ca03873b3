#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlcal/alignment.hpp"
#include "rlcal/excitation.hpp"
#include "rlcal/geometry.hpp"
#include "rlcal/random.hpp"

namespace rlcal {

constexpr double kGravity = 9.81;  // m/s^2, world-z up

/// Synthetic scenario knobs: per-axis sinusoid superpositions for the pose
/// path, derived IMU streams, and an observation noise model whose level can
/// degrade with the candidate extrinsic's error (the tightly-coupled
/// odometry surrogate).
struct SynthConfig {
  double duration = 60.0;    // seconds
  double pose_rate = 100.0;  // Hz
  double imu_rate = 200.0;   // Hz
  Vec3 rot_amplitude = Vec3(0.6, 0.5, 0.4);      // rad
  Vec3 rot_frequency = Vec3(0.50, 0.40, 0.30);   // Hz
  Vec3 trans_amplitude = Vec3(1.0, 0.8, 0.6);    // m
  Vec3 trans_frequency = Vec3(0.35, 0.45, 0.25); // Hz
  double noise_sigma_t = 0.0;  // m
  double noise_sigma_r = 0.0;  // rad
  double kappa = 0.0;          // odometry-degradation gain
  std::uint64_t seed = 0;

  void validate() const {
    if (!(duration > 0.0 && pose_rate > 0.0 && imu_rate > 0.0)) {
      throw Error("SynthConfig: rates and duration must be positive");
    }
    if (rot_amplitude.minCoeff() < 0.0 || trans_amplitude.minCoeff() < 0.0) {
      throw Error("SynthConfig: amplitudes must be nonnegative");
    }
    if (noise_sigma_t < 0.0 || noise_sigma_r < 0.0) {
      throw Error("SynthConfig: noise sigmas must be nonnegative");
    }
  }
};

namespace detail {

/// Two-harmonic sinusoid with analytic derivatives. The second harmonic at
/// 1.7x the base frequency keeps the path from being exactly periodic.
struct Waveform {
  double amp = 0.0;
  double omega = 0.0;  // 2 pi f
  double phase1 = 0.0;
  double phase2 = 0.0;

  double value(double t) const {
    return amp * (std::sin(omega * t + phase1) +
                  0.5 * std::sin(1.7 * omega * t + phase2));
  }
  double deriv(double t) const {
    return amp * (omega * std::cos(omega * t + phase1) +
                  0.5 * 1.7 * omega * std::cos(1.7 * omega * t + phase2));
  }
  double deriv2(double t) const {
    return -amp * (omega * omega * std::sin(omega * t + phase1) +
                   0.5 * 1.7 * omega * 1.7 * omega *
                       std::sin(1.7 * omega * t + phase2));
  }
};

struct PathModel {
  Waveform rot[3];
  Waveform trans[3];

  Pose pose_at(double t) const {
    const UnitQuaternion qx = UnitQuaternion::from_axis_angle(
        Vec3::UnitX(), rot[0].value(t));
    const UnitQuaternion qy = UnitQuaternion::from_axis_angle(
        Vec3::UnitY(), rot[1].value(t));
    const UnitQuaternion qz = UnitQuaternion::from_axis_angle(
        Vec3::UnitZ(), rot[2].value(t));
    Pose p;
    p.rotation = qx * qy * qz;
    p.translation =
        Vec3(trans[0].value(t), trans[1].value(t), trans[2].value(t));
    p.timestamp = t;
    return p;
  }

  /// Body angular velocity of R(t) = Rx(a) Ry(b) Rz(c): each axis rate is
  /// transported through the rotations applied after it.
  Vec3 angular_velocity_body(double t) const {
    const double b = rot[1].value(t), c = rot[2].value(t);
    const Mat3 rz = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), c).matrix();
    const Mat3 ry = UnitQuaternion::from_axis_angle(Vec3::UnitY(), b).matrix();
    const Vec3 wx = rz.transpose() * (ry.transpose() *
                                      Vec3(rot[0].deriv(t), 0.0, 0.0));
    const Vec3 wy = rz.transpose() * Vec3(0.0, rot[1].deriv(t), 0.0);
    const Vec3 wz(0.0, 0.0, rot[2].deriv(t));
    return wx + wy + wz;
  }

  /// Specific force: body-frame reading of world acceleration plus gravity.
  Vec3 acceleration_body(double t) const {
    const Vec3 acc_world(trans[0].deriv2(t), trans[1].deriv2(t),
                         trans[2].deriv2(t));
    const Pose p = pose_at(t);
    return p.rotation.conjugate().rotate(acc_world + Vec3(0, 0, kGravity));
  }
};

inline PathModel make_path(const SynthConfig& cfg, RngStream& rng) {
  PathModel path;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int axis = 0; axis < 3; ++axis) {
    path.rot[axis].amp = cfg.rot_amplitude[axis];
    path.rot[axis].omega = two_pi * cfg.rot_frequency[axis];
    path.rot[axis].phase1 = rng.uniform(0.0, two_pi);
    path.rot[axis].phase2 = rng.uniform(0.0, two_pi);
  }
  for (int axis = 0; axis < 3; ++axis) {
    path.trans[axis].amp = cfg.trans_amplitude[axis];
    path.trans[axis].omega = two_pi * cfg.trans_frequency[axis];
    path.trans[axis].phase1 = rng.uniform(0.0, two_pi);
    path.trans[axis].phase2 = rng.uniform(0.0, two_pi);
  }
  return path;
}

}  // namespace detail

struct SynthData {
  Trajectory trajectory;
  ImuSequence imu;
};

/// Smooth pose path from per-axis sinusoid superpositions; the IMU stream is
/// the path's analytic derivative (body angular velocity, and specific force
/// including gravity along world z).
inline SynthData synth_trajectory(const SynthConfig& cfg, RngStream& rng) {
  cfg.validate();
  const detail::PathModel path = detail::make_path(cfg, rng);
  SynthData out;
  out.trajectory.frame = "synthetic";
  const auto n_poses =
      static_cast<std::size_t>(std::floor(cfg.duration * cfg.pose_rate)) + 1;
  out.trajectory.poses.reserve(n_poses);
  for (std::size_t i = 0; i < n_poses; ++i) {
    out.trajectory.poses.push_back(
        path.pose_at(static_cast<double>(i) / cfg.pose_rate));
  }
  out.imu.id = "synthetic";
  const auto n_imu =
      static_cast<std::size_t>(std::floor(cfg.duration * cfg.imu_rate)) + 1;
  out.imu.samples.reserve(n_imu);
  for (std::size_t i = 0; i < n_imu; ++i) {
    const double t = static_cast<double>(i) / cfg.imu_rate;
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity = path.angular_velocity_body(t);
    s.linear_acceleration = path.acceleration_body(t);
    out.imu.samples.push_back(s);
  }
  return out;
}

/// One calibration sequence: a reference trajectory and the observed
/// sensor-B trajectory, plus (synthetic mode only) the hidden true extrinsic
/// and the raw noise draws so evaluation can rescale the noise level.
struct SequencePair {
  Trajectory reference;
  Trajectory observed;
  std::optional<ImuSequence> imu;
  std::optional<Pose> true_extrinsic;

  // Synthetic noise model internals; empty in replay mode.
  std::vector<Vec3> noise_rotvec;  // standard-normal draws, one per pose
  std::vector<Vec3> noise_trans;
  double sigma_r = 0.0;
  double sigma_t = 0.0;
  double kappa = 0.0;

  // Cached association (reference index, observed index).
  std::vector<std::pair<std::size_t, std::size_t>> assoc;

  bool synthetic() const { return true_extrinsic.has_value(); }

  void prepare(double max_dt) { assoc = associate(reference, observed, max_dt); }
};

/// Forward model T_B(t) = T_ref(t) · X_true with right-multiplied rotation
/// noise (axis-angle, sigma_r) and additive translation noise (sigma_t). The
/// degradation gain kappa is stored for evaluation time and does not affect
/// the trajectory built here.
inline SequencePair make_observed_pair(const Trajectory& ref,
                                       const Pose& x_true, double sigma_t,
                                       double sigma_r, double kappa,
                                       RngStream& rng) {
  if (ref.empty()) throw Error("make_observed_pair: empty reference");
  SequencePair pair;
  pair.reference = ref;
  pair.true_extrinsic = x_true;
  pair.sigma_t = sigma_t;
  pair.sigma_r = sigma_r;
  pair.kappa = kappa;
  pair.observed.frame = "sensor_b";
  pair.observed.poses.reserve(ref.size());
  pair.noise_rotvec.reserve(ref.size());
  pair.noise_trans.reserve(ref.size());
  for (const Pose& rp : ref.poses) {
    const Vec3 rv(rng.normal(), rng.normal(), rng.normal());
    const Vec3 tv(rng.normal(), rng.normal(), rng.normal());
    pair.noise_rotvec.push_back(rv);
    pair.noise_trans.push_back(tv);
    Pose base = pose_compose(rp, x_true);
    Pose noisy;
    noisy.rotation =
        base.rotation * UnitQuaternion::from_rotation_vector(sigma_r * rv);
    noisy.translation = base.translation + sigma_t * tv;
    noisy.timestamp = rp.timestamp;
    pair.observed.poses.push_back(noisy);
  }
  return pair;
}

/// Replay mode: both trajectories come from files; kappa is necessarily 0
/// because the observed trajectory is fixed data.
inline SequencePair make_replay_pair(Trajectory ref, Trajectory observed,
                                     std::optional<ImuSequence> imu = {}) {
  SequencePair pair;
  pair.reference = std::move(ref);
  pair.observed = std::move(observed);
  pair.imu = std::move(imu);
  return pair;
}

/// Combined extrinsic discrepancy (radians + meters) driving the
/// degradation surrogate.
inline double extrinsic_distance(const Pose& a, const Pose& b) {
  return geodesic_rotation_error(a.rotation, b.rotation) +
         (a.translation - b.translation).norm();
}

/// Noise level (relative to sigma) beyond which the odometry surrogate is
/// declared divergent and the rollout scores the 0 sentinel.
constexpr double kDivergenceNoiseBound = 0.35;  // rad or m

namespace detail {

inline double pair_reward(const Pose& x, const SequencePair& pair,
                          const RewardOptions& opts) {
  const auto* assoc = &pair.assoc;
  std::vector<std::pair<std::size_t, std::size_t>> local;
  if (assoc->empty()) {
    local = associate(pair.reference, pair.observed, opts.max_dt);
    assoc = &local;
  }
  try {
    const bool degraded = pair.synthetic() && pair.kappa > 0.0 &&
                          (pair.sigma_r > 0.0 || pair.sigma_t > 0.0);
    if (!degraded) {
      return trajectory_reward_paired(pair.reference, pair.observed, *assoc,
                                      x, opts)
          .reward;
    }
    const double scale =
        1.0 + pair.kappa * extrinsic_distance(x, *pair.true_extrinsic);
    if (pair.sigma_r * scale > kDivergenceNoiseBound ||
        pair.sigma_t * scale > kDivergenceNoiseBound) {
      return 0.0;
    }
    if (pair.reference.size() != pair.observed.size()) {
      throw Error("pair_reward: synthetic pair lost pose alignment");
    }
    Trajectory degraded_obs;
    degraded_obs.frame = pair.observed.frame;
    degraded_obs.poses.reserve(pair.observed.size());
    const double sr = pair.sigma_r * scale;
    const double st = pair.sigma_t * scale;
    for (std::size_t i = 0; i < pair.reference.size(); ++i) {
      Pose base = pose_compose(pair.reference.poses[i], *pair.true_extrinsic);
      Pose noisy;
      noisy.rotation = base.rotation * UnitQuaternion::from_rotation_vector(
                                           sr * pair.noise_rotvec[i]);
      noisy.translation = base.translation + st * pair.noise_trans[i];
      noisy.timestamp = pair.reference.poses[i].timestamp;
      degraded_obs.poses.push_back(noisy);
    }
    return trajectory_reward_paired(pair.reference, degraded_obs, *assoc, x,
                                    opts)
        .reward;
  } catch (const DegenerateGeometry&) {
    return 0.0;
  }
}

}  // namespace detail

/// Multi-sequence reward: geometric mean of the per-pair rewards
/// (equivalently, the arithmetic mean of the reward exponents), which keeps
/// the aggregate in (0, 1]. Any divergent pair zeroes the whole evaluation.
inline double env_evaluate(const Pose& x, std::span<const SequencePair> pairs,
                           const RewardOptions& opts = {}) {
  if (pairs.empty()) throw Error("env_evaluate: no sequence pairs");
  double log_sum = 0.0;
  for (const SequencePair& pair : pairs) {
    const double r = detail::pair_reward(x, pair, opts);
    if (r <= 0.0) return 0.0;
    log_sum += std::log(r);
  }
  return std::exp(log_sum / static_cast<double>(pairs.size()));
}

/// Crops one pair to the informative segments selected from its IMU stream.
/// Each surviving segment becomes its own pair (multi-sequence aggregation
/// treats them as independent sequences). Returns empty when no segment
/// keeps enough poses; callers then fall back to the full sequence.
inline std::vector<SequencePair> crop_to_segments(
    const SequencePair& pair, std::span<const Segment> segments) {
  std::vector<SequencePair> out;
  const std::string id = pair.imu ? pair.imu->id : std::string();
  for (const Segment& seg : segments) {
    if (pair.imu && seg.sequence_id != id) continue;
    SequencePair cropped;
    cropped.true_extrinsic = pair.true_extrinsic;
    cropped.sigma_r = pair.sigma_r;
    cropped.sigma_t = pair.sigma_t;
    cropped.kappa = pair.kappa;
    cropped.reference.frame = pair.reference.frame;
    cropped.observed.frame = pair.observed.frame;
    const bool aligned = pair.synthetic() &&
                         pair.reference.size() == pair.observed.size();
    for (std::size_t i = 0; i < pair.reference.size(); ++i) {
      const double t = pair.reference.poses[i].timestamp;
      if (t < seg.start - 1e-9 || t > seg.end + 1e-9) continue;
      cropped.reference.poses.push_back(pair.reference.poses[i]);
      if (aligned) {
        cropped.observed.poses.push_back(pair.observed.poses[i]);
        if (!pair.noise_rotvec.empty()) {
          cropped.noise_rotvec.push_back(pair.noise_rotvec[i]);
          cropped.noise_trans.push_back(pair.noise_trans[i]);
        }
      }
    }
    if (!aligned) {
      for (const Pose& p : pair.observed.poses) {
        if (p.timestamp < seg.start - 1e-9 || p.timestamp > seg.end + 1e-9) {
          continue;
        }
        cropped.observed.poses.push_back(p);
      }
    }
    if (pair.imu) {
      ImuSequence imu;
      imu.id = pair.imu->id;
      for (const ImuSample& s : pair.imu->samples) {
        if (s.timestamp < seg.start - 1e-9 || s.timestamp > seg.end + 1e-9) {
          continue;
        }
        imu.samples.push_back(s);
      }
      cropped.imu = std::move(imu);
    }
    if (cropped.reference.size() >= 3 && cropped.observed.size() >= 3) {
      out.push_back(std::move(cropped));
    }
  }
  return out;
}

/// Binds prepared pairs and reward options into the pure reward handle the
/// trainer consumes.
class CalibrationEnv {
 public:
  CalibrationEnv(std::vector<SequencePair> pairs, RewardOptions opts = {})
      : pairs_(std::move(pairs)), opts_(opts) {
    if (pairs_.empty()) throw Error("CalibrationEnv: no sequence pairs");
    for (SequencePair& p : pairs_) p.prepare(opts_.max_dt);
  }

  double reward(const Pose& x) const {
    return env_evaluate(x, pairs_, opts_);
  }

  std::function<double(const Pose&)> reward_fn() const {
    return [this](const Pose& x) { return reward(x); };
  }

  const std::vector<SequencePair>& pairs() const { return pairs_; }
  const RewardOptions& options() const { return opts_; }

 private:
  std::vector<SequencePair> pairs_;
  RewardOptions opts_;
};

}  // namespace rlcal
