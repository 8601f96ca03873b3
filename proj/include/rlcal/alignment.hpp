#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "rlcal/errors.hpp"
#include "rlcal/geometry.hpp"

namespace rlcal {

/// Rigid (scale = 1) least-squares registration: returns the transform G
/// minimizing sum_i | R t_est(i) + t - t_ref(i) |^2, i.e. G maps the
/// estimate's points onto the reference. Reflections are ruled out by the
/// determinant-sign correction in the SVD step. Throws DegenerateGeometry
/// when the cross-covariance has rank < 2 (identical or collinear points).
inline Pose umeyama_align(std::span<const Vec3> ref_pts,
                          std::span<const Vec3> est_pts) {
  const std::size_t n = ref_pts.size();
  if (n != est_pts.size() || n < 3) {
    throw DegenerateGeometry("umeyama_align: need >= 3 point pairs");
  }
  Vec3 mu_ref = Vec3::Zero(), mu_est = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_ref += ref_pts[i];
    mu_est += est_pts[i];
  }
  mu_ref /= static_cast<double>(n);
  mu_est /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cov += (ref_pts[i] - mu_ref) * (est_pts[i] - mu_est).transpose();
  }
  cov /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const double tol = std::max(1e-12, 1e-9 * sv[0]);
  int rank = 0;
  for (int i = 0; i < 3; ++i) rank += sv[i] > tol ? 1 : 0;
  if (rank < 2) {
    throw DegenerateGeometry("umeyama_align: covariance rank < 2");
  }

  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s(2, 2) = -1.0;
  }
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();

  Pose g;
  g.rotation = UnitQuaternion::from_matrix(r);
  g.translation = mu_ref - r * mu_est;
  g.timestamp = 0.0;
  return g;
}

/// Trajectory overload: associates by timestamp first.
inline Pose umeyama_align(const Trajectory& ref, const Trajectory& est,
                          double max_dt = 0.02) {
  const auto pairs = associate(ref, est, max_dt);
  std::vector<Vec3> rp, ep;
  rp.reserve(pairs.size());
  ep.reserve(pairs.size());
  for (const auto& [ri, ei] : pairs) {
    rp.push_back(ref.poses[ri].translation);
    ep.push_back(est.poses[ei].translation);
  }
  return umeyama_align(rp, ep);
}

/// Maps the B-sensor trajectory into the reference sensor's frame under the
/// candidate extrinsic X: every pose becomes T_B(t) · X^{-1}.
inline Trajectory apply_extrinsic(const Trajectory& traj_b, const Pose& x) {
  const Pose x_inv = pose_inverse(x);
  Trajectory out;
  out.frame = traj_b.frame;
  out.poses.reserve(traj_b.poses.size());
  for (const Pose& p : traj_b.poses) {
    out.poses.push_back(pose_compose(p, x_inv));
  }
  return out;
}

struct RewardOptions {
  double max_dt = 0.02;
  /// The translation normalizer in sum e_t / (c N); fixed constant of the
  /// reward definition, exposed for configuration.
  double translation_normalizer = 4.0;
  /// Square the per-pose errors inside the sums (conventional RMSE-style
  /// variant, off by default).
  bool squared_errors = false;
};

/// R = exp(-sqrt(sum e_t / (c N)) - sqrt(sum e_r / (pi^2 N))). The error
/// terms enter unsquared unless opts.squared_errors is set.
inline double reward_from_errors(std::span<const double> e_t,
                                 std::span<const double> e_r,
                                 const RewardOptions& opts = {}) {
  const double n = static_cast<double>(e_t.size());
  double st = 0.0, sr = 0.0;
  for (double v : e_t) st += opts.squared_errors ? v * v : v;
  for (double v : e_r) sr += opts.squared_errors ? v * v : v;
  const double pi2 = std::numbers::pi * std::numbers::pi;
  return std::exp(-std::sqrt(st / (opts.translation_normalizer * n)) -
                  std::sqrt(sr / (pi2 * n)));
}

struct AlignmentResult {
  /// Rigid transform mapping the candidate-transformed trajectory onto the
  /// reference (timestamp carries no meaning).
  Pose transform;
  std::vector<double> translation_errors;  // meters, >= 0
  std::vector<double> rotation_errors;     // radians, in [0, pi]
  std::size_t pair_count = 0;
  double reward = 0.0;  // in (0, 1]; 0 is the divergence sentinel
  bool divergent = false;

  double recompute_reward(const RewardOptions& opts = {}) const {
    return reward_from_errors(translation_errors, rotation_errors, opts);
  }
};

/// Eq.-style reward pipeline on pre-associated index pairs:
/// transform est_b by X^{-1}, rigidly align onto ref, then score per-pose
/// translation and geodesic rotation errors. The alignment rotation acts on
/// orientations as well, so e_r compares fully aligned poses.
inline AlignmentResult trajectory_reward_paired(
    const Trajectory& ref, const Trajectory& est_b,
    std::span<const std::pair<std::size_t, std::size_t>> pairs, const Pose& x,
    const RewardOptions& opts = {}) {
  const std::size_t n = pairs.size();
  if (n < 3) {
    throw DegenerateGeometry("trajectory_reward: need >= 3 associated pairs");
  }
  const Pose x_inv = pose_inverse(x);
  std::vector<Pose> est;
  est.reserve(n);
  std::vector<Vec3> rp, ep;
  rp.reserve(n);
  ep.reserve(n);
  for (const auto& [ri, ei] : pairs) {
    est.push_back(pose_compose(est_b.poses[ei], x_inv));
    rp.push_back(ref.poses[ri].translation);
    ep.push_back(est.back().translation);
  }
  const Pose g = umeyama_align(rp, ep);

  AlignmentResult out;
  out.transform = g;
  out.translation_errors.resize(n);
  out.rotation_errors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Pose& r = ref.poses[pairs[i].first];
    const Vec3 p = g.rotation.rotate(est[i].translation) + g.translation;
    out.translation_errors[i] = (p - r.translation).norm();
    out.rotation_errors[i] =
        geodesic_rotation_error(g.rotation * est[i].rotation, r.rotation);
  }
  out.pair_count = n;
  out.reward = reward_from_errors(out.translation_errors, out.rotation_errors,
                                  opts);
  return out;
}

/// Full pipeline: associate -> apply extrinsic -> align -> score.
inline AlignmentResult trajectory_reward(const Trajectory& ref,
                                         const Trajectory& est_b,
                                         const Pose& x,
                                         const RewardOptions& opts = {}) {
  const auto pairs = associate(ref, est_b, opts.max_dt);
  return trajectory_reward_paired(ref, est_b, pairs, x, opts);
}

}  // namespace rlcal
