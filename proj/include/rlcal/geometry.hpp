#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "rlcal/errors.hpp"

namespace rlcal {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Unit quaternion, Hamilton convention, scalar-first storage (w, x, y, z).
/// q and -q denote the same rotation; every rotation-valued comparison in
/// this library goes through geodesic_rotation_error, which is antipodally
/// invariant.
class UnitQuaternion {
 public:
  UnitQuaternion() : w_(1.0), x_(0.0), y_(0.0), z_(0.0) {}

  UnitQuaternion(double w, double x, double y, double z)
      : w_(w), x_(x), y_(y), z_(z) {
    normalize();
  }

  static UnitQuaternion identity() { return UnitQuaternion(); }

  /// Components as a 4-vector in storage order (w, x, y, z); this is also the
  /// S^3 coordinate used by the Bingham machinery.
  static UnitQuaternion from_coeffs(const Vec4& wxyz) {
    return UnitQuaternion(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n < 1e-300) return identity();
    const double half = 0.5 * angle_rad;
    const double s = std::sin(half) / n;
    return UnitQuaternion(std::cos(half), axis.x() * s, axis.y() * s,
                          axis.z() * s);
  }

  /// Exponential map: rotation vector (axis * angle) to quaternion.
  static UnitQuaternion from_rotation_vector(const Vec3& rv) {
    const double angle = rv.norm();
    if (angle < 1e-12) {
      // First-order expansion keeps the map smooth through zero.
      return UnitQuaternion(1.0, 0.5 * rv.x(), 0.5 * rv.y(), 0.5 * rv.z());
    }
    return from_axis_angle(rv / angle, angle);
  }

  /// Shepperd's method; the input must be a proper rotation matrix.
  static UnitQuaternion from_matrix(const Mat3& r) {
    const double tr = r.trace();
    double w, x, y, z;
    if (tr > 0.0) {
      double s = std::sqrt(tr + 1.0) * 2.0;
      w = 0.25 * s;
      x = (r(2, 1) - r(1, 2)) / s;
      y = (r(0, 2) - r(2, 0)) / s;
      z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
      double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
      w = (r(2, 1) - r(1, 2)) / s;
      x = 0.25 * s;
      y = (r(0, 1) + r(1, 0)) / s;
      z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
      double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
      w = (r(0, 2) - r(2, 0)) / s;
      x = (r(0, 1) + r(1, 0)) / s;
      y = 0.25 * s;
      z = (r(1, 2) + r(2, 1)) / s;
    } else {
      double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
      w = (r(1, 0) - r(0, 1)) / s;
      x = (r(0, 2) + r(2, 0)) / s;
      y = (r(1, 2) + r(2, 1)) / s;
      z = 0.25 * s;
    }
    return UnitQuaternion(w, x, y, z);
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Vec4 coeffs() const { return Vec4(w_, x_, y_, z_); }

  UnitQuaternion conjugate() const {
    return UnitQuaternion(w_, -x_, -y_, -z_, NoNormalize{});
  }

  UnitQuaternion negated() const {
    return UnitQuaternion(-w_, -x_, -y_, -z_, NoNormalize{});
  }

  /// Hamilton product.
  UnitQuaternion operator*(const UnitQuaternion& o) const {
    return UnitQuaternion(
        w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
        w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
        w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
        w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_);
  }

  double dot(const UnitQuaternion& o) const {
    return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
  }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 w (u × v) + 2 u × (u × v), u = (x, y, z)
    const Vec3 u(x_, y_, z_);
    const Vec3 t = 2.0 * u.cross(v);
    return v + w_ * t + u.cross(t);
  }

  Mat3 matrix() const {
    Mat3 r;
    const double xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    r << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
         2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
         2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
    return r;
  }

  /// Logarithm map: rotation vector with angle in [0, pi].
  Vec3 rotation_vector() const {
    const UnitQuaternion q = w_ >= 0.0 ? *this : negated();
    const Vec3 u(q.x_, q.y_, q.z_);
    const double sin_half = u.norm();
    if (sin_half < 1e-12) return 2.0 * u;
    const double angle = 2.0 * std::atan2(sin_half, q.w_);
    return u * (angle / sin_half);
  }

  /// Canonical sign for reporting: nonnegative scalar part, ties broken by
  /// the first nonzero component.
  UnitQuaternion canonical() const {
    const double c[4] = {w_, x_, y_, z_};
    for (double v : c) {
      if (v > 0.0) return *this;
      if (v < 0.0) return negated();
    }
    return *this;
  }

 private:
  struct NoNormalize {};
  UnitQuaternion(double w, double x, double y, double z, NoNormalize)
      : w_(w), x_(x), y_(y), z_(z) {}

  void normalize() {
    const double n2 = w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_;
    if (!(n2 > 1e-24)) {
      throw Error("quaternion norm too small to normalize");
    }
    const double inv = 1.0 / std::sqrt(n2);
    w_ *= inv;
    x_ *= inv;
    y_ *= inv;
    z_ *= inv;
  }

  double w_, x_, y_, z_;
};

/// Geodesic rotation distance in radians: arccos((tr(R1 R2ᵀ) − 1)/2),
/// evaluated as 2·acos(|q1·q2|). Clamping absorbs round-off; the absolute
/// value makes the metric exactly antipodally invariant.
inline double geodesic_rotation_error(const UnitQuaternion& q1,
                                      const UnitQuaternion& q2) {
  const double d = std::min(1.0, std::abs(q1.dot(q2)));
  return 2.0 * std::acos(d);
}

/// Roll-pitch-yaw in degrees, intrinsic x-y-z order: R = Rx(roll) Ry(pitch)
/// Rz(yaw). gimbal_lock is set when |pitch| is within 1e-6 deg of 90 deg; in
/// that case yaw is reported as 0 and roll carries the free angle.
struct EulerRpy {
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  bool gimbal_lock = false;
};

inline EulerRpy quat_to_euler(const UnitQuaternion& q) {
  const Mat3 r = q.matrix();
  constexpr double rad2deg = 180.0 / std::numbers::pi;
  EulerRpy e;
  const double s_pitch = std::clamp(r(0, 2), -1.0, 1.0);
  e.pitch_deg = std::asin(s_pitch) * rad2deg;
  if (90.0 - std::abs(e.pitch_deg) < 1e-6) {
    e.gimbal_lock = true;
    e.yaw_deg = 0.0;
    const double a = std::atan2(r(1, 0), r(1, 1)) * rad2deg;
    e.roll_deg = e.pitch_deg > 0.0 ? a : -a;
  } else {
    e.roll_deg = std::atan2(-r(1, 2), r(2, 2)) * rad2deg;
    e.yaw_deg = std::atan2(-r(0, 1), r(0, 0)) * rad2deg;
  }
  return e;
}

inline UnitQuaternion euler_to_quat(double roll_deg, double pitch_deg,
                                    double yaw_deg) {
  constexpr double deg2rad = std::numbers::pi / 180.0;
  const UnitQuaternion qx =
      UnitQuaternion::from_axis_angle(Vec3::UnitX(), roll_deg * deg2rad);
  const UnitQuaternion qy =
      UnitQuaternion::from_axis_angle(Vec3::UnitY(), pitch_deg * deg2rad);
  const UnitQuaternion qz =
      UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw_deg * deg2rad);
  return qx * qy * qz;
}

/// SE(3) element with a timestamp (seconds). The rotation maps body
/// coordinates into the parent frame; composition follows the homogeneous
/// matrix convention.
struct Pose {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();
  double timestamp = 0.0;
};

/// a·b with rotation q_a ⊗ q_b and translation R_a t_b + t_a; the timestamp
/// is taken from a.
inline Pose pose_compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation.rotate(b.translation) + a.translation;
  out.timestamp = a.timestamp;
  return out;
}

inline Pose pose_inverse(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.conjugate();
  out.translation = -out.rotation.rotate(p.translation);
  out.timestamp = p.timestamp;
  return out;
}

/// Timestamped pose sequence for one sensor frame. Timestamps must be
/// strictly increasing; alignment operations need at least two poses.
struct Trajectory {
  std::string frame;
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }

  void validate() const {
    for (std::size_t i = 0; i + 1 < poses.size(); ++i) {
      if (!(poses[i + 1].timestamp > poses[i].timestamp)) {
        throw Error("trajectory timestamps not strictly increasing near index " +
                    std::to_string(i));
      }
    }
    for (const Pose& p : poses) {
      if (!std::isfinite(p.timestamp)) throw Error("non-finite timestamp");
    }
  }
};

/// Nearest-timestamp association. Each pose of either trajectory is used at
/// most once; candidate pairs are admitted closest-Δt first and pairs with
/// |Δt| > max_dt are dropped. Throws when fewer than 2 pairs survive.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(
    const Trajectory& ref, const Trajectory& est, double max_dt = 0.02) {
  if (ref.empty() || est.empty()) {
    throw Error("associate: empty trajectory");
  }
  struct Cand {
    double dt;
    std::size_t ri, ei;
  };
  std::vector<Cand> cands;
  cands.reserve(est.size());
  std::vector<double> ref_ts(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ref_ts[i] = ref.poses[i].timestamp;
  for (std::size_t j = 0; j < est.size(); ++j) {
    const double t = est.poses[j].timestamp;
    auto it = std::lower_bound(ref_ts.begin(), ref_ts.end(), t);
    std::size_t best = 0;
    if (it == ref_ts.end()) {
      best = ref_ts.size() - 1;
    } else {
      best = static_cast<std::size_t>(it - ref_ts.begin());
      if (best > 0 && t - ref_ts[best - 1] <= ref_ts[best] - t) --best;
    }
    const double dt = std::abs(ref_ts[best] - t);
    if (dt <= max_dt) cands.push_back({dt, best, j});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    if (a.ri != b.ri) return a.ri < b.ri;
    return a.ei < b.ei;
  });
  std::vector<char> ref_used(ref.size(), 0), est_used(est.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(cands.size());
  for (const Cand& c : cands) {
    if (ref_used[c.ri] || est_used[c.ei]) continue;
    ref_used[c.ri] = est_used[c.ei] = 1;
    pairs.emplace_back(c.ri, c.ei);
  }
  std::sort(pairs.begin(), pairs.end());
  if (pairs.size() < 2) {
    throw Error("associate: fewer than 2 pairs within max_dt = " +
                std::to_string(max_dt));
  }
  return pairs;
}

}  // namespace rlcal
