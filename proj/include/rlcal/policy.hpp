#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "rlcal/bingham.hpp"
#include "rlcal/errors.hpp"
#include "rlcal/geometry.hpp"
#include "rlcal/random.hpp"

namespace rlcal {

enum class RotationPolicyKind {
  /// Bingham on S^3 for the rotation block.
  bingham,
  /// Ablation baseline: Gaussian in R^4, sample normalized onto S^3; the
  /// log-probability is that of the raw 4-vector.
  gaussian4,
};

namespace detail {

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double softplus_prime(double x) {
  if (x > 30.0) return 1.0;
  if (x < -30.0) return std::exp(x);
  return 1.0 / (1.0 + std::exp(-x));
}

inline double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double gaussian_log_pdf(double v, double mean, double sigma) {
  const double u = (v - mean) / sigma;
  return -0.5 * u * u - std::log(sigma) -
         0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

/// Unconstrained policy parameters. The rotation block materializes into a
/// Bingham (orthogonal M via Gram-Schmidt, ordered nonpositive Z via
/// cumulative softplus), the translation block into a diagonal Gaussian.
/// Flat storage so a generic first/second-moment optimizer can drive it.
///
/// bingham layout:   [ A(16, col-major) | c1 c2 c3 | mu(3) | log_std(3) ]
/// gaussian4 layout: [ m4(4) | log_std4(4) | mu(3) | log_std(3) ]
struct PolicyParams {
  RotationPolicyKind kind = RotationPolicyKind::bingham;
  Eigen::VectorXd raw;

  static constexpr double kZFloor = -200.0;
  static constexpr double kSigmaMin = 1e-5;
  static constexpr double kSigmaMax = 10.0;

  int dof() const { return kind == RotationPolicyKind::bingham ? 25 : 14; }

  Eigen::Map<Mat4> basis() { return Eigen::Map<Mat4>(raw.data()); }
  Eigen::Map<const Mat4> basis() const {
    return Eigen::Map<const Mat4>(raw.data());
  }
  int c_offset() const { return 16; }
  int mu_offset() const {
    return kind == RotationPolicyKind::bingham ? 19 : 8;
  }
  int log_std_offset() const {
    return kind == RotationPolicyKind::bingham ? 22 : 11;
  }

  /// Uninformative start: identity-plus-noise basis, Z near (-2,-1,-0.5,0),
  /// zero translation mean, 0.5 m standard deviation.
  static PolicyParams initial(RotationPolicyKind kind, RngStream& rng) {
    PolicyParams p;
    p.kind = kind;
    p.raw = Eigen::VectorXd::Zero(kind == RotationPolicyKind::bingham ? 25
                                                                      : 14);
    if (kind == RotationPolicyKind::bingham) {
      Mat4 a = Mat4::Identity();
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) a(i, j) += 0.01 * rng.normal();
      }
      p.basis() = a;
      p.raw[16] = detail::softplus_inverse(1.0);  // z1 gap
      p.raw[17] = detail::softplus_inverse(0.5);  // z2 gap
      p.raw[18] = detail::softplus_inverse(0.5);  // z3 magnitude
    } else {
      for (int i = 0; i < 4; ++i) p.raw[i] = 0.01 * rng.normal();
      // log_std4 = 0 -> unit Gaussian -> near-uniform directions
    }
    const int ls = p.log_std_offset();
    for (int j = 0; j < 3; ++j) p.raw[ls + j] = std::log(0.5);
    return p;
  }
};

namespace detail {

/// Differentiable classical Gram-Schmidt with saved intermediates.
struct GramSchmidtTape {
  Mat4 a = Mat4::Identity();  // input columns
  Mat4 w = Mat4::Identity();  // pre-normalization columns
  Mat4 e = Mat4::Identity();  // orthonormal output columns (= M)
  Vec4 n = Vec4::Ones();      // pivot norms
};

inline bool gram_schmidt(const Mat4& a, GramSchmidtTape& tape) {
  tape.a = a;
  for (int k = 0; k < 4; ++k) {
    Vec4 w = a.col(k);
    for (int j = 0; j < k; ++j) {
      w -= tape.e.col(j).dot(a.col(k)) * tape.e.col(j);
    }
    const double n = w.norm();
    if (n < 1e-8) return false;
    tape.w.col(k) = w;
    tape.n[k] = n;
    tape.e.col(k) = w / n;
  }
  return true;
}

/// Reverse-mode pass: gradient w.r.t. A from gradient w.r.t. the orthonormal
/// columns. Processes columns last-to-first so upstream contributions to
/// earlier columns are complete before they are consumed.
inline Mat4 gram_schmidt_backward(const GramSchmidtTape& tape,
                                  const Mat4& e_bar_in) {
  Mat4 e_bar = e_bar_in;
  Mat4 a_bar = Mat4::Zero();
  for (int k = 3; k >= 0; --k) {
    const Vec4 ek = tape.e.col(k);
    const Vec4 w_bar =
        (e_bar.col(k) - ek * ek.dot(e_bar.col(k))) / tape.n[k];
    Vec4 ak_bar = w_bar;
    for (int j = 0; j < k; ++j) {
      const Vec4 ej = tape.e.col(j);
      const double d = ej.dot(tape.a.col(k));
      e_bar.col(j) += -w_bar.dot(ej) * tape.a.col(k) - d * w_bar;
      ak_bar -= ej * ej.dot(w_bar);
    }
    a_bar.col(k) = ak_bar;
  }
  return a_bar;
}

}  // namespace detail

/// Everything derived from one parameter vector: constrained distribution
/// parameters, the normalization constant and its gradient, and the
/// Gram-Schmidt tape needed for backprop. Read-only during a batch.
struct MaterializedPolicy {
  RotationPolicyKind kind = RotationPolicyKind::bingham;

  // Bingham rotation block
  BinghamParams bingham;
  detail::GramSchmidtTape tape;
  Vec4 raw_z = Vec4::Zero();  // pre-floor values; floor active where < -200
  NormConst norm;

  // Gaussian4 rotation block
  Vec4 g4_mean = Vec4::Zero();
  Vec4 g4_sigma = Vec4::Ones();
  std::array<bool, 4> g4_clamped = {false, false, false, false};

  // Translation block
  Vec3 mu = Vec3::Zero();
  Vec3 sigma = Vec3::Ones();
  std::array<bool, 3> sigma_clamped = {false, false, false};
};

namespace detail {

inline void materialize_common(const PolicyParams& p, MaterializedPolicy& m) {
  const int mu_off = p.mu_offset();
  const int ls_off = p.log_std_offset();
  for (int j = 0; j < 3; ++j) {
    m.mu[j] = p.raw[mu_off + j];
    const double s = std::exp(p.raw[ls_off + j]);
    m.sigma[j] =
        std::clamp(s, PolicyParams::kSigmaMin, PolicyParams::kSigmaMax);
    m.sigma_clamped[static_cast<std::size_t>(j)] = s != m.sigma[j];
  }
}

inline bool materialize_rotation(const PolicyParams& p,
                                 const BinghamNormalization& engine,
                                 MaterializedPolicy& m) {
  if (p.kind == RotationPolicyKind::gaussian4) {
    for (int i = 0; i < 4; ++i) {
      m.g4_mean[i] = p.raw[i];
      const double s = std::exp(p.raw[4 + i]);
      m.g4_sigma[i] =
          std::clamp(s, PolicyParams::kSigmaMin, PolicyParams::kSigmaMax);
      m.g4_clamped[static_cast<std::size_t>(i)] = s != m.g4_sigma[i];
    }
    return true;
  }
  if (!gram_schmidt(p.basis(), m.tape)) return false;
  const double sp3 = softplus(p.raw[18]);
  const double sp2 = softplus(p.raw[17]);
  const double sp1 = softplus(p.raw[16]);
  m.raw_z[2] = -sp3;
  m.raw_z[1] = m.raw_z[2] - sp2;
  m.raw_z[0] = m.raw_z[1] - sp1;
  m.raw_z[3] = 0.0;
  Vec4 z;
  for (int i = 0; i < 4; ++i) z[i] = std::max(m.raw_z[i], PolicyParams::kZFloor);
  m.bingham = BinghamParams(m.tape.e, z);
  m.norm = engine(z);
  return true;
}

}  // namespace detail

/// Materializes constrained parameters; throws if a Gram-Schmidt pivot
/// degenerates (callers holding mutable params should use the guarded
/// overload below instead).
inline MaterializedPolicy materialize(const PolicyParams& p,
                                      const BinghamNormalization& engine) {
  MaterializedPolicy m;
  m.kind = p.kind;
  if (!detail::materialize_rotation(p, engine, m)) {
    throw Error("materialize: degenerate Gram-Schmidt pivot");
  }
  detail::materialize_common(p, m);
  return m;
}

/// Same, but re-randomizes the basis from the run's seed stream if a pivot
/// collapses (a measure-zero event under the optimizer's updates).
inline MaterializedPolicy materialize(PolicyParams& p,
                                      const BinghamNormalization& engine,
                                      RngStream& rng) {
  MaterializedPolicy m;
  m.kind = p.kind;
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (detail::materialize_rotation(p, engine, m)) {
      detail::materialize_common(p, m);
      return m;
    }
    Mat4 a = Mat4::Identity();
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) a(i, j) += 0.01 * rng.normal();
    }
    p.basis() = a;
  }
  throw Error("materialize: repeated Gram-Schmidt failures");
}

/// A candidate extrinsic with the log-probability it was drawn under.
/// raw_rotation keeps the pre-normalization 4-vector for the gaussian4
/// policy (for bingham it simply mirrors the quaternion coefficients).
struct Action {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();
  Vec4 raw_rotation = Vec4(1, 0, 0, 0);
  double log_prob = 0.0;

  Pose pose() const {
    Pose p;
    p.rotation = rotation;
    p.translation = translation;
    return p;
  }
};

/// Log-probability of an action under the materialized policy (value only).
inline double log_prob(const MaterializedPolicy& m, const Action& action) {
  double lp = 0.0;
  if (m.kind == RotationPolicyKind::bingham) {
    lp = bingham_exponent(action.rotation, m.bingham) - m.norm.log_value;
  } else {
    for (int i = 0; i < 4; ++i) {
      lp += detail::gaussian_log_pdf(action.raw_rotation[i], m.g4_mean[i],
                                     m.g4_sigma[i]);
    }
  }
  for (int j = 0; j < 3; ++j) {
    lp += detail::gaussian_log_pdf(action.translation[j], m.mu[j], m.sigma[j]);
  }
  return lp;
}

/// Draws K actions; rotations via the Bingham rejection sampler (or the
/// normalized-Gaussian ablation), translations via per-axis Gaussians. Each
/// action caches the log-probability it was generated with.
inline std::vector<Action> sample_actions(const MaterializedPolicy& m,
                                          RngStream& rng, int k,
                                          SampleStats* stats = nullptr) {
  if (k < 1) throw Error("sample_actions: need K >= 1");
  std::vector<Action> out;
  out.reserve(static_cast<std::size_t>(k));
  SampleStats local;
  if (m.kind == RotationPolicyKind::bingham) {
    BinghamSampler sampler(m.bingham);
    for (int i = 0; i < k; ++i) {
      Action a;
      a.rotation = sampler.sample(rng, local);
      a.raw_rotation = a.rotation.coeffs();
      for (int j = 0; j < 3; ++j) {
        a.translation[j] = m.mu[j] + m.sigma[j] * rng.normal();
      }
      a.log_prob = log_prob(m, a);
      out.push_back(a);
    }
  } else {
    for (int i = 0; i < k; ++i) {
      Action a;
      Vec4 y;
      do {
        for (int c = 0; c < 4; ++c) {
          y[c] = m.g4_mean[c] + m.g4_sigma[c] * rng.normal();
        }
      } while (y.norm() < 1e-9);
      a.raw_rotation = y;
      a.rotation = UnitQuaternion::from_coeffs(y);
      for (int j = 0; j < 3; ++j) {
        a.translation[j] = m.mu[j] + m.sigma[j] * rng.normal();
      }
      a.log_prob = log_prob(m, a);
      out.push_back(a);
      ++local.proposals;
      ++local.accepted;
    }
  }
  if (stats) *stats = local;
  return out;
}

struct LogProbGrad {
  double value = 0.0;
  Eigen::VectorXd grad;  // w.r.t. the raw parameter vector
};

/// Log-probability and its analytic gradient w.r.t. every raw parameter:
/// chain rule through Gram-Schmidt and the cumulative softplus for the
/// rotation block (using d log N / d z from the quadrature), the standard
/// Gaussian score for the translation block. Clamped or floored coordinates
/// contribute zero gradient.
inline LogProbGrad log_prob_grad(const PolicyParams& p,
                                 const MaterializedPolicy& m,
                                 const Action& action) {
  LogProbGrad out;
  out.grad = Eigen::VectorXd::Zero(p.dof());
  if (m.kind == RotationPolicyKind::bingham) {
    const Vec4 q = action.rotation.coeffs();
    const Vec4 v = m.bingham.axes.transpose() * q;
    const Vec4& z = m.bingham.concentration;
    out.value = z.dot(v.cwiseProduct(v)) - m.norm.log_value;

    Mat4 e_bar;
    for (int i = 0; i < 4; ++i) e_bar.col(i) = 2.0 * z[i] * v[i] * q;
    const Mat4 a_bar = detail::gram_schmidt_backward(m.tape, e_bar);
    for (int col = 0; col < 4; ++col) {
      for (int row = 0; row < 4; ++row) {
        out.grad[col * 4 + row] = a_bar(row, col);
      }
    }

    Vec3 g;  // dL/dz_i for the three free concentrations, floor-masked
    for (int i = 0; i < 3; ++i) {
      const bool floored = m.raw_z[i] < PolicyParams::kZFloor;
      g[i] = floored ? 0.0 : v[i] * v[i] - m.norm.dlog_dz[i];
    }
    out.grad[16] = -detail::softplus_prime(p.raw[16]) * g[0];
    out.grad[17] = -detail::softplus_prime(p.raw[17]) * (g[0] + g[1]);
    out.grad[18] = -detail::softplus_prime(p.raw[18]) * (g[0] + g[1] + g[2]);
  } else {
    for (int i = 0; i < 4; ++i) {
      const double u = (action.raw_rotation[i] - m.g4_mean[i]) / m.g4_sigma[i];
      out.value += detail::gaussian_log_pdf(action.raw_rotation[i],
                                            m.g4_mean[i], m.g4_sigma[i]);
      out.grad[i] = u / m.g4_sigma[i];
      out.grad[4 + i] =
          m.g4_clamped[static_cast<std::size_t>(i)] ? 0.0 : u * u - 1.0;
    }
  }
  const int mu_off = p.mu_offset();
  const int ls_off = p.log_std_offset();
  for (int j = 0; j < 3; ++j) {
    const double u = (action.translation[j] - m.mu[j]) / m.sigma[j];
    out.value += detail::gaussian_log_pdf(action.translation[j], m.mu[j],
                                          m.sigma[j]);
    out.grad[mu_off + j] = u / m.sigma[j];
    out.grad[ls_off + j] =
        m.sigma_clamped[static_cast<std::size_t>(j)] ? 0.0 : u * u - 1.0;
  }
  return out;
}

/// Cheap spread measure used as the exploration bonus: -sum z_i / 200 for the
/// Bingham block (log std for gaussian4) plus sum log sigma for translation.
inline LogProbGrad entropy_proxy(const PolicyParams& p,
                                 const MaterializedPolicy& m) {
  LogProbGrad out;
  out.grad = Eigen::VectorXd::Zero(p.dof());
  if (m.kind == RotationPolicyKind::bingham) {
    Vec3 mask;
    for (int i = 0; i < 3; ++i) {
      mask[i] = m.raw_z[i] < PolicyParams::kZFloor ? 0.0 : 1.0;
      out.value -= m.bingham.concentration[i] / 200.0;
    }
    out.grad[16] = detail::softplus_prime(p.raw[16]) * mask[0] / 200.0;
    out.grad[17] =
        detail::softplus_prime(p.raw[17]) * (mask[0] + mask[1]) / 200.0;
    out.grad[18] = detail::softplus_prime(p.raw[18]) *
                   (mask[0] + mask[1] + mask[2]) / 200.0;
  } else {
    for (int i = 0; i < 4; ++i) {
      out.value += std::log(m.g4_sigma[i]);
      out.grad[4 + i] = m.g4_clamped[static_cast<std::size_t>(i)] ? 0.0 : 1.0;
    }
  }
  const int ls_off = p.log_std_offset();
  for (int j = 0; j < 3; ++j) {
    out.value += std::log(m.sigma[j]);
    out.grad[ls_off + j] =
        m.sigma_clamped[static_cast<std::size_t>(j)] ? 0.0 : 1.0;
  }
  return out;
}

struct PointEstimate {
  Pose pose;
  /// Set when the policy has not concentrated (z3 > -5 or any sigma beyond
  /// 0.05 m), i.e. the reported extrinsic should not be trusted yet.
  bool low_confidence = true;
  bool mode_unique = true;
};

inline PointEstimate point_estimate(const MaterializedPolicy& m) {
  PointEstimate out;
  if (m.kind == RotationPolicyKind::bingham) {
    const ModeResult mr = mode(m.bingham);
    out.pose.rotation = mr.rotation;
    out.mode_unique = mr.unique;
    out.low_confidence = m.bingham.concentration[2] > -5.0;
  } else {
    const double n = m.g4_mean.norm();
    if (n < 1e-6) {
      out.pose.rotation = UnitQuaternion::identity();
      out.mode_unique = false;
      out.low_confidence = true;
    } else {
      out.pose.rotation = UnitQuaternion::from_coeffs(m.g4_mean).canonical();
      out.mode_unique = true;
      out.low_confidence = n / m.g4_sigma.maxCoeff() < 20.0;
    }
  }
  out.pose.translation = m.mu;
  if (m.sigma.maxCoeff() > 0.05) out.low_confidence = true;
  return out;
}

}  // namespace rlcal
