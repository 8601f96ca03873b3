#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "rlcal/errors.hpp"
#include "rlcal/geometry.hpp"
#include "rlcal/parallel.hpp"
#include "rlcal/random.hpp"

namespace rlcal {

/// Bingham distribution on S^3: density proportional to exp(xᵀ M Z Mᵀ x).
/// M's columns are the principal axes; Z = diag(z1..z4) with
/// z1 <= z2 <= z3 <= z4 = 0. The axis paired with the zero entry is the mode.
struct BinghamParams {
  Mat4 axes = Mat4::Identity();          // M, orthogonal
  Vec4 concentration = Vec4::Zero();     // Z diagonal, nonpositive, sorted

  BinghamParams() = default;
  BinghamParams(const Mat4& m, const Vec4& z) : axes(m), concentration(z) {
    validate();
  }

  void validate() const {
    const double ortho = (axes.transpose() * axes - Mat4::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    if (ortho > 1e-10) throw Error("BinghamParams: axes not orthogonal");
    if (concentration[3] != 0.0) {
      throw Error("BinghamParams: z4 must be exactly 0");
    }
    for (int i = 0; i < 3; ++i) {
      if (!(concentration[i] <= concentration[i + 1])) {
        throw Error("BinghamParams: concentrations must be sorted ascending");
      }
      if (concentration[i] > 0.0) {
        throw Error("BinghamParams: concentrations must be nonpositive");
      }
    }
  }
};

/// Angular Central Gaussian on S^3 with SPD concentration matrix Lambda;
/// density proportional to (xᵀ Lambda x)^{-2}.
struct AcgParams {
  Mat4 concentration = Mat4::Identity();

  AcgParams() = default;
  explicit AcgParams(const Mat4& lambda) : concentration(lambda) { validate(); }

  void validate() const {
    const double asym =
        (concentration - concentration.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) throw Error("AcgParams: concentration not symmetric");
    Eigen::LLT<Mat4> llt(concentration);
    if (llt.info() != Eigen::Success) {
      throw Error("AcgParams: concentration not positive-definite");
    }
  }
};

/// log N(Z) and its gradient d log N / d z_i = E[u_i^2].
struct NormConst {
  double log_value = 0.0;
  Vec4 dlog_dz = Vec4::Zero();
};

namespace detail {

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& nodes,
                           std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

/// Product-quadrature grid over the hyperspherical angles of S^3:
///   u1 = cos a,  u2 = sin a cos b,  u3 = sin a sin b cos c,
///   u4 = sin a sin b sin c,   dS = sin^2 a sin b da db dc,
/// a, b in [0, pi], c in [0, 2 pi]. Per-axis arrays keep the grid O(n).
struct SphereGrid {
  int n = 0;
  std::vector<double> c1sq, s1sq, w1;  // cos^2 a, sin^2 a, weight * sin^2 a
  std::vector<double> c2sq, s2sq, w2;  // cos^2 b, sin^2 b, weight * sin b
  std::vector<double> c3sq, s3sq, w3;  // cos^2 c, sin^2 c, weight

  explicit SphereGrid(int nodes) : n(nodes) {
    std::vector<double> x, w;
    gauss_legendre(nodes, x, w);
    c1sq.resize(n); s1sq.resize(n); w1.resize(n);
    c2sq.resize(n); s2sq.resize(n); w2.resize(n);
    c3sq.resize(n); s3sq.resize(n); w3.resize(n);
    const double pi = std::numbers::pi;
    for (int i = 0; i < n; ++i) {
      const double a = 0.5 * pi * (x[i] + 1.0);
      const double sa = std::sin(a), ca = std::cos(a);
      c1sq[i] = ca * ca;
      s1sq[i] = sa * sa;
      w1[i] = w[i] * 0.5 * pi * sa * sa;

      const double b = 0.5 * pi * (x[i] + 1.0);
      const double sb = std::sin(b), cb = std::cos(b);
      c2sq[i] = cb * cb;
      s2sq[i] = sb * sb;
      w2[i] = w[i] * 0.5 * pi * sb;

      const double c = pi * (x[i] + 1.0);
      const double sc = std::sin(c), cc = std::cos(c);
      c3sq[i] = cc * cc;
      s3sq[i] = sc * sc;
      w3[i] = w[i] * pi;
    }
  }
};

inline std::shared_ptr<const SphereGrid> shared_grid(int nodes) {
  static std::mutex mutex;
  static std::unordered_map<int, std::shared_ptr<const SphereGrid>> grids;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = grids.find(nodes);
  if (it != grids.end()) return it->second;
  auto grid = std::make_shared<const SphereGrid>(nodes);
  grids.emplace(nodes, grid);
  return grid;
}

struct ZKey {
  std::array<std::uint64_t, 4> bits;
  bool operator==(const ZKey&) const = default;
};

struct ZKeyHash {
  std::size_t operator()(const ZKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t b : k.bits) {
      h ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

inline ZKey z_key(const Vec4& z) {
  ZKey k;
  for (int i = 0; i < 4; ++i) {
    std::uint64_t b;
    const double v = z[i];
    std::memcpy(&b, &v, sizeof(b));
    k.bits[static_cast<std::size_t>(i)] = b;
  }
  return k;
}

}  // namespace detail

/// Normalization-constant engine: deterministic hyperspherical product
/// quadrature (three nested Gauss-Legendre grids, default 64 nodes each).
/// N(Z) and the four second moments E[u_i^2] come out of one pass over the
/// grid. Results are memoized per Z; the cache is thread-safe.
class BinghamNormalization {
 public:
  explicit BinghamNormalization(int nodes = 64, unsigned threads = 0)
      : grid_(detail::shared_grid(nodes)),
        threads_(threads),
        cache_(std::make_shared<Cache>()) {}

  int nodes() const { return grid_->n; }

  NormConst operator()(const Vec4& z) const {
    for (int i = 0; i < 4; ++i) {
      if (z[i] < -200.0) {
        throw Error("log_norm_const: concentration below -200 floor");
      }
      if (z[i] > 0.0) {
        throw Error("log_norm_const: concentration must be nonpositive");
      }
    }
    const detail::ZKey key = detail::z_key(z);
    {
      std::lock_guard<std::mutex> lock(cache_->mutex);
      auto it = cache_->map.find(key);
      if (it != cache_->map.end()) return it->second;
    }
    const NormConst result = compute(z);
    {
      std::lock_guard<std::mutex> lock(cache_->mutex);
      if (cache_->map.size() > 8192) cache_->map.clear();
      cache_->map.emplace(key, result);
    }
    return result;
  }

 private:
  NormConst compute(const Vec4& z) const {
    const detail::SphereGrid& g = *grid_;
    const int n = g.n;
    // Partial sums per outer slice keep the reduction order fixed, so the
    // result is bit-identical for any worker count.
    std::vector<std::array<double, 5>> partial(
        static_cast<std::size_t>(n), {0.0, 0.0, 0.0, 0.0, 0.0});
    parallel_for(
        static_cast<std::size_t>(n),
        [&](std::size_t ii) {
          const int i = static_cast<int>(ii);
          double acc = 0.0, m1 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
          const double u1 = g.c1sq[i];
          const double e1 = z[0] * u1;
          for (int j = 0; j < n; ++j) {
            const double u2 = g.s1sq[i] * g.c2sq[j];
            const double sb = g.s1sq[i] * g.s2sq[j];
            const double e12 = e1 + z[1] * u2;
            const double wij = g.w1[i] * g.w2[j];
            for (int k = 0; k < n; ++k) {
              const double u3 = sb * g.c3sq[k];
              const double u4 = sb * g.s3sq[k];
              const double f =
                  wij * g.w3[k] * std::exp(e12 + z[2] * u3 + z[3] * u4);
              acc += f;
              m1 += f * u1;
              m2 += f * u2;
              m3 += f * u3;
              m4 += f * u4;
            }
          }
          partial[ii] = {acc, m1, m2, m3, m4};
        },
        threads_);
    double total = 0.0;
    Vec4 moments = Vec4::Zero();
    for (int i = 0; i < n; ++i) {
      const auto& p = partial[static_cast<std::size_t>(i)];
      total += p[0];
      moments[0] += p[1];
      moments[1] += p[2];
      moments[2] += p[3];
      moments[3] += p[4];
    }
    NormConst out;
    out.log_value = std::log(total);
    out.dlog_dz = moments / total;
    return out;
  }

  struct Cache {
    std::mutex mutex;
    std::unordered_map<detail::ZKey, NormConst, detail::ZKeyHash> map;
  };

  std::shared_ptr<const detail::SphereGrid> grid_;
  unsigned threads_;
  std::shared_ptr<Cache> cache_;
};

/// One-off normalization with a process-wide engine per node count.
inline NormConst log_norm_const(const Vec4& z, int nodes = 64) {
  static std::mutex mutex;
  static std::unordered_map<int, BinghamNormalization> engines;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = engines.find(nodes);
  if (it == engines.end()) {
    it = engines.emplace(nodes, BinghamNormalization(nodes)).first;
  }
  return it->second(z);
}

/// xᵀ M Z Mᵀ x; the unnormalized log density. Even in x, so exactly
/// antipodally symmetric.
inline double bingham_exponent(const UnitQuaternion& x,
                               const BinghamParams& p) {
  const Vec4 v = p.axes.transpose() * x.coeffs();
  return p.concentration[0] * v[0] * v[0] + p.concentration[1] * v[1] * v[1] +
         p.concentration[2] * v[2] * v[2] + p.concentration[3] * v[3] * v[3];
}

inline double log_pdf(const UnitQuaternion& x, const BinghamParams& p,
                      const BinghamNormalization& engine) {
  return bingham_exponent(x, p) - engine(p.concentration).log_value;
}

inline double log_pdf(const UnitQuaternion& x, const BinghamParams& p) {
  return bingham_exponent(x, p) - log_norm_const(p.concentration).log_value;
}

/// Root b of sum_i 1/(b + 2 a_i) = 1 with a_i = -z_i >= 0, by bisection to
/// 1e-12. The sum decreases from +inf (b -> 0, since a4 = 0) to 0, and at
/// b = 4 it is <= 1, so the root is unique in (0, 4]; equality b = 4 holds
/// exactly when Z = 0.
inline double solve_envelope_b(const Vec4& z) {
  Vec4 a = -z;
  const auto f = [&](double b) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += 1.0 / (b + 2.0 * a[i]);
    return s - 1.0;
  };
  double lo = 1e-9, hi = 4.0;
  const double f_hi = f(hi);
  if (f_hi >= 0.0) return hi;  // all concentrations zero
  for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Envelope coupling constants for rejection sampling from the ACG proposal:
/// the bound exp(xᵀMZMᵀx) <= C* (xᵀ Lambda x)^{-2} is tight with
/// C* = exp(-(4-b)/2) (4/b)^2.
struct EnvelopeConstants {
  double b = 4.0;
  double log_c = 0.0;
};

inline EnvelopeConstants envelope_constants(const Vec4& z) {
  EnvelopeConstants ec;
  ec.b = solve_envelope_b(z);
  ec.log_c = -0.5 * (4.0 - ec.b) + 2.0 * std::log(4.0 / ec.b);
  return ec;
}

/// Optimal ACG envelope for the Bingham: Lambda = I + 2 M A Mᵀ / b with
/// A = -M Z Mᵀ's concentrations, i.e. Lambda = M (I - 2 Z / b) Mᵀ. Its
/// eigenvalue on the mode axis is 1 (the minimum), so the proposal piles its
/// mass where the target does.
inline AcgParams envelope(const BinghamParams& p) {
  const double b = solve_envelope_b(p.concentration);
  Vec4 diag;
  for (int i = 0; i < 4; ++i) diag[i] = 1.0 - 2.0 * p.concentration[i] / b;
  Mat4 lambda = p.axes * diag.asDiagonal() * p.axes.transpose();
  lambda = 0.5 * (lambda + lambda.transpose()).eval();
  return AcgParams(lambda);
}

/// Draws from the ACG: y ~ N(0, Lambda^{-1}), x = y / |y|. The Gaussian is
/// realized through the inverse of Lambda's Cholesky factor.
class AcgSampler {
 public:
  explicit AcgSampler(const AcgParams& params) {
    Eigen::LLT<Mat4> llt(params.concentration);
    if (llt.info() != Eigen::Success) {
      throw Error("AcgSampler: concentration not positive-definite");
    }
    chol_upper_ = llt.matrixL().transpose();
  }

  Vec4 sample(RngStream& rng) const {
    for (;;) {
      Vec4 g(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      const Vec4 y = chol_upper_.triangularView<Eigen::Upper>().solve(g);
      const double n = y.norm();
      if (n > 1e-12) return y / n;
    }
  }

 private:
  Mat4 chol_upper_;  // Lᵀ where Lambda = L Lᵀ
};

inline std::vector<Vec4> acg_sample(const AcgParams& params, RngStream& rng,
                                    std::size_t n) {
  AcgSampler sampler(params);
  std::vector<Vec4> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.sample(rng));
  return out;
}

struct SampleStats {
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
  double acceptance_rate() const {
    return proposals == 0 ? 1.0
                          : static_cast<double>(accepted) /
                                static_cast<double>(proposals);
  }
};

/// Exact Bingham draws by acceptance-rejection with the ACG envelope.
/// A proposal x is accepted with probability
///   exp(xᵀMZMᵀx) / (C* (xᵀ Lambda x)^{-2}).
/// Throws if the acceptance rate over a 10^4-proposal window drops below
/// 1e-3, which would indicate a broken envelope.
class BinghamSampler {
 public:
  explicit BinghamSampler(const BinghamParams& params)
      : params_(params),
        constants_(envelope_constants(params.concentration)),
        acg_params_(envelope(params)),
        acg_(acg_params_) {}

  UnitQuaternion sample(RngStream& rng, SampleStats& stats) {
    for (;;) {
      const Vec4 x = acg_.sample(rng);
      ++stats.proposals;
      ++window_proposals_;
      const Vec4 v = params_.axes.transpose() * x;
      const double s = params_.concentration.dot(v.cwiseProduct(v));
      const double qf = x.dot(acg_params_.concentration * x);
      const double log_accept = s + 2.0 * std::log(qf) - constants_.log_c;
      const bool accept = std::log(rng.uniform_pos()) <= log_accept;
      if (accept) {
        ++stats.accepted;
        ++window_accepted_;
      }
      if (window_proposals_ >= 10000) {
        if (window_accepted_ < 10) {
          throw Error("bingham_sample: acceptance rate below 1e-3");
        }
        window_proposals_ = 0;
        window_accepted_ = 0;
      }
      if (accept) return UnitQuaternion::from_coeffs(x);
    }
  }

  const EnvelopeConstants& constants() const { return constants_; }
  const AcgParams& acg_params() const { return acg_params_; }

 private:
  BinghamParams params_;
  EnvelopeConstants constants_;
  AcgParams acg_params_;
  AcgSampler acg_;
  std::uint64_t window_proposals_ = 0;
  std::uint64_t window_accepted_ = 0;
};

inline std::vector<UnitQuaternion> bingham_sample(const BinghamParams& params,
                                                  RngStream& rng,
                                                  std::size_t n,
                                                  SampleStats* stats = nullptr) {
  BinghamSampler sampler(params);
  SampleStats local;
  std::vector<UnitQuaternion> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.sample(rng, local));
  if (stats) *stats = local;
  return out;
}

struct ModeResult {
  UnitQuaternion rotation;
  bool unique = true;
};

/// The principal axis paired with z4 = 0, sign-normalized for reporting.
/// Flagged non-unique when z3 is within 1e-9 of zero (the distribution is
/// nearly degenerate along more than one axis).
inline ModeResult mode(const BinghamParams& p) {
  ModeResult out;
  out.rotation = UnitQuaternion::from_coeffs(p.axes.col(3)).canonical();
  out.unique = p.concentration[2] <= -1e-9;
  return out;
}

}  // namespace rlcal
