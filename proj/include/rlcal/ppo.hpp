#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rlcal/parallel.hpp"
#include "rlcal/policy.hpp"

namespace rlcal {

struct TrainConfig {
  int batch_size = 64;       // K, >= 8
  int max_iterations = 2000;  // T_max
  double clip = 0.2;          // epsilon, in (0, 1)
  double learning_rate = 5e-3;
  int epochs = 4;             // E, surrogate ascent passes per batch
  double entropy_coef = 1e-3;
  double baseline_lr = 0.1;
  int convergence_window = 100;
  double convergence_tol = 1e-4;
  double kl_stop = 0.05;      // early epoch-loop abort threshold
  std::uint64_t seed = 1;
  int multistart = 4;
  int quadrature_nodes = 64;
  RotationPolicyKind rotation_policy = RotationPolicyKind::bingham;
  /// Stop as soon as the batch mean reward reaches this value (0 disables);
  /// used for convergence-speed comparisons.
  double target_mean_reward = 0.0;
  /// Zero the rotation-block gradient (translation-only optimization).
  bool freeze_rotation = false;
  unsigned threads = 0;  // 0 = hardware default

  void validate() const {
    if (batch_size < 8) throw Error("TrainConfig: batch_size must be >= 8");
    if (!(clip > 0.0 && clip < 1.0)) {
      throw Error("TrainConfig: clip must be in (0, 1)");
    }
    if (!(learning_rate > 0.0)) {
      throw Error("TrainConfig: learning_rate must be > 0");
    }
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
  }
};

struct TraceRow {
  int iteration = 0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
  Vec3 z = Vec3::Zero();      // z1, z2, z3 (bingham) or zeros
  Vec3 sigma = Vec3::Zero();  // translation stds
  Pose estimate;              // current point estimate
  double acceptance_rate = 1.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
};

enum class TrainStatus { converged, non_converged, degenerate_input };

inline std::string to_string(TrainStatus s) {
  switch (s) {
    case TrainStatus::converged: return "converged";
    case TrainStatus::non_converged: return "non-converged";
    case TrainStatus::degenerate_input: return "degenerate-input";
  }
  return "unknown";
}

struct TrainResult {
  Pose estimate;
  double final_reward = 0.0;
  TrainStatus status = TrainStatus::non_converged;
  int iterations = 0;
  bool low_confidence = true;
  TrainTrace trace;
  PolicyParams params;
  double wall_time_sec = 0.0;
};

/// Adam moments over the flat parameter vector (gradient ascent form).
struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;

  void init(int dof) {
    m = Eigen::VectorXd::Zero(dof);
    v = Eigen::VectorXd::Zero(dof);
    t = 0;
  }

  void ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v.array().matrix() + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    theta += lr * (m / c1).cwiseQuotient(
                      ((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

struct Batch {
  std::vector<Action> actions;
  std::vector<double> rewards;
  std::vector<double> old_log_probs;
};

struct UpdateStats {
  double mean_reward = 0.0;
  double max_reward = 0.0;
  double kl = 0.0;
  int epochs_run = 0;
  double clip_fraction = 0.0;
};

/// One PPO step on a single-state batch: normalized advantages against a
/// learned scalar baseline, E epochs of clipped-surrogate ascent with Adam,
/// and an entropy bonus. The epoch loop aborts when the mean KL proxy
/// (old minus new log-probs) exceeds cfg.kl_stop.
inline UpdateStats ppo_update(PolicyParams& p, AdamState& adam,
                              double& baseline, const Batch& batch,
                              const TrainConfig& cfg,
                              const BinghamNormalization& engine,
                              RngStream& rng) {
  const std::size_t k = batch.actions.size();
  if (k == 0 || batch.rewards.size() != k || batch.old_log_probs.size() != k) {
    throw Error("ppo_update: inconsistent batch");
  }
  UpdateStats stats;
  double mean_r = 0.0, max_r = 0.0;
  for (double r : batch.rewards) {
    mean_r += r;
    max_r = std::max(max_r, r);
  }
  mean_r /= static_cast<double>(k);
  stats.mean_reward = mean_r;
  stats.max_reward = max_r;

  // Advantage = reward - baseline, then batch-normalized; near convergence
  // rewards sit in a narrow band and raw advantages vanish.
  std::vector<double> adv(k);
  double adv_mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    adv[i] = batch.rewards[i] - baseline;
    adv_mean += adv[i];
  }
  adv_mean /= static_cast<double>(k);
  double var = 0.0;
  for (double& a : adv) {
    a -= adv_mean;
    var += a * a;
  }
  const double sd = std::sqrt(var / static_cast<double>(k));
  if (sd < 1e-8) {
    std::fill(adv.begin(), adv.end(), 0.0);
  } else {
    for (double& a : adv) a /= sd;
  }
  baseline += cfg.baseline_lr * (mean_r - baseline);

  for (int e = 0; e < cfg.epochs; ++e) {
    const MaterializedPolicy mat = materialize(p, engine, rng);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.dof());
    double kl = 0.0;
    std::size_t clipped = 0;
    std::vector<LogProbGrad> lpg(k);
    for (std::size_t i = 0; i < k; ++i) {
      lpg[i] = log_prob_grad(p, mat, batch.actions[i]);
      kl += batch.old_log_probs[i] - lpg[i].value;
    }
    kl /= static_cast<double>(k);
    stats.kl = kl;
    if (kl > cfg.kl_stop) break;

    for (std::size_t i = 0; i < k; ++i) {
      const double ratio = std::exp(lpg[i].value - batch.old_log_probs[i]);
      const bool clip_out = (adv[i] > 0.0 && ratio > 1.0 + cfg.clip) ||
                            (adv[i] < 0.0 && ratio < 1.0 - cfg.clip);
      if (clip_out) {
        ++clipped;
        continue;
      }
      grad += (adv[i] * ratio / static_cast<double>(k)) * lpg[i].grad;
    }
    const LogProbGrad ent = entropy_proxy(p, mat);
    grad += cfg.entropy_coef * ent.grad;
    if (cfg.freeze_rotation) grad.head(p.mu_offset()).setZero();
    adam.ascend(p.raw, grad, cfg.learning_rate);
    ++stats.epochs_run;
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(k);
  }
  return stats;
}

/// Pure reward evaluation of one candidate extrinsic; must be reentrant.
using RewardFn = std::function<double(const Pose&)>;

/// Single-start training loop: sample K actions, evaluate rewards in
/// parallel, PPO-update, until T_max or until the mean reward is stable over
/// the convergence window AND the point estimate is no longer flagged
/// low-confidence. Non-convergence returns the best point estimate seen.
inline TrainResult train(const RewardFn& reward_fn, PolicyParams p0,
                         const TrainConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const BinghamNormalization engine(cfg.quadrature_nodes, cfg.threads);
  RngStream root(cfg.seed);
  RngStream stream = root.fork(0x5eed);

  TrainResult result;
  PolicyParams p = std::move(p0);
  AdamState adam;
  adam.init(p.dof());
  double baseline = 0.0;

  Pose best_pose;
  double best_reward = -1.0;
  std::vector<double> mean_history;
  mean_history.reserve(static_cast<std::size_t>(cfg.max_iterations));
  bool converged = false;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    const MaterializedPolicy mat = materialize(p, engine, stream);
    SampleStats sstats;
    Batch batch;
    batch.actions = sample_actions(mat, stream, cfg.batch_size, &sstats);
    batch.rewards.resize(batch.actions.size());
    batch.old_log_probs.resize(batch.actions.size());
    parallel_for(
        batch.actions.size(),
        [&](std::size_t i) {
          batch.rewards[i] = reward_fn(batch.actions[i].pose());
        },
        cfg.threads);
    for (std::size_t i = 0; i < batch.actions.size(); ++i) {
      batch.old_log_probs[i] = batch.actions[i].log_prob;
    }

    const PointEstimate pe = point_estimate(mat);
    const double pe_reward = reward_fn(pe.pose);
    if (pe_reward > best_reward) {
      best_reward = pe_reward;
      best_pose = pe.pose;
    }

    TraceRow row;
    row.iteration = iter;
    double mean_r = 0.0, max_r = 0.0;
    for (double r : batch.rewards) {
      mean_r += r;
      max_r = std::max(max_r, r);
    }
    mean_r /= static_cast<double>(batch.rewards.size());
    row.mean_reward = mean_r;
    row.max_reward = max_r;
    if (p.kind == RotationPolicyKind::bingham) {
      row.z = mat.bingham.concentration.head<3>();
    }
    row.sigma = mat.sigma;
    row.estimate = pe.pose;
    row.acceptance_rate = sstats.acceptance_rate();
    result.trace.rows.push_back(row);
    mean_history.push_back(mean_r);

    if (cfg.target_mean_reward > 0.0 && mean_r >= cfg.target_mean_reward) {
      result.estimate = pe.pose;
      result.iterations = iter;
      result.low_confidence = pe.low_confidence;
      converged = true;
      break;
    }

    const int w = cfg.convergence_window;
    if (iter >= w && !pe.low_confidence) {
      double recent = 0.0, previous = 0.0;
      const std::size_t half = static_cast<std::size_t>(w) / 2;
      const std::size_t end = mean_history.size();
      for (std::size_t i = end - half; i < end; ++i) recent += mean_history[i];
      for (std::size_t i = end - 2 * half; i < end - half; ++i) {
        previous += mean_history[i];
      }
      recent /= static_cast<double>(half);
      previous /= static_cast<double>(half);
      if (std::abs(recent - previous) < cfg.convergence_tol) {
        result.estimate = pe.pose;
        result.iterations = iter;
        result.low_confidence = pe.low_confidence;
        converged = true;
        break;
      }
    }

    ppo_update(p, adam, baseline, batch, cfg, engine, stream);
  }

  if (converged) {
    result.status = TrainStatus::converged;
  } else {
    result.status = TrainStatus::non_converged;
    result.estimate = best_reward >= 0.0 ? best_pose : Pose{};
    result.iterations = cfg.max_iterations;
    const MaterializedPolicy mat = materialize(p, engine, stream);
    result.low_confidence = point_estimate(mat).low_confidence;
  }
  result.final_reward = reward_fn(result.estimate);
  result.params = std::move(p);
  result.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

/// Independent restarts with derived seeds; the run with the best final
/// reward wins. Blunts reward multi-modality from trajectory symmetry.
inline TrainResult train_multistart(const RewardFn& reward_fn,
                                    const TrainConfig& cfg) {
  cfg.validate();
  const int starts = std::max(1, cfg.multistart);
  TrainResult best;
  double best_score = -1.0;
  double total_wall = 0.0;
  std::uint64_t seed_state = cfg.seed;
  for (int s = 0; s < starts; ++s) {
    TrainConfig sub = cfg;
    sub.seed = detail::splitmix64(seed_state);
    RngStream init_stream(RngStream(sub.seed).fork(0x1217).next_u64());
    PolicyParams p0 = PolicyParams::initial(cfg.rotation_policy, init_stream);
    TrainResult r = train(reward_fn, std::move(p0), sub);
    total_wall += r.wall_time_sec;
    // Prefer converged runs, then higher final reward.
    const double score =
        r.final_reward + (r.status == TrainStatus::converged ? 1.0 : 0.0);
    if (score > best_score) {
      best_score = score;
      best = std::move(r);
    }
  }
  best.wall_time_sec = total_wall;
  return best;
}

}  // namespace rlcal
