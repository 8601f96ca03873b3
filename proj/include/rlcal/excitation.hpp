#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rlcal/errors.hpp"
#include "rlcal/geometry.hpp"

namespace rlcal {

struct ImuSample {
  double timestamp = 0.0;        // seconds
  Vec3 angular_velocity = Vec3::Zero();     // rad/s, body frame
  Vec3 linear_acceleration = Vec3::Zero();  // m/s^2, body frame
};

struct ImuSequence {
  std::string id;
  std::vector<ImuSample> samples;

  void validate() const {
    for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
      if (!(samples[i + 1].timestamp > samples[i].timestamp)) {
        throw Error("imu timestamps not strictly increasing near index " +
                    std::to_string(i));
      }
    }
  }
};

/// An informative window of one sequence with its motion scores.
struct Segment {
  std::string sequence_id;
  double start = 0.0;
  double end = 0.0;
  double score_rot = 0.0;  // lambda_min(J_rᵀ J_r) / K
  double score_acc = 0.0;  // lambda_min(J_tᵀ J_t) / K
};

struct ExcitationScores {
  double rot = 0.0;
  double acc = 0.0;
};

/// Stacks angular velocities into J_r and accelerations into J_t (after
/// subtracting the window mean when centered, the default) and returns the
/// minimum eigenvalues of the two 3x3 Gram matrices normalized by the window
/// length. Centering makes a constant signal score zero, so a static,
/// gravity-dominated accelerometer never counts as excitation.
inline ExcitationScores excitation_scores(std::span<const ImuSample> window,
                                          bool centered = true) {
  const std::size_t k = window.size();
  if (k < 10) throw Error("excitation_scores: window needs >= 10 samples");
  Vec3 mean_w = Vec3::Zero(), mean_a = Vec3::Zero();
  if (centered) {
    for (const ImuSample& s : window) {
      mean_w += s.angular_velocity;
      mean_a += s.linear_acceleration;
    }
    mean_w /= static_cast<double>(k);
    mean_a /= static_cast<double>(k);
  }
  Mat3 gram_w = Mat3::Zero(), gram_a = Mat3::Zero();
  for (const ImuSample& s : window) {
    const Vec3 w = s.angular_velocity - mean_w;
    const Vec3 a = s.linear_acceleration - mean_a;
    gram_w += w * w.transpose();
    gram_a += a * a.transpose();
  }
  gram_w /= static_cast<double>(k);
  gram_a /= static_cast<double>(k);
  Eigen::SelfAdjointEigenSolver<Mat3> es_w(gram_w), es_a(gram_a);
  ExcitationScores out;
  out.rot = std::max(0.0, es_w.eigenvalues().minCoeff());
  out.acc = std::max(0.0, es_a.eigenvalues().minCoeff());
  return out;
}

struct SelectionOptions {
  double window = 2.0;   // seconds, >= 0.5
  double stride = 0.5;   // seconds, <= window
  double tau_rot = 1e-3;
  double tau_acc = 1e-3;
  bool centered = true;
};

/// Sliding-window scan over every sequence; windows passing both thresholds
/// are merged into maximal segments whose scores are recomputed over the
/// merged span. Output is sorted by descending combined score, ties broken
/// by (sequence id, start). Throws EmptySelection when nothing passes;
/// callers may lower the thresholds or calibrate on all data with a warning.
inline std::vector<Segment> select_segments(
    std::span<const ImuSequence> sequences, const SelectionOptions& opts = {}) {
  if (opts.window < 0.5) throw Error("select_segments: window must be >= 0.5 s");
  if (opts.stride > opts.window || opts.stride <= 0.0) {
    throw Error("select_segments: stride must be in (0, window]");
  }
  std::vector<Segment> merged_all;
  for (const ImuSequence& seq : sequences) {
    if (seq.samples.empty()) continue;
    const double t0 = seq.samples.front().timestamp;
    const double t1 = seq.samples.back().timestamp;
    std::vector<std::pair<double, double>> passing;
    std::vector<double> ts(seq.samples.size());
    for (std::size_t i = 0; i < seq.samples.size(); ++i) {
      ts[i] = seq.samples[i].timestamp;
    }
    for (double start = t0; start + opts.window <= t1 + 1e-12;
         start += opts.stride) {
      const double end = start + opts.window;
      const auto lo = std::lower_bound(ts.begin(), ts.end(), start - 1e-12);
      const auto hi = std::upper_bound(ts.begin(), ts.end(), end + 1e-12);
      const std::size_t a = static_cast<std::size_t>(lo - ts.begin());
      const std::size_t b = static_cast<std::size_t>(hi - ts.begin());
      if (b - a < 10) continue;
      const ExcitationScores s = excitation_scores(
          std::span<const ImuSample>(seq.samples.data() + a, b - a),
          opts.centered);
      if (s.rot >= opts.tau_rot && s.acc >= opts.tau_acc) {
        passing.emplace_back(start, end);
      }
    }
    // Merge overlapping windows into maximal segments.
    std::size_t i = 0;
    while (i < passing.size()) {
      double start = passing[i].first;
      double end = passing[i].second;
      std::size_t j = i + 1;
      while (j < passing.size() && passing[j].first <= end + 1e-12) {
        end = std::max(end, passing[j].second);
        ++j;
      }
      const auto lo = std::lower_bound(ts.begin(), ts.end(), start - 1e-12);
      const auto hi = std::upper_bound(ts.begin(), ts.end(), end + 1e-12);
      const std::size_t a = static_cast<std::size_t>(lo - ts.begin());
      const std::size_t b = static_cast<std::size_t>(hi - ts.begin());
      Segment seg;
      seg.sequence_id = seq.id;
      seg.start = start;
      seg.end = end;
      if (b - a >= 10) {
        const ExcitationScores s = excitation_scores(
            std::span<const ImuSample>(seq.samples.data() + a, b - a),
            opts.centered);
        seg.score_rot = s.rot;
        seg.score_acc = s.acc;
      }
      merged_all.push_back(seg);
      i = j;
    }
  }
  if (merged_all.empty()) {
    throw EmptySelection("select_segments: no window passed the thresholds");
  }
  std::sort(merged_all.begin(), merged_all.end(),
            [](const Segment& a, const Segment& b) {
              const double ca = a.score_rot + a.score_acc;
              const double cb = b.score_rot + b.score_acc;
              if (ca != cb) return ca > cb;
              if (a.sequence_id != b.sequence_id) {
                return a.sequence_id < b.sequence_id;
              }
              return a.start < b.start;
            });
  return merged_all;
}

}  // namespace rlcal
