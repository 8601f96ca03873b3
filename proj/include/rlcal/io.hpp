#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlcal/errors.hpp"
#include "rlcal/excitation.hpp"
#include "rlcal/geometry.hpp"
#include "rlcal/ppo.hpp"

namespace rlcal {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& tok, double& out) {
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end != nullptr && *end == '\0' && end != tok.c_str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Shortest round-trip formatting for reproducible text outputs.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Trajectory file: one pose per line, `timestamp tx ty tz qx qy qz qw`,
/// whitespace-separated, '#' starts a comment. The quaternion is stored
/// trailing-scalar in files and converted to the internal scalar-first
/// layout here. Norms within 1e-3 of 1 are renormalized; worse is an error.
inline Trajectory load_trajectory(const std::string& path,
                                  const std::string& frame = "") {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trajectory file: " + path);
  Trajectory traj;
  traj.frame = frame.empty() ? path : frame;
  std::string line;
  std::size_t lineno = 0;
  double prev_ts = 0.0;
  bool have_prev = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      double v;
      if (!detail::parse_double(tok, v)) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": not a number: '" + tok + "'");
      }
      vals.push_back(v);
    }
    if (vals.size() != 8) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 8 fields (timestamp tx ty tz qx qy qz qw), got " +
                       std::to_string(vals.size()));
    }
    const double norm = std::sqrt(vals[4] * vals[4] + vals[5] * vals[5] +
                                  vals[6] * vals[6] + vals[7] * vals[7]);
    if (std::abs(norm - 1.0) > 1e-3) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": quaternion norm " + std::to_string(norm) +
                       " deviates from 1 by more than 1e-3");
    }
    Pose p;
    p.timestamp = vals[0];
    p.translation = Vec3(vals[1], vals[2], vals[3]);
    p.rotation = UnitQuaternion(vals[7], vals[4], vals[5], vals[6]);
    if (have_prev && !(p.timestamp > prev_ts)) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": timestamp not strictly increasing");
    }
    prev_ts = p.timestamp;
    have_prev = true;
    traj.poses.push_back(p);
  }
  return traj;
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trajectory file: " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const Pose& p : traj.poses) {
    std::snprintf(buf, sizeof(buf),
                  "%.12f %.12f %.12f %.12f %.12f %.12f %.12f %.12f\n",
                  p.timestamp, p.translation.x(), p.translation.y(),
                  p.translation.z(), p.rotation.x(), p.rotation.y(),
                  p.rotation.z(), p.rotation.w());
    out << buf;
  }
}

/// IMU file: CSV `timestamp,wx,wy,wz,ax,ay,az` with an optional header row.
inline ImuSequence load_imu(const std::string& path,
                            const std::string& id = "") {
  static const char* kColumns[7] = {"timestamp", "wx", "wy", "wz",
                                    "ax",        "ay", "az"};
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open IMU file: " + path);
  ImuSequence seq;
  seq.id = id.empty() ? path : id;
  std::string line;
  std::size_t lineno = 0;
  int col_index[7] = {0, 1, 2, 3, 4, 5, 6};
  std::size_t n_cols = 7;
  bool header_checked = false;
  double prev_ts = 0.0;
  bool have_prev = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split(line, ',');
    for (auto& f : fields) f = detail::trim(f);
    if (!header_checked) {
      header_checked = true;
      double probe;
      if (!detail::parse_double(fields[0], probe)) {
        // Header row: map required columns by name.
        for (int c = 0; c < 7; ++c) {
          auto it = std::find(fields.begin(), fields.end(), kColumns[c]);
          if (it == fields.end()) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": missing column '" + kColumns[c] + "'");
          }
          col_index[c] = static_cast<int>(it - fields.begin());
        }
        n_cols = fields.size();
        continue;
      }
    }
    if (fields.size() < n_cols) {
      // Name the first absent positional column.
      const std::size_t missing = std::min<std::size_t>(fields.size(), 6);
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": missing column '" + kColumns[missing] + "'");
    }
    ImuSample s;
    double vals[7];
    for (int c = 0; c < 7; ++c) {
      const std::string& tok = fields[static_cast<std::size_t>(col_index[c])];
      if (!detail::parse_double(tok, vals[c])) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": not a number in column '" + kColumns[c] + "': '" +
                         tok + "'");
      }
    }
    s.timestamp = vals[0];
    s.angular_velocity = Vec3(vals[1], vals[2], vals[3]);
    s.linear_acceleration = Vec3(vals[4], vals[5], vals[6]);
    if (have_prev && !(s.timestamp > prev_ts)) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": timestamp not strictly increasing");
    }
    prev_ts = s.timestamp;
    have_prev = true;
    seq.samples.push_back(s);
  }
  return seq;
}

inline void save_imu(const std::string& path, const ImuSequence& seq) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write IMU file: " + path);
  out << "timestamp,wx,wy,wz,ax,ay,az\n";
  char buf[256];
  for (const ImuSample& s : seq.samples) {
    std::snprintf(buf, sizeof(buf),
                  "%.12f,%.12f,%.12f,%.12f,%.12f,%.12f,%.12f\n", s.timestamp,
                  s.angular_velocity.x(), s.angular_velocity.y(),
                  s.angular_velocity.z(), s.linear_acceleration.x(),
                  s.linear_acceleration.y(), s.linear_acceleration.z());
    out << buf;
  }
}

/// Plain-text key-value configuration with dotted sections
/// (e.g. `ppo.batch_size = 64`). '#' starts a comment.
class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    Config cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": expected key=value");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string val = detail::trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
      }
      cfg.kv_[key] = val;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key,
                         const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    double v;
    if (!detail::parse_double(it->second, v)) {
      throw ParseError("config key '" + key + "': not a number: '" +
                       it->second + "'");
    }
    return v;
  }

  long get_int(const std::string& key, long fallback) const {
    const double v = get_double(key, static_cast<double>(fallback));
    return static_cast<long>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw ParseError("config key '" + key + "': not a boolean: '" + v + "'");
  }

  Vec3 get_vec3(const std::string& key, const Vec3& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const auto parts = detail::split(it->second, ',');
    if (parts.size() != 3) {
      throw ParseError("config key '" + key + "': expected 3 comma-separated values");
    }
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
      double v;
      if (!detail::parse_double(detail::trim(parts[static_cast<std::size_t>(i)]), v)) {
        throw ParseError("config key '" + key + "': not a number: '" +
                         parts[static_cast<std::size_t>(i)] + "'");
      }
      out[i] = v;
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

inline nlohmann::ordered_json pose_to_json(const Pose& p) {
  nlohmann::ordered_json j;
  j["qw"] = p.rotation.w();
  j["qx"] = p.rotation.x();
  j["qy"] = p.rotation.y();
  j["qz"] = p.rotation.z();
  j["tx"] = p.translation.x();
  j["ty"] = p.translation.y();
  j["tz"] = p.translation.z();
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  p.rotation = UnitQuaternion(j.at("qw").get<double>(), j.at("qx").get<double>(),
                              j.at("qy").get<double>(), j.at("qz").get<double>());
  p.translation = Vec3(j.at("tx").get<double>(), j.at("ty").get<double>(),
                       j.at("tz").get<double>());
  return p;
}

inline void save_extrinsic(const std::string& path, const Pose& p) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write extrinsic file: " + path);
  nlohmann::ordered_json j;
  j["extrinsic"] = pose_to_json(p);
  out << j.dump(2) << "\n";
}

/// Accepts either a bare extrinsic object or any JSON document carrying an
/// "extrinsic" object (e.g. a calibration result file).
inline Pose load_extrinsic(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open extrinsic file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.contains("extrinsic")) return pose_from_json(j.at("extrinsic"));
    return pose_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Per-axis evaluation against ground truth: translation as absolute
/// component differences, rotation by decomposing the error quaternion
/// q_err = q_gt^-1 ⊗ q_est into roll-pitch-yaw degrees.
struct ExtrinsicErrors {
  Vec3 translation_abs = Vec3::Zero();   // |t_gt - t_est| per axis, meters
  Vec3 rotation_abs_deg = Vec3::Zero();  // |roll|,|pitch|,|yaw| of q_err
  double mean_translation = 0.0;
  double mean_rotation_deg = 0.0;
  bool gimbal_lock = false;
};

inline ExtrinsicErrors evaluate_extrinsic(const Pose& estimate,
                                          const Pose& ground_truth) {
  ExtrinsicErrors e;
  e.translation_abs =
      (ground_truth.translation - estimate.translation).cwiseAbs();
  const UnitQuaternion q_err =
      ground_truth.rotation.conjugate() * estimate.rotation;
  const EulerRpy rpy = quat_to_euler(q_err);
  e.rotation_abs_deg =
      Vec3(std::abs(rpy.roll_deg), std::abs(rpy.pitch_deg),
           std::abs(rpy.yaw_deg));
  e.gimbal_lock = rpy.gimbal_lock;
  e.mean_translation = e.translation_abs.mean();
  e.mean_rotation_deg = e.rotation_abs_deg.mean();
  return e;
}

inline nlohmann::ordered_json errors_to_json(const ExtrinsicErrors& e) {
  nlohmann::ordered_json j;
  j["translation_abs"] = {e.translation_abs.x(), e.translation_abs.y(),
                          e.translation_abs.z()};
  j["rotation_abs_deg"] = {e.rotation_abs_deg.x(), e.rotation_abs_deg.y(),
                           e.rotation_abs_deg.z()};
  j["mean_translation"] = e.mean_translation;
  j["mean_rotation_deg"] = e.mean_rotation_deg;
  if (e.gimbal_lock) j["gimbal_lock"] = true;
  return j;
}

/// Reward-curve CSV, one row per iteration:
/// iter,mean_reward,max_reward,z1,z2,z3,sx,sy,sz
inline void save_reward_curve(const std::string& path, const TrainTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write reward curve: " + path);
  out << "iter,mean_reward,max_reward,z1,z2,z3,sx,sy,sz\n";
  for (const TraceRow& r : trace.rows) {
    out << r.iteration << ',' << detail::fmt(r.mean_reward) << ','
        << detail::fmt(r.max_reward) << ',' << detail::fmt(r.z[0]) << ','
        << detail::fmt(r.z[1]) << ',' << detail::fmt(r.z[2]) << ','
        << detail::fmt(r.sigma[0]) << ',' << detail::fmt(r.sigma[1]) << ','
        << detail::fmt(r.sigma[2]) << '\n';
  }
}

/// Segment CSV: sequence,start,end,score_rot,score_acc
inline void save_segments_csv(std::ostream& out,
                              const std::vector<Segment>& segments) {
  out << "sequence,start,end,score_rot,score_acc\n";
  for (const Segment& s : segments) {
    out << s.sequence_id << ',' << detail::fmt(s.start) << ','
        << detail::fmt(s.end) << ',' << detail::fmt(s.score_rot) << ','
        << detail::fmt(s.score_acc) << '\n';
  }
}

/// The full calibration report written by the CLI.
struct CalibrationReport {
  Pose estimate;
  double final_reward = 0.0;
  TrainStatus status = TrainStatus::non_converged;
  int iterations = 0;
  bool low_confidence = true;
  double wall_time_sec = 0.0;
  std::uint64_t seed = 0;
  std::optional<ExtrinsicErrors> errors;  // only when ground truth given
  std::map<std::string, std::string> config_echo;
};

inline void save_calibration_result(const std::string& path,
                                    const CalibrationReport& rep) {
  nlohmann::ordered_json j;
  j["extrinsic"] = pose_to_json(rep.estimate);
  const EulerRpy rpy = quat_to_euler(rep.estimate.rotation);
  j["extrinsic"]["euler_rpy_deg"] = {rpy.roll_deg, rpy.pitch_deg, rpy.yaw_deg};
  j["final_reward"] = rep.final_reward;
  j["status"] = to_string(rep.status);
  j["iterations"] = rep.iterations;
  j["low_confidence"] = rep.low_confidence;
  j["wall_time_sec"] = rep.wall_time_sec;
  j["seed"] = rep.seed;
  if (rep.errors) j["errors_vs_ground_truth"] = errors_to_json(*rep.errors);
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : rep.config_echo) cfg[k] = v;
  j["config"] = cfg;
  std::ofstream out(path);
  if (!out) throw Error("cannot write result file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace rlcal
