#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace edeva {

struct Vec2 {
  double x{0.0};
  double y{0.0};
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

struct Vec3 {
  double x{0.0};
  double y{0.0};
  double z{0.0};
};

inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }

struct AgentState {
  Vec3 position;
  Vec3 velocity;
  Vec3 acceleration;
  std::string agent_id;
  int timestep{0};
};

struct Trajectory {
  std::vector<Vec2> points;
  double dt{0.1};

  std::size_t length() const { return points.size(); }
};

struct PredictionSet {
  std::string agent_id;
  std::vector<Trajectory> modes;
  std::optional<std::vector<double>> mode_probs;

  std::size_t horizon() const { return modes.empty() ? 0 : modes.front().length(); }

  // Highest-probability mode; uniform (absent) probabilities resolve to mode 0.
  std::size_t best_mode_index() const {
    if (!mode_probs) return 0;
    std::size_t best = 0;
    for (std::size_t m = 1; m < mode_probs->size(); ++m)
      if ((*mode_probs)[m] > (*mode_probs)[best]) best = m;
    return best;
  }
};

enum class ScenarioKind { highway, intersection, merge, replayed };

inline std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::highway: return "highway";
    case ScenarioKind::intersection: return "intersection";
    case ScenarioKind::merge: return "merge";
    case ScenarioKind::replayed: return "replayed";
  }
  throw std::logic_error("unknown scenario kind");
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "highway") return ScenarioKind::highway;
  if (s == "intersection") return ScenarioKind::intersection;
  if (s == "merge") return ScenarioKind::merge;
  if (s == "replayed") return ScenarioKind::replayed;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

inline constexpr const char* kEgoId = "ego";
inline constexpr std::size_t kClassifierWindow = 15;

struct ScenarioLog {
  std::string scenario_id;
  ScenarioKind kind{ScenarioKind::highway};
  std::uint64_t seed{0};
  std::map<std::string, std::vector<AgentState>> agents;  // id -> history, length T_h
  std::map<std::string, Trajectory> futures;              // id -> ground truth, length T_p
  std::vector<Vec2> reference_path;                       // ego route polyline
};

struct PerformanceRecord {
  double efficiency{0.0};  // in [0,1]
  double discomfort{0.0};  // mean |jerk|, m/s^3
  double unsafety{0.0};    // >= 0
  double overall{0.0};
};

struct EvaluationRecord {
  std::string scenario_id;
  std::string predictor_id;
  double p_critical{0.5};
  double gad{0.0};
  double e_error{0.0};
  double gad_norm{0.0};
  double e_error_norm{0.0};
  double score{0.0};
  PerformanceRecord performance;
};

namespace detail {

inline bool finite(double v) { return std::isfinite(v); }
inline bool finite(Vec2 v) { return finite(v.x) && finite(v.y); }
inline bool finite(Vec3 v) { return finite(v.x) && finite(v.y) && finite(v.z); }

}  // namespace detail

// Collects every invariant violation instead of aborting on the first one.
inline std::vector<std::string> validate_scenario(const ScenarioLog& log) {
  std::vector<std::string> violations;
  auto add = [&](const std::string& msg) { violations.push_back(msg); };

  if (log.agents.find(kEgoId) == log.agents.end())
    add("agents: ego agent absent");

  std::size_t history_len = 0;
  bool first = true;
  for (const auto& [id, states] : log.agents) {
    if (first) {
      history_len = states.size();
      first = false;
    } else if (states.size() != history_len) {
      add("agents[" + id + "]: history length differs from other agents");
    }
    for (const auto& st : states) {
      if (st.timestep < 0) {
        add("agents[" + id + "]: negative timestep");
        break;
      }
      if (!detail::finite(st.position) || !detail::finite(st.velocity) ||
          !detail::finite(st.acceleration)) {
        add("agents[" + id + "]: non-finite state component");
        break;
      }
    }
  }
  if (!first && history_len < kClassifierWindow)
    add("agents: history shorter than classifier window");

  for (const auto& [id, traj] : log.futures) {
    if (traj.length() < 1) add("futures[" + id + "]: empty trajectory");
    if (!(traj.dt > 0.0)) add("futures[" + id + "]: dt not positive");
    for (const auto& p : traj.points)
      if (!detail::finite(p)) {
        add("futures[" + id + "]: non-finite point");
        break;
      }
  }
  return violations;
}

inline std::vector<std::string> validate_prediction(const PredictionSet& pred) {
  std::vector<std::string> violations;
  if (pred.modes.empty()) {
    violations.push_back("PredictionSet[" + pred.agent_id + "]: no modes");
    return violations;
  }
  const std::size_t horizon = pred.modes.front().length();
  const double dt = pred.modes.front().dt;
  for (std::size_t m = 0; m < pred.modes.size(); ++m) {
    const auto& mode = pred.modes[m];
    if (mode.length() != horizon)
      violations.push_back("PredictionSet[" + pred.agent_id + "]: mode " +
                           std::to_string(m) + " horizon differs");
    if (mode.dt != dt)
      violations.push_back("PredictionSet[" + pred.agent_id + "]: mode " +
                           std::to_string(m) + " dt differs");
    for (const auto& p : mode.points)
      if (!detail::finite(p)) {
        violations.push_back("PredictionSet[" + pred.agent_id + "]: non-finite point in mode " +
                             std::to_string(m));
        break;
      }
  }
  if (pred.mode_probs) {
    if (pred.mode_probs->size() != pred.modes.size())
      violations.push_back("PredictionSet[" + pred.agent_id + "]: mode_probs size mismatch");
    double sum = 0.0;
    bool negative = false;
    for (double w : *pred.mode_probs) {
      sum += w;
      negative = negative || w < 0.0;
    }
    if (negative)
      violations.push_back("PredictionSet[" + pred.agent_id + "]: negative mode probability");
    if (std::abs(sum - 1.0) > 1e-9)
      violations.push_back("PredictionSet[" + pred.agent_id +
                           "]: mode_probs not normalized (sum != 1)");
  }
  return violations;
}

// Third finite difference of positions over dt^3; length T_p - 3.
inline std::vector<double> jerk_profile(const Trajectory& traj) {
  if (traj.length() < 4)
    throw std::invalid_argument("insufficient points for jerk");
  const double inv_dt3 = 1.0 / (traj.dt * traj.dt * traj.dt);
  std::vector<double> out;
  out.reserve(traj.length() - 3);
  for (std::size_t i = 0; i + 3 < traj.length(); ++i) {
    const Vec2 d = traj.points[i + 3] - 3.0 * traj.points[i + 2] +
                   3.0 * traj.points[i + 1] - traj.points[i];
    out.push_back(norm(d) * inv_dt3);
  }
  return out;
}

}  // namespace edeva
