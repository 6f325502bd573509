#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <future>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/metrics.hpp"
#include "edeva/random.hpp"
#include "edeva/scenarionn.hpp"

namespace edeva {

inline constexpr std::size_t kHorizonSteps = 15;   // T_p
inline constexpr std::size_t kHistorySteps = 20;   // T_h
inline constexpr double kStepSeconds = 0.1;        // dt

// ---------------------------------------------------------------------------
// Predictor kinds
// ---------------------------------------------------------------------------

struct PredictorKind {
  enum class Type { constant_velocity, noisy_cv, multimodal_maneuver, oracle_blend };
  Type type{Type::constant_velocity};
  double sigma{0.0};   // noisy_cv, m/s perturbation scale
  int n_modes{6};      // multimodal_maneuver, in [2,6]
  double alpha{1.0};   // oracle_blend, in [0,1]

  void validate() const {
    if (sigma < 0.0) throw std::invalid_argument("predictor: sigma must be >= 0");
    if (n_modes < 2 || n_modes > 6)
      throw std::invalid_argument("predictor: n_modes must be in [2,6]");
    if (alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("predictor: alpha must be in [0,1]");
  }

  std::string id() const {
    switch (type) {
      case Type::constant_velocity: return "cv";
      case Type::noisy_cv: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "noisy_cv_%.2f", sigma);
        return buf;
      }
      case Type::multimodal_maneuver: return "multimodal_" + std::to_string(n_modes);
      case Type::oracle_blend: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "oracle_%.2f", alpha);
        return buf;
      }
    }
    throw std::logic_error("unknown predictor type");
  }

  // "cv", "noisy_cv:1.2", "multimodal:6", "oracle:0.8"
  static PredictorKind parse(const std::string& text) {
    PredictorKind kind;
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (name == "cv") {
      kind.type = Type::constant_velocity;
    } else if (name == "noisy_cv") {
      kind.type = Type::noisy_cv;
      kind.sigma = arg.empty() ? 1.0 : std::stod(arg);
    } else if (name == "multimodal") {
      kind.type = Type::multimodal_maneuver;
      kind.n_modes = arg.empty() ? 6 : std::stoi(arg);
    } else if (name == "oracle") {
      kind.type = Type::oracle_blend;
      kind.alpha = arg.empty() ? 1.0 : std::stod(arg);
    } else {
      throw std::invalid_argument("unknown predictor kind: " + text);
    }
    kind.validate();
    return kind;
  }
};

// M=6 modes x 15 steps (multimodal_maneuver emits its configured mode count).
// The optional truth segment feeds oracle_blend; CV extends past its end.
inline PredictionSet predict(const PredictorKind& kind,
                             const std::vector<AgentState>& history, double dt,
                             const Trajectory* truth, std::mt19937_64& rng) {
  if (history.size() < 2)
    throw std::invalid_argument("predict: history too short for a velocity estimate");
  kind.validate();
  const AgentState& last = history.back();
  const Vec2 p0{last.position.x, last.position.y};
  const Vec2 v0{last.velocity.x, last.velocity.y};

  auto cv_point = [&](std::size_t k) { return p0 + (static_cast<double>(k + 1) * dt) * v0; };
  auto make_mode = [&]() {
    Trajectory t;
    t.dt = dt;
    t.points.reserve(kHorizonSteps);
    return t;
  };

  PredictionSet out;
  out.agent_id = last.agent_id;
  switch (kind.type) {
    case PredictorKind::Type::constant_velocity: {
      Trajectory mode = make_mode();
      for (std::size_t k = 0; k < kHorizonSteps; ++k) mode.points.push_back(cv_point(k));
      out.modes.assign(6, mode);
      break;
    }
    case PredictorKind::Type::noisy_cv: {
      // mode 0 keeps the unperturbed hypothesis (the MAP estimate); the
      // remaining modes fan out with velocity perturbations of scale sigma,
      // dominantly along-track (timing uncertainty dwarfs lateral uncertainty
      // for lane-bound traffic). The per-scene multiplier models a predictor
      // that is confident on some scenes and diffuse on others; the realized
      // spread is what GAD measures.
      const double speed = norm(v0);
      const Vec2 heading = speed > 1e-6 ? (1.0 / speed) * v0 : Vec2{1.0, 0.0};
      const Vec2 left{-heading.y, heading.x};
      std::uniform_real_distribution<double> scale_draw(0.25, 1.9);
      const double scale = kind.sigma * scale_draw(rng);
      std::normal_distribution<double> noise(0.0, 1.0);
      for (int m = 0; m < 6; ++m) {
        Vec2 dv{0.0, 0.0};
        if (m > 0) {
          const double d_lon = scale * noise(rng);
          const double d_lat = 0.3 * scale * noise(rng);
          dv = d_lon * heading + d_lat * left;
        }
        Trajectory mode = make_mode();
        for (std::size_t k = 0; k < kHorizonSteps; ++k) {
          const double t = static_cast<double>(k + 1) * dt;
          mode.points.push_back(p0 + t * (v0 + dv));
        }
        out.modes.push_back(std::move(mode));
      }
      // imperfect mode ranking: about half the time the top-scored hypothesis
      // is not the unperturbed one (best-mode error metrics inherit this
      // unreliability)
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      std::uniform_int_distribution<int> alt(1, 5);
      const int ranked_first = u01(rng) < 0.5 ? 0 : alt(rng);
      std::vector<double> probs(6, 0.14);
      probs[ranked_first] = 0.30;
      out.mode_probs = std::move(probs);
      break;
    }
    case PredictorKind::Type::multimodal_maneuver: {
      const double speed = norm(v0);
      const Vec2 heading = speed > 1e-6 ? (1.0 / speed) * v0 : Vec2{1.0, 0.0};
      const Vec2 left{-heading.y, heading.x};
      // (longitudinal accel, lateral accel) per maneuver primitive
      const std::array<std::pair<double, double>, 6> primitives{{
          {0.0, 0.0},    // keep
          {-3.0, 0.0},   // brake
          {2.5, 0.0},    // accelerate
          {0.0, 2.0},    // left
          {0.0, -2.0},   // right
          {0.0, 4.0},    // hard-left
      }};
      for (int m = 0; m < kind.n_modes; ++m) {
        const auto [a_lon, a_lat] = primitives[m];
        Trajectory mode = make_mode();
        for (std::size_t k = 0; k < kHorizonSteps; ++k) {
          const double t = static_cast<double>(k + 1) * dt;
          // braking halts instead of reversing
          double lon = speed * t + 0.5 * a_lon * t * t;
          if (a_lon < 0.0) {
            const double t_stop = speed / -a_lon;
            if (t > t_stop) lon = 0.5 * speed * t_stop;
          }
          const double lat = 0.5 * a_lat * t * t;
          mode.points.push_back(p0 + lon * heading + lat * left);
        }
        out.modes.push_back(std::move(mode));
      }
      break;
    }
    case PredictorKind::Type::oracle_blend: {
      Trajectory mode = make_mode();
      for (std::size_t k = 0; k < kHorizonSteps; ++k) {
        const Vec2 cv = cv_point(k);
        if (truth && k < truth->length())
          mode.points.push_back(kind.alpha * truth->points[k] + (1.0 - kind.alpha) * cv);
        else
          mode.points.push_back(cv);
      }
      out.modes.assign(6, mode);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

namespace detail {

// Constant-acceleration motion spec; the future may switch to an "intent"
// acceleration invisible in the history (the part CV extrapolation misses).
struct MotionSpec {
  Vec2 start;            // position at timestep 0
  Vec2 velocity;         // history velocity
  Vec2 accel_history{};  // during history
  Vec2 accel_future{};   // intent acceleration, replaces accel_history after onset
  double accel_onset{0.0};  // seconds after history end before the intent kicks in
  Vec2 lateral_blend{};  // extra displacement target reached smoothly in future
  double blend_span{static_cast<double>(kHorizonSteps) * kStepSeconds};
};

inline Vec2 position_at(const MotionSpec& m, std::size_t step) {
  const double t = static_cast<double>(step) * kStepSeconds;
  const double t_h = static_cast<double>(kHistorySteps - 1) * kStepSeconds;
  Vec2 p = m.start + t * m.velocity + (0.5 * t * t) * m.accel_history;
  if (t > t_h) {
    const double tf = std::max(0.0, t - t_h - m.accel_onset);
    p = p + (0.5 * tf * tf) * (m.accel_future - m.accel_history);
    const double u = std::clamp((t - t_h) / m.blend_span, 0.0, 1.0);
    const double blend = u * u * (3.0 - 2.0 * u);  // smoothstep
    p = p + blend * m.lateral_blend;
  }
  return p;
}

inline std::vector<AgentState> history_states(const MotionSpec& m, const std::string& id) {
  std::vector<AgentState> states;
  states.reserve(kHistorySteps);
  for (std::size_t k = 0; k < kHistorySteps; ++k) {
    AgentState st;
    st.agent_id = id;
    st.timestep = static_cast<int>(k);
    const Vec2 p = position_at(m, k);
    const Vec2 prev = k > 0 ? position_at(m, k - 1) : position_at(m, 0);
    const Vec2 next = position_at(m, k + 1);
    const Vec2 v = (0.5 / kStepSeconds) * (next - prev);
    const Vec2 v_exact = k > 0 ? v : (1.0 / kStepSeconds) * (next - p);
    st.position = {p.x, p.y, 0.0};
    st.velocity = {v_exact.x, v_exact.y, 0.0};
    const Vec2 a = m.accel_history;
    st.acceleration = {a.x, a.y, 0.0};
    states.push_back(st);
  }
  return states;
}

inline Trajectory future_trajectory(const MotionSpec& m) {
  Trajectory t;
  t.dt = kStepSeconds;
  t.points.reserve(kHorizonSteps);
  for (std::size_t k = 1; k <= kHorizonSteps; ++k)
    t.points.push_back(position_at(m, kHistorySteps - 1 + k));
  return t;
}

}  // namespace detail

// Seeded, replayable scenario. Highway: near-parallel flow; intersection /
// merge: crossing or merging conflict with randomized timing and a future
// "intent" acceleration the history does not reveal.
inline ScenarioLog generate_scenario(ScenarioKind kind, std::uint64_t seed, int n_agents) {
  if (n_agents < 2 || n_agents > 8)
    throw std::invalid_argument("generate_scenario: n_agents must be in [2,8]");
  if (kind == ScenarioKind::replayed)
    throw std::invalid_argument("generate_scenario: unsupported kind 'replayed'");

  auto rng = make_engine(derive_seed(seed, "scenario"));
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  ScenarioLog log;
  log.kind = kind;
  log.seed = seed;
  log.scenario_id = to_string(kind) + "_" + std::to_string(seed);

  std::map<std::string, detail::MotionSpec> motions;

  if (kind == ScenarioKind::highway) {
    const double v_base = uni(8.0, 12.0);
    const int ego_lane = static_cast<int>(uni(0.0, 3.0));
    std::vector<double> lane_front_x(4, -1e9);
    detail::MotionSpec ego;
    ego.start = {0.0, 3.5 * ego_lane};
    ego.velocity = {v_base + uni(-0.8, 0.8), 0.0};
    motions[kEgoId] = ego;
    lane_front_x[ego_lane] = 0.0;
    int first_agent = 1;
    if (uni(0.0, 1.0) < 0.5 && n_agents > 1) {
      // mild pressure: a slower lead the ego has to plan around smoothly;
      // stays non-critical (closing speeds keep TTC above the label threshold)
      detail::MotionSpec lead;
      lead.start = {uni(14.0, 22.0), 3.5 * ego_lane};
      lead.velocity = {motions[kEgoId].velocity.x - uni(2.0, 3.5), 0.0};
      lead.accel_future = {uni(-0.6, 0.4), 0.0};
      motions["agent_1"] = lead;
      lane_front_x[ego_lane] = lead.start.x;
      first_agent = 2;
    }
    for (int i = first_agent; i < n_agents; ++i) {
      const int lane = static_cast<int>(uni(0.0, 4.0));
      double x = uni(-35.0, 45.0);
      // same-lane spacing; closing speeds are capped by the shared speed band
      if (lane_front_x[lane] > -1e8 && x < lane_front_x[lane] + 14.0)
        x = lane_front_x[lane] + 14.0 + uni(0.0, 6.0);
      lane_front_x[lane] = std::max(lane_front_x[lane], x);
      detail::MotionSpec m;
      m.start = {x, 3.5 * lane};
      m.velocity = {v_base + uni(-0.8, 0.8), 0.0};
      // benign wander, future only: costly for extrapolation accuracy,
      // harmless for safety (history speeds stay in the tight band and lanes
      // stay separated)
      m.accel_future = {uni(-1.1, 1.1), uni(-0.4, 0.4)};
      motions["agent_" + std::to_string(i)] = m;
    }
    for (double x = -20.0; x <= 120.0; x += 5.0)
      log.reference_path.push_back({x, 3.5 * ego_lane});
  } else if (kind == ScenarioKind::intersection) {
    const double v_ego = uni(7.0, 11.0);
    // warning time at episode start (history is 1.9 s): long enough that a
    // prompt hard stop ends several metres short of the crossing, short enough
    // that a late reaction cannot
    const double t_ego = uni(2.9, 3.3);
    const double d_ego = v_ego * t_ego;
    detail::MotionSpec ego;
    ego.start = {-d_ego, 0.0};
    ego.velocity = {v_ego, 0.0};
    motions[kEgoId] = ego;

    const double v_cross = uni(6.0, 9.5);
    const bool conflict = uni(0.0, 1.0) < 0.52;
    const std::array<double, 7> lanes{0.0, 4.0, -4.0, 8.0, -8.0, 12.0, -12.0};
    for (int i = 1; i < n_agents; ++i) {
      detail::MotionSpec m;
      const double lane_x = lanes[(i - 1) % lanes.size()];
      m.velocity = {0.0, v_cross + uni(-0.8, 0.8)};
      if (i == 1 && conflict) {
        const double mode_draw = uni(0.0, 1.0);
        if (mode_draw < 0.85) {
          // ambush: at history-end velocities the crosser passes behind the
          // ego with real margin; a hidden late rush can erase that margin.
          // Extrapolation at the evaluation point calls this safe, so only
          // mode spread can flag it early. The label fires either way (the
          // pair converges hard), which keeps "critical" a statement about
          // tension rather than inevitable proximity.
          const double skew = uni(0.4, 0.75);
          m.start = {0.0, -(t_ego + skew) * m.velocity.y};
          if (uni(0.0, 1.0) < 0.6) {
            m.accel_future = {0.0, uni(3.2, 4.2)};
            m.accel_onset = uni(0.2, 0.45);
          }
        } else {
          // visible near-collision course, sometimes defused by a late yield
          const double skew = uni(-0.2, 0.2);
          m.start = {0.0, -(t_ego + skew) * m.velocity.y};
          if (uni(0.0, 1.0) < 0.5) m.accel_future = {0.0, uni(-3.2, -1.8)};
        }
      } else {
        // already past the crossing and receding, with benign speed wander
        m.start = {lane_x, uni(18.0, 40.0)};
        m.accel_future = {0.0, uni(-1.1, 1.1)};
      }
      motions["agent_" + std::to_string(i)] = m;
    }
    for (double x = -d_ego - 10.0; x <= 120.0; x += 5.0)
      log.reference_path.push_back({x, 0.0});
  } else {  // merge
    const double v_ego = uni(8.0, 11.0);
    detail::MotionSpec ego;
    ego.start = {0.0, 0.0};
    ego.velocity = {v_ego, 0.0};
    motions[kEgoId] = ego;

    // merging agent cuts in ahead of the ego during the history (the lateral
    // approach is fully visible) and is essentially in-lane by the episode
    // start, so the conflict is longitudinal: a hidden hard brake drawn at the
    // future boundary turns a tight follow into a rear-end threat.
    detail::MotionSpec merger;
    const double gap_draw = uni(0.0, 1.0);
    const double gap = gap_draw < 0.35   ? uni(4.5, 7.0)
                       : gap_draw < 0.65 ? uni(7.0, 10.0)
                                         : uni(10.0, 18.0);
    const double t_total = static_cast<double>(kHistorySteps + kHorizonSteps) * kStepSeconds;
    merger.start = {gap, -3.5};
    // lateral profile reaches the lane with zero lateral speed at episode end
    merger.velocity = {v_ego + uni(-0.4, 0.4), 2.0 * 3.5 / t_total};
    merger.accel_history = {0.0, -2.0 * 3.5 / (t_total * t_total)};
    merger.accel_future = merger.accel_history;
    if (uni(0.0, 1.0) < 0.75) {
      merger.accel_future = {uni(-4.6, -3.4), merger.accel_history.y};
      merger.accel_onset = uni(0.25, 0.5);
    }
    motions["agent_1"] = merger;

    for (int i = 2; i < n_agents; ++i) {
      detail::MotionSpec m;
      const int lane = i % 2 == 0 ? 1 : 0;
      const double x = (14.0 + 6.0 * i + uni(0.0, 5.0)) * (i % 3 == 0 ? -1.0 : 1.0);
      m.start = {x, 3.5 * lane};
      m.velocity = {v_ego + uni(-0.8, 0.8), 0.0};
      m.accel_future = {uni(-1.1, 1.1), uni(-0.35, 0.35)};
      motions["agent_" + std::to_string(i)] = m;
    }
    for (double x = -20.0; x <= 120.0; x += 5.0)
      log.reference_path.push_back({x, 0.0});
  }

  for (const auto& [id, m] : motions) {
    log.agents[id] = detail::history_states(m, id);
    log.futures[id] = detail::future_trajectory(m);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Frenet planner
// ---------------------------------------------------------------------------

namespace detail {

struct Poly5 {
  std::array<double, 6> c{};
  static Poly5 boundary(double x0, double v0, double a0, double x1, double v1, double a1,
                        double T) {
    Poly5 p;
    p.c[0] = x0;
    p.c[1] = v0;
    p.c[2] = 0.5 * a0;
    const double T2 = T * T, T3 = T2 * T, T4 = T3 * T, T5 = T4 * T;
    const double A = x1 - (x0 + v0 * T + 0.5 * a0 * T2);
    const double B = v1 - (v0 + a0 * T);
    const double C = a1 - a0;
    p.c[3] = (20.0 * A - 8.0 * B * T + C * T2) / (2.0 * T3);
    p.c[4] = (-30.0 * A + 14.0 * B * T - 2.0 * C * T2) / (2.0 * T4);
    p.c[5] = (12.0 * A - 6.0 * B * T + C * T2) / (2.0 * T5);
    return p;
  }
  double eval(double t) const {
    return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
  }
  double d1(double t) const {
    return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])));
  }
  double d2(double t) const {
    return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]));
  }
  double d3(double t) const { return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5]); }
};

// Quartic with free end position (velocity-keeping longitudinal profile).
struct Poly4 {
  std::array<double, 5> c{};
  static Poly4 velocity_target(double x0, double v0, double a0, double v1, double a1,
                               double T) {
    Poly4 p;
    p.c[0] = x0;
    p.c[1] = v0;
    p.c[2] = 0.5 * a0;
    const double B = v1 - (v0 + a0 * T);
    const double C = a1 - a0;
    p.c[3] = B / (T * T) - C / (3.0 * T);
    p.c[4] = -B / (2.0 * T * T * T) + C / (4.0 * T * T);
    return p;
  }
  double eval(double t) const {
    return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4])));
  }
  double d1(double t) const {
    return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * 4 * c[4]));
  }
  double d2(double t) const { return 2 * c[2] + t * (6 * c[3] + t * 12 * c[4]); }
  double d3(double t) const { return 6 * c[3] + t * 24 * c[4]; }
};

}  // namespace detail

class ReferencePath {
 public:
  explicit ReferencePath(std::vector<Vec2> points) : pts_(std::move(points)) {
    if (pts_.size() < 2)
      throw std::invalid_argument("reference path needs >= 2 points");
    cum_.resize(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i)
      cum_[i] = cum_[i - 1] + norm(pts_[i] - pts_[i - 1]);
  }

  double length() const { return cum_.back(); }

  Vec2 position(double s) const {
    const auto [i, u] = locate(s);
    return pts_[i] + u * (pts_[i + 1] - pts_[i]);
  }

  Vec2 tangent(double s) const {
    const auto [i, u] = locate(s);
    const Vec2 d = pts_[i + 1] - pts_[i];
    return (1.0 / norm(d)) * d;
  }

  Vec2 normal(double s) const {
    const Vec2 t = tangent(s);
    return {-t.y, t.x};  // left normal
  }

  struct Projection {
    double s{0.0};
    double d{0.0};  // signed, left positive
  };

  Projection project(Vec2 p) const {
    double best_dist = std::numeric_limits<double>::infinity();
    Projection best;
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
      const Vec2 seg = pts_[i + 1] - pts_[i];
      const double len2 = dot(seg, seg);
      const double u = std::clamp(dot(p - pts_[i], seg) / len2, 0.0, 1.0);
      const Vec2 q = pts_[i] + u * seg;
      const double dist = norm(p - q);
      if (dist < best_dist) {
        best_dist = dist;
        const Vec2 t = (1.0 / std::sqrt(len2)) * seg;
        best.s = cum_[i] + u * std::sqrt(len2);
        best.d = (p.x - q.x) * (-t.y) + (p.y - q.y) * t.x;
      }
    }
    return best;
  }

 private:
  std::pair<std::size_t, double> locate(double s) const {
    const double sc = std::clamp(s, 0.0, cum_.back());
    std::size_t i =
        std::upper_bound(cum_.begin(), cum_.end(), sc) - cum_.begin();
    i = std::clamp<std::size_t>(i, 1, cum_.size() - 1) - 1;
    const double seg = cum_[i + 1] - cum_[i];
    return {i, seg > 0.0 ? (sc - cum_[i]) / seg : 0.0};
  }

  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

struct FrenetState {
  double s{0.0}, s_dot{0.0}, s_ddot{0.0};
  double d{0.0}, d_dot{0.0}, d_ddot{0.0};
};

struct CandidateCost {
  double jerk{0.0};
  double deviation{0.0};
  double speed_dev{0.0};
  int collisions{0};
  double total(double w_jerk, double w_dev, double w_speed, double w_collision) const {
    return w_jerk * jerk + w_dev * deviation + w_speed * speed_dev +
           w_collision * collisions;
  }
};

struct FrenetCandidate {
  double lateral_offset{0.0};
  double target_speed{0.0};
  Trajectory trajectory;  // 15 steps, world frame
  CandidateCost cost;
  detail::Poly4 lon;
  detail::Poly5 lat;
  double lon_horizon{0.0};  // lon profile frozen past this time
};

struct PlanConfig {
  std::vector<double> lateral_offsets{-3.0, -1.5, 0.0, 1.5, 3.0};
  std::vector<double> speed_fractions{0.5, 0.75, 1.0, 1.25};
  double w_jerk{0.05};
  double w_dev{0.4};
  double w_speed{0.3};
  double w_collision{1e4};
  double collision_radius{2.0};  // m, disc inflation
  double min_speed_base{1.0};    // m/s, keeps a stopped ego able to restart
  double max_braking{8.0};       // m/s^2, emergency deceleration
  double comfort_braking{2.0};   // m/s^2, sets slow-down candidates' time-to-target
};

struct PlanResult {
  FrenetCandidate chosen;
  bool emergency{false};
  FrenetState end_state;  // Frenet state after executing one step
};

namespace detail {

inline FrenetCandidate make_candidate(const ReferencePath& ref, const FrenetState& st,
                                      double offset, double target_speed, double dt,
                                      double brake_horizon = 0.0) {
  const double horizon_s = static_cast<double>(kHorizonSteps) * dt;
  // brake_horizon > 0 compresses the longitudinal profile so the speed target
  // is reached early (max braking); the position clamp below holds the stop.
  const double lon_T = brake_horizon > 0.0 ? brake_horizon : horizon_s;
  FrenetCandidate cand;
  cand.lateral_offset = offset;
  cand.target_speed = target_speed;
  cand.lon = Poly4::velocity_target(st.s, st.s_dot, st.s_ddot, target_speed, 0.0, lon_T);
  cand.lat = Poly5::boundary(st.d, st.d_dot, st.d_ddot, offset, 0.0, 0.0, horizon_s);
  cand.lon_horizon = lon_T;
  cand.trajectory.dt = dt;
  double s_prev = st.s;
  for (std::size_t k = 1; k <= kHorizonSteps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double tl = std::min(t, lon_T);
    double s = cand.lon.eval(tl);
    if (s < s_prev) s = s_prev;  // no reversing along the path
    s_prev = s;
    const double d = cand.lat.eval(t);
    const Vec2 p = ref.position(s) + d * ref.normal(s);
    cand.trajectory.points.push_back(p);
    cand.cost.jerk +=
        (cand.lon.d3(tl) * cand.lon.d3(tl) + cand.lat.d3(t) * cand.lat.d3(t)) * dt;
  }
  cand.cost.deviation = std::abs(offset);
  return cand;
}

inline int count_collisions(const FrenetCandidate& cand,
                            const std::vector<PredictionSet>& predictions,
                            double radius) {
  int hits = 0;
  for (std::size_t k = 0; k < cand.trajectory.points.size(); ++k) {
    const Vec2 ego = cand.trajectory.points[k];
    for (const auto& pred : predictions)
      for (const auto& mode : pred.modes)
        if (k < mode.points.size() && norm(ego - mode.points[k]) < radius) ++hits;
  }
  return hits;
}

}  // namespace detail

// Enumerates the lateral-offset x target-speed grid plus a max-braking
// candidate, scores each against every predicted mode of every agent, returns
// the cheapest (ties: smaller |offset|, then smaller speed deviation). If every
// grid candidate collides the braking candidate is returned flagged emergency.
// The speed grid is anchored at v_nominal (the episode's reference speed, not
// the instantaneous one) so the candidate set does not drift step to step.
inline PlanResult plan_frenet(const ReferencePath& ref, const FrenetState& state,
                              const std::vector<PredictionSet>& predictions, double dt,
                              const PlanConfig& config = {}, double v_nominal = -1.0) {
  const double v_base =
      std::max(v_nominal > 0.0 ? v_nominal : state.s_dot, config.min_speed_base);

  const double horizon_s = static_cast<double>(kHorizonSteps) * dt;
  std::vector<FrenetCandidate> grid;
  for (double offset : config.lateral_offsets)
    for (double fraction : config.speed_fractions) {
      const double target = fraction * v_base;
      // slow-down candidates reach their target at a comfortable fixed
      // deceleration, then hold; speed-keeping and speed-up use the horizon
      double lon_T = horizon_s;
      if (target < state.s_dot)
        lon_T = std::clamp((state.s_dot - target) / config.comfort_braking, 3.0 * dt,
                           horizon_s);
      grid.push_back(detail::make_candidate(ref, state, offset, target, dt, lon_T));
    }
  // max braking: reach v = 0 at the hard-deceleration stopping time
  const double brake_T = std::max(2.0 * dt, state.s_dot / config.max_braking);
  FrenetCandidate braking = detail::make_candidate(ref, state, state.d, 0.0, dt, brake_T);

  bool any_free = false;
  for (auto& cand : grid) {
    cand.cost.speed_dev = std::abs(cand.target_speed - v_base);
    cand.cost.collisions =
        detail::count_collisions(cand, predictions, config.collision_radius);
    any_free = any_free || cand.cost.collisions == 0;
  }
  braking.cost.speed_dev = v_base;
  braking.cost.collisions =
      detail::count_collisions(braking, predictions, config.collision_radius);

  PlanResult result;
  if (!any_free) {
    result.chosen = braking;
    result.emergency = true;
  } else {
    const FrenetCandidate* best = &braking;
    double best_cost = braking.cost.total(config.w_jerk, config.w_dev, config.w_speed,
                                          config.w_collision);
    for (const auto& cand : grid) {
      const double cost =
          cand.cost.total(config.w_jerk, config.w_dev, config.w_speed, config.w_collision);
      const bool better =
          cost < best_cost - 1e-9 ||
          (std::abs(cost - best_cost) <= 1e-9 &&
           (std::abs(cand.lateral_offset) < std::abs(best->lateral_offset) - 1e-12 ||
            (std::abs(std::abs(cand.lateral_offset) - std::abs(best->lateral_offset)) <=
                 1e-12 &&
             cand.cost.speed_dev < best->cost.speed_dev)));
      if (better) {
        best = &cand;
        best_cost = cost;
      }
    }
    result.chosen = *best;
    result.emergency = false;
  }

  const double t1 = dt;
  const double tl = std::min(t1, result.chosen.lon_horizon);
  result.end_state.s = std::max(result.chosen.lon.eval(tl), state.s);
  result.end_state.s_dot = std::max(result.chosen.lon.d1(tl), 0.0);
  result.end_state.s_ddot = result.chosen.lon.d2(tl);
  result.end_state.d = result.chosen.lat.eval(t1);
  result.end_state.d_dot = result.chosen.lat.d1(t1);
  result.end_state.d_ddot = result.chosen.lat.d2(t1);
  return result;
}

// Spec-shaped wrapper: derives the ego Frenet state from the log's last
// history frame and plans against the given predictions.
inline PlanResult frenet_plan(const ScenarioLog& log,
                              const std::vector<PredictionSet>& predictions,
                              const PlanConfig& config = {}) {
  const auto ego_it = log.agents.find(kEgoId);
  if (ego_it == log.agents.end())
    throw std::invalid_argument("frenet_plan: ego agent absent");
  const AgentState& ego = ego_it->second.back();
  ReferencePath ref(log.reference_path);
  const auto proj = ref.project({ego.position.x, ego.position.y});
  FrenetState st;
  st.s = proj.s;
  st.d = proj.d;
  const Vec2 t = ref.tangent(proj.s);
  const Vec2 n = ref.normal(proj.s);
  st.s_dot = ego.velocity.x * t.x + ego.velocity.y * t.y;
  st.d_dot = ego.velocity.x * n.x + ego.velocity.y * n.y;
  st.s_ddot = ego.acceleration.x * t.x + ego.acceleration.y * t.y;
  st.d_ddot = ego.acceleration.x * n.x + ego.acceleration.y * n.y;
  return plan_frenet(ref, st, predictions, kStepSeconds, config);
}

// ---------------------------------------------------------------------------
// Driving performance
// ---------------------------------------------------------------------------

// efficiency: progress over nominal-speed progress, clipped to [0,1];
// discomfort: mean |jerk|; unsafety: 1 on a sub-metre gap, else a linear
// ramp below 5 m clearance; overall combines them.
inline PerformanceRecord driving_performance(const Trajectory& ego, const ScenarioLog& log,
                                             std::size_t horizon_steps = kHorizonSteps) {
  PerformanceRecord perf;
  double arc = 0.0;
  for (std::size_t i = 1; i < ego.length(); ++i)
    arc += norm(ego.points[i] - ego.points[i - 1]);

  double v_nominal = 1.0;
  const auto ego_it = log.agents.find(kEgoId);
  if (ego_it != log.agents.end() && !ego_it->second.empty()) {
    const auto& v = ego_it->second.back().velocity;
    v_nominal = std::max(1.0, std::hypot(v.x, v.y));
  }
  const double horizon_s = static_cast<double>(horizon_steps) * ego.dt;
  perf.efficiency = std::clamp(arc / (v_nominal * horizon_s), 0.0, 1.0);

  const auto jerks = jerk_profile(ego);
  double jerk_sum = 0.0;
  for (double j : jerks) jerk_sum += j;
  perf.discomfort = jerks.empty() ? 0.0 : jerk_sum / static_cast<double>(jerks.size());

  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& [id, fut] : log.futures) {
    if (id == kEgoId) continue;
    for (std::size_t k = 0; k < fut.length() && k + 1 < ego.length(); ++k)
      min_gap = std::min(min_gap, norm(ego.points[k + 1] - fut.points[k]));
  }
  if (!std::isfinite(min_gap))
    perf.unsafety = 0.0;
  else if (min_gap < kCollisionGap)
    perf.unsafety = 1.0;
  else
    perf.unsafety = std::max(0.0, 1.0 - min_gap / 5.0);

  const double discomfort_norm = std::min(perf.discomfort / 5.0, 1.0);
  perf.overall = perf.efficiency - 0.5 * discomfort_norm - 2.0 * perf.unsafety;
  return perf;
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

struct EpisodeResult {
  std::string scenario_id;
  std::string predictor_id;
  Trajectory ego_trajectory;  // start position + 15 executed steps
  PerformanceRecord performance;
  int emergency_steps{0};
  std::vector<PredictionSet> t0_predictions;  // what the evaluator scores
  std::vector<FrenetState> replan_states;     // state before each replan
  std::string error;                          // non-empty if the episode failed
};

namespace detail {

// Noise draws are fixed per (scenario, predictor, agent) and reused at every
// replan step: the predictor keeps one consistent set of hypotheses through an
// episode, so the spread the evaluator measures at t=0 is the spread the
// planner acted on.
inline std::uint64_t prediction_seed(const ScenarioLog& log, const std::string& predictor_id,
                                     const std::string& agent_id) {
  std::uint64_t s = derive_seed(log.seed, "predict");
  s = derive_seed(s, predictor_id);
  return derive_seed(s, agent_id);
}

}  // namespace detail

// Open-loop predictions at the evaluation point (episode start); shared by the
// evaluator and by the closed loop's first step, seeded identically.
inline std::vector<PredictionSet> predict_scenario(const ScenarioLog& log,
                                                   const PredictorKind& kind) {
  std::vector<PredictionSet> out;
  const std::string pid = kind.id();
  for (const auto& [id, states] : log.agents) {
    if (id == kEgoId) continue;
    auto rng = make_engine(detail::prediction_seed(log, pid, id));
    const auto fut = log.futures.find(id);
    out.push_back(predict(kind, states, kStepSeconds,
                          fut != log.futures.end() ? &fut->second : nullptr, rng));
  }
  return out;
}

// One episode: replan each step with a receding horizon, execute the first
// planned step, advance every other agent along its ground-truth future.
inline EpisodeResult run_episode(const ScenarioLog& log, const PredictorKind& kind,
                                 const PlanConfig& plan_config = {}) {
  EpisodeResult result;
  result.scenario_id = log.scenario_id;
  result.predictor_id = kind.id();

  const auto violations = validate_scenario(log);
  if (!violations.empty()) {
    result.error = "invalid scenario: " + violations.front();
    return result;
  }

  ReferencePath ref(log.reference_path);
  std::map<std::string, std::vector<AgentState>> agents = log.agents;

  const AgentState& ego0 = agents.at(kEgoId).back();
  const auto proj = ref.project({ego0.position.x, ego0.position.y});
  FrenetState st;
  st.s = proj.s;
  st.d = proj.d;
  {
    const Vec2 t = ref.tangent(proj.s), n = ref.normal(proj.s);
    st.s_dot = ego0.velocity.x * t.x + ego0.velocity.y * t.y;
    st.d_dot = ego0.velocity.x * n.x + ego0.velocity.y * n.y;
    st.s_ddot = ego0.acceleration.x * t.x + ego0.acceleration.y * t.y;
    st.d_ddot = ego0.acceleration.x * n.x + ego0.acceleration.y * n.y;
  }

  result.ego_trajectory.dt = kStepSeconds;
  result.ego_trajectory.points.push_back({ego0.position.x, ego0.position.y});

  const double v_nominal = std::max(1.0, st.s_dot);
  const std::string pid = kind.id();
  for (std::size_t step = 0; step < kHorizonSteps; ++step) {
    // predictions from current histories; truth windows shift with the step
    std::vector<PredictionSet> predictions;
    for (const auto& [id, states] : agents) {
      if (id == kEgoId) continue;
      auto rng = make_engine(detail::prediction_seed(log, pid, id));
      Trajectory remaining;
      remaining.dt = kStepSeconds;
      const auto fut = log.futures.find(id);
      if (fut != log.futures.end())
        for (std::size_t k = step; k < fut->second.length(); ++k)
          remaining.points.push_back(fut->second.points[k]);
      predictions.push_back(
          predict(kind, states, kStepSeconds, remaining.points.empty() ? nullptr : &remaining, rng));
    }
    if (step == 0) result.t0_predictions = predictions;

    result.replan_states.push_back(st);
    const PlanResult plan =
        plan_frenet(ref, st, predictions, kStepSeconds, plan_config, v_nominal);
    if (plan.emergency) ++result.emergency_steps;
    st = plan.end_state;

    const Vec2 t = ref.tangent(st.s), n = ref.normal(st.s);
    const Vec2 pos = ref.position(st.s) + st.d * n;
    result.ego_trajectory.points.push_back(pos);

    AgentState ego_state;
    ego_state.agent_id = kEgoId;
    ego_state.timestep = static_cast<int>(kHistorySteps + step);
    ego_state.position = {pos.x, pos.y, 0.0};
    ego_state.velocity = {st.s_dot * t.x + st.d_dot * n.x, st.s_dot * t.y + st.d_dot * n.y,
                          0.0};
    ego_state.acceleration = {st.s_ddot * t.x + st.d_ddot * n.x,
                              st.s_ddot * t.y + st.d_ddot * n.y, 0.0};
    agents[kEgoId].push_back(ego_state);

    for (auto& [id, states] : agents) {
      if (id == kEgoId) continue;
      const auto fut = log.futures.find(id);
      if (fut == log.futures.end() || step >= fut->second.length()) continue;
      const Vec2 p = fut->second.points[step];
      const Vec2 prev{states.back().position.x, states.back().position.y};
      const Vec2 v = (1.0 / kStepSeconds) * (p - prev);
      AgentState next;
      next.agent_id = id;
      next.timestep = static_cast<int>(kHistorySteps + step);
      next.position = {p.x, p.y, 0.0};
      next.velocity = {v.x, v.y, 0.0};
      const Vec2 pv{states.back().velocity.x, states.back().velocity.y};
      const Vec2 a = (1.0 / kStepSeconds) * (v - pv);
      next.acceleration = {a.x, a.y, 0.0};
      states.push_back(next);
    }
  }

  result.performance = driving_performance(result.ego_trajectory, log);
  return result;
}

// Scenario x predictor sweep; parallel over episodes with results stored by
// index (thread count never changes the output). Failed episodes are recorded,
// never dropped.
inline std::vector<EpisodeResult> run_closed_loop(const std::vector<ScenarioLog>& logs,
                                                  const std::vector<PredictorKind>& kinds,
                                                  const PlanConfig& plan_config = {},
                                                  int parallelism = 1) {
  std::vector<std::pair<const ScenarioLog*, const PredictorKind*>> jobs;
  for (const auto& log : logs)
    for (const auto& kind : kinds) jobs.push_back({&log, &kind});
  std::vector<EpisodeResult> results(jobs.size());

  const int workers = std::max(1, parallelism);
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= jobs.size()) break;
      try {
        results[i] = run_episode(*jobs[i].first, *jobs[i].second, plan_config);
      } catch (const std::exception& e) {
        results[i].scenario_id = jobs[i].first->scenario_id;
        results[i].predictor_id = jobs[i].second->id();
        results[i].error = e.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::future<void>> futures;
    for (int w = 0; w < workers; ++w)
      futures.push_back(std::async(std::launch::async, worker));
    for (auto& f : futures) f.get();
  }
  return results;
}

}  // namespace edeva
