#include <doctest.h>

#include <cmath>

#include "edeva/core.hpp"
#include "edeva/sim.hpp"

using namespace edeva;

namespace {

Trajectory make_line(std::size_t n, Vec2 start, Vec2 step, double dt = 0.1) {
  Trajectory t;
  t.dt = dt;
  for (std::size_t i = 0; i < n; ++i)
    t.points.push_back(start + static_cast<double>(i) * step);
  return t;
}

// Independent oracle: jerk of x(t) from dense sampling of the analytic third
// derivative is constant 6 for x = t^3.
double cubic_third_derivative() { return 6.0; }

}  // namespace

TEST_CASE("jerk_profile of straight constant-velocity line is zero") {
  const auto traj = make_line(10, {0.0, 0.0}, {1.0, 0.5});
  for (double j : jerk_profile(traj)) CHECK(j == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("jerk_profile of constant-acceleration parabola is zero") {
  Trajectory traj;
  traj.dt = 0.1;
  for (int i = 0; i < 12; ++i) {
    const double t = 0.1 * i;
    traj.points.push_back({0.5 * 2.0 * t * t, 0.0});
  }
  for (double j : jerk_profile(traj)) CHECK(j == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("jerk_profile of cubic x(t)=t^3 with dt=1 is constant 6") {
  Trajectory traj;
  traj.dt = 1.0;
  for (int i = 0; i < 8; ++i) {
    const double t = static_cast<double>(i);
    traj.points.push_back({t * t * t, 0.0});
  }
  const auto jerks = jerk_profile(traj);
  CHECK(jerks.size() == traj.length() - 3);
  for (double j : jerks) CHECK(j == doctest::Approx(cubic_third_derivative()).epsilon(1e-12));
}

TEST_CASE("jerk_profile rejects too-short trajectories") {
  CHECK_THROWS_WITH_AS(jerk_profile(make_line(3, {0, 0}, {1, 0})),
                       "insufficient points for jerk", std::invalid_argument);
}

TEST_CASE("jerk_profile is translation invariant and scales linearly") {
  auto rng = make_engine(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Trajectory traj;
  traj.dt = 0.1;
  for (int i = 0; i < 9; ++i) traj.points.push_back({u(rng), u(rng)});

  Trajectory shifted = traj;
  for (auto& p : shifted.points) p = p + Vec2{13.7, -2.9};
  Trajectory scaled = traj;
  for (auto& p : scaled.points) p = 3.0 * p;

  const auto base = jerk_profile(traj);
  const auto moved = jerk_profile(shifted);
  const auto grown = jerk_profile(scaled);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-9));
    CHECK(grown[i] == doctest::Approx(3.0 * base[i]).epsilon(1e-9));
  }
}

TEST_CASE("validate_scenario accepts a well-formed generated log") {
  const auto log = generate_scenario(ScenarioKind::highway, 42, 3);
  CHECK(validate_scenario(log).empty());
}

TEST_CASE("validate_scenario flags short histories") {
  auto log = generate_scenario(ScenarioKind::highway, 42, 3);
  for (auto& [id, states] : log.agents) states.resize(10);
  const auto violations = validate_scenario(log);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "agents: history shorter than classifier window");
}

TEST_CASE("validate_scenario flags a missing ego") {
  auto log = generate_scenario(ScenarioKind::highway, 42, 3);
  log.agents.erase(kEgoId);
  const auto violations = validate_scenario(log);
  REQUIRE(!violations.empty());
  CHECK(violations[0] == "agents: ego agent absent");
}

TEST_CASE("validate_scenario is idempotent") {
  const auto log = generate_scenario(ScenarioKind::intersection, 7, 4);
  CHECK(validate_scenario(log) == validate_scenario(log));
}

TEST_CASE("validate_prediction flags unnormalized mode probabilities") {
  PredictionSet pred;
  pred.agent_id = "a";
  Trajectory mode;
  mode.dt = 0.1;
  mode.points = {{0, 0}, {1, 0}};
  pred.modes = {mode, mode};
  pred.mode_probs = std::vector<double>{0.5, 0.3};  // sums to 0.8
  const auto violations = validate_prediction(pred);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find("mode_probs not normalized") != std::string::npos);
}

TEST_CASE("validate_prediction flags ragged horizons") {
  PredictionSet pred;
  pred.agent_id = "a";
  Trajectory m1, m2;
  m1.points = {{0, 0}, {1, 0}};
  m2.points = {{0, 0}};
  pred.modes = {m1, m2};
  CHECK(!validate_prediction(pred).empty());
}
