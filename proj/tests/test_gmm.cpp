#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "edeva/gmm.hpp"
#include "edeva/random.hpp"

using namespace edeva;

namespace {

// Monte-Carlo oracle: sample the mixture directly and take the sample
// covariance. Independent of collapse()'s algebra.
Sym2 sample_covariance(const Gmm2D& gmm, std::size_t draws, std::uint64_t seed) {
  auto rng = make_engine(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Vec2> samples;
  samples.reserve(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    double pick = u(rng);
    const GmmComponent* comp = &gmm.components.back();
    for (const auto& c : gmm.components) {
      pick -= c.weight;
      if (pick <= 0.0) {
        comp = &c;
        break;
      }
    }
    // Cholesky of [[xx,xy],[xy,yy]]
    const double lxx = std::sqrt(comp->covariance.xx);
    const double lyx = lxx > 0.0 ? comp->covariance.xy / lxx : 0.0;
    const double lyy =
        std::sqrt(std::max(0.0, comp->covariance.yy - lyx * lyx));
    const double z1 = gauss(rng), z2 = gauss(rng);
    samples.push_back(
        {comp->mean.x + lxx * z1, comp->mean.y + lyx * z1 + lyy * z2});
  }
  Vec2 mean;
  for (const auto& s : samples) mean = mean + s;
  mean = (1.0 / static_cast<double>(draws)) * mean;
  Sym2 cov;
  for (const auto& s : samples) cov = cov + outer(s - mean);
  return (1.0 / static_cast<double>(draws)) * cov;
}

Gmm2D random_mixture(std::mt19937_64& rng, int max_components = 5) {
  std::uniform_int_distribution<int> nc(1, max_components);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> up(0.1, 1.0);
  const int k = nc(rng);
  Gmm2D gmm;
  double wsum = 0.0;
  for (int i = 0; i < k; ++i) {
    GmmComponent c;
    c.weight = up(rng);
    wsum += c.weight;
    c.mean = {4.0 * u(rng), 4.0 * u(rng)};
    // PSD via A A^T + floor
    const double a = u(rng), b = u(rng), d = u(rng);
    c.covariance = {a * a + b * b + 0.05, a * d, d * d + 0.05};
    gmm.components.push_back(c);
  }
  for (auto& c : gmm.components) c.weight /= wsum;
  return gmm;
}

Sym2 random_psd(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
  // A^T A is PSD
  return {a * a + c * c, a * b + c * d, b * b + d * d};
}

}  // namespace

TEST_CASE("eigen2 on diag(4,1)") {
  const auto e = eigen2(Sym2{4.0, 0.0, 1.0});
  CHECK(e.lambda1 == doctest::Approx(4.0));
  CHECK(e.lambda2 == doctest::Approx(1.0));
  CHECK(std::abs(e.q.m00) == doctest::Approx(1.0));
  CHECK(std::abs(e.q.m11) == doctest::Approx(1.0));
}

TEST_CASE("eigen2 on [[2,1],[1,2]] (characteristic polynomial by hand)") {
  const auto e = eigen2(Sym2{2.0, 1.0, 2.0});
  CHECK(e.lambda1 == doctest::Approx(3.0));
  CHECK(e.lambda2 == doctest::Approx(1.0));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(e.q.m00) == doctest::Approx(inv_sqrt2));
  CHECK(std::abs(e.q.m10) == doctest::Approx(inv_sqrt2));
  // eigenvector for lambda1 is (1,1)/sqrt(2): components share a sign
  CHECK(e.q.m00 * e.q.m10 > 0.0);
  // eigenvector for lambda2 is (1,-1)/sqrt(2): components differ in sign
  CHECK(e.q.m01 * e.q.m11 < 0.0);
}

TEST_CASE("eigen2 on identity accepts any orthogonal Q via reconstruction") {
  const auto e = eigen2(Sym2{1.0, 0.0, 1.0});
  CHECK(e.lambda1 == doctest::Approx(1.0));
  CHECK(e.lambda2 == doctest::Approx(1.0));
  // Q diag(l) Q^T == I
  const double r00 = e.q.m00 * e.lambda1 * e.q.m00 + e.q.m01 * e.lambda2 * e.q.m01;
  const double r01 = e.q.m00 * e.lambda1 * e.q.m10 + e.q.m01 * e.lambda2 * e.q.m11;
  const double r11 = e.q.m10 * e.lambda1 * e.q.m10 + e.q.m11 * e.lambda2 * e.q.m11;
  CHECK(r00 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r01 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r11 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eigen2 rejects asymmetric input") {
  CHECK_THROWS_WITH_AS(eigen2(1.0, 0.5, 0.2, 1.0), "matrix not symmetric",
                       std::invalid_argument);
}

TEST_CASE("eigen2 matches Eigen's solver on random symmetric matrices") {
  auto rng = make_engine(101);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const auto e = eigen2(Sym2{a, b, c});
    Eigen::Matrix2d m;
    m << a, b, b, c;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(m);
    CHECK(e.lambda2 == doctest::Approx(solver.eigenvalues()(0)).epsilon(1e-9));
    CHECK(e.lambda1 == doctest::Approx(solver.eigenvalues()(1)).epsilon(1e-9));
  }
}

TEST_CASE("eigen identities and reconstruction on random PSD matrices") {
  auto rng = make_engine(202);
  for (int i = 0; i < 10000; ++i) {
    const Sym2 m = random_psd(rng);
    const auto e = eigen2(m);
    CHECK(e.lambda1 >= e.lambda2);
    CHECK(e.lambda2 >= -1e-12);
    CHECK(std::abs(e.lambda1 * e.lambda2 - det(m)) < 1e-10);
    CHECK(std::abs(e.lambda1 + e.lambda2 - trace(m)) < 1e-10);
    CHECK(std::abs(std::abs(det(e.q)) - 1.0) < 1e-10);
    // reconstruction Q diag Q^T
    const double r00 = e.q.m00 * e.lambda1 * e.q.m00 + e.q.m01 * e.lambda2 * e.q.m01;
    const double r01 = e.q.m00 * e.lambda1 * e.q.m10 + e.q.m01 * e.lambda2 * e.q.m11;
    const double r11 = e.q.m10 * e.lambda1 * e.q.m10 + e.q.m11 * e.lambda2 * e.q.m11;
    CHECK(std::abs(r00 - m.xx) < 1e-10);
    CHECK(std::abs(r01 - m.xy) < 1e-10);
    CHECK(std::abs(r11 - m.yy) < 1e-10);
  }
}

TEST_CASE("collapse of a single component returns its covariance") {
  Gmm2D gmm;
  gmm.components.push_back({1.0, {3.0, -2.0}, {2.0, 0.3, 1.0}});
  const auto cov = collapse(gmm);
  CHECK(cov.matrix.xx == doctest::Approx(2.0));
  CHECK(cov.matrix.xy == doctest::Approx(0.3));
  CHECK(cov.matrix.yy == doctest::Approx(1.0));
}

TEST_CASE("collapse of two point components at (+-1, 0): hand evaluation") {
  Gmm2D gmm;
  gmm.components.push_back({0.5, {1.0, 0.0}, {0.0, 0.0, 0.0}});
  gmm.components.push_back({0.5, {-1.0, 0.0}, {0.0, 0.0, 0.0}});
  const auto cov = collapse(gmm);
  CHECK(cov.matrix.xx == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cov.matrix.xy == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cov.matrix.yy == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("collapse matches the Monte-Carlo oracle on a 3-component mixture") {
  Gmm2D gmm;
  gmm.components.push_back({0.2, {0.0, 0.0}, {0.5, 0.1, 0.3}});
  gmm.components.push_back({0.5, {2.0, 1.0}, {0.2, -0.05, 0.4}});
  gmm.components.push_back({0.3, {-1.0, 2.0}, {0.8, 0.0, 0.1}});
  const auto cov = collapse(gmm);
  const Sym2 mc = sample_covariance(gmm, 1000000, 31337);
  const double scale = std::sqrt(cov.matrix.xx * cov.matrix.yy);
  CHECK(std::abs(mc.xx - cov.matrix.xx) < 0.02 * cov.matrix.xx);
  CHECK(std::abs(mc.yy - cov.matrix.yy) < 0.02 * cov.matrix.yy);
  CHECK(std::abs(mc.xy - cov.matrix.xy) < 0.02 * std::max(std::abs(cov.matrix.xy), scale));
}

TEST_CASE("diversity_area basics") {
  CHECK(diversity_area(make_cov2({4.0, 0.0, 1.0})) == doctest::Approx(2.0));
  CHECK(diversity_area(make_cov2({0.0, 0.0, 0.0})) == doctest::Approx(0.0));
}

TEST_CASE("diversity_area of the floored two-point mixture is sqrt(eps)") {
  // components floored at construction, as fit_em / modes_as_gmm produce them
  Gmm2D gmm;
  const Sym2 floored{kCovarianceFloor, 0.0, kCovarianceFloor};
  gmm.components.push_back({0.5, {1.0, 0.0}, floored});
  gmm.components.push_back({0.5, {-1.0, 0.0}, floored});
  const double area = diversity_area(collapse(gmm));
  CHECK(area == doctest::Approx(std::sqrt(kCovarianceFloor)).epsilon(1e-5));
}

TEST_CASE("diversity_area scaling law and rotation invariance") {
  auto rng = make_engine(303);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Sym2 m = random_psd(rng);
    const double s2 = u(rng);
    const double base = diversity_area(make_cov2(m));
    CHECK(diversity_area(make_cov2(s2 * m)) == doctest::Approx(s2 * base).epsilon(1e-9));

    const double theta = u(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    // R m R^T for rotation R
    const Sym2 rot{ct * (ct * m.xx + st * m.xy) + st * (ct * m.xy + st * m.yy),
                   -st * (ct * m.xx + st * m.xy) + ct * (ct * m.xy + st * m.yy),
                   -st * (-st * m.xx + ct * m.xy) + ct * (-st * m.xy + ct * m.yy)};
    CHECK(diversity_area(make_cov2(rot)) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("fit_em: degenerate cloud hits the covariance floor exactly") {
  std::vector<Vec2> points(10, Vec2{0.0, 0.0});
  const auto gmm = fit_em(points, 1, EmConfig{});
  REQUIRE(gmm.components.size() == 1);
  CHECK(gmm.components[0].weight == doctest::Approx(1.0));
  CHECK(gmm.components[0].mean.x == 0.0);
  CHECK(gmm.components[0].mean.y == 0.0);
  CHECK(gmm.components[0].covariance.xx == kCovarianceFloor);
  CHECK(gmm.components[0].covariance.xy == 0.0);
  CHECK(gmm.components[0].covariance.yy == kCovarianceFloor);
}

TEST_CASE("fit_em with one component equals the closed-form ML estimate") {
  auto rng = make_engine(404);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  std::vector<Vec2> points;
  for (int i = 0; i < 60; ++i) points.push_back({u(rng), u(rng)});
  const auto gmm = fit_em(points, 1, EmConfig{});

  Vec2 mean;
  for (const auto& p : points) mean = mean + p;
  mean = (1.0 / 60.0) * mean;
  Sym2 cov;
  for (const auto& p : points) cov = cov + outer(p - mean);
  cov = (1.0 / 60.0) * cov;

  CHECK(gmm.components[0].mean.x == doctest::Approx(mean.x).epsilon(1e-12));
  CHECK(gmm.components[0].mean.y == doctest::Approx(mean.y).epsilon(1e-12));
  CHECK(gmm.components[0].covariance.xx ==
        doctest::Approx(cov.xx + kCovarianceFloor).epsilon(1e-12));
  CHECK(gmm.components[0].covariance.yy ==
        doctest::Approx(cov.yy + kCovarianceFloor).epsilon(1e-12));
}

TEST_CASE("fit_em separates two clusters (k-means oracle)") {
  auto rng = make_engine(505);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<Vec2> points;
  for (int i = 0; i < 100; ++i) points.push_back({-10.0 + noise(rng), noise(rng)});
  for (int i = 0; i < 100; ++i) points.push_back({10.0 + noise(rng), noise(rng)});

  EmConfig cfg;
  cfg.seed = 99;
  const auto gmm = fit_em(points, 2, cfg);
  REQUIRE(gmm.components.size() == 2);
  const auto& a = gmm.components[0];
  const auto& b = gmm.components[1];
  const auto& left = a.mean.x < b.mean.x ? a : b;
  const auto& right = a.mean.x < b.mean.x ? b : a;
  CHECK(std::abs(left.mean.x + 10.0) < 0.1);
  CHECK(std::abs(left.mean.y) < 0.1);
  CHECK(std::abs(right.mean.x - 10.0) < 0.1);
  CHECK(left.weight == doctest::Approx(0.5).epsilon(0.1));
  CHECK(right.weight == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("fit_em log-likelihood is non-decreasing") {
  auto rng = make_engine(606);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Vec2> points;
    for (int i = 0; i < 80; ++i) points.push_back({u(rng), u(rng)});
    EmConfig cfg;
    cfg.seed = rep;
    std::vector<double> trace;
    fit_em(points, 3, cfg, &trace);
    for (std::size_t i = 1; i < trace.size(); ++i)
      CHECK(trace[i] >= trace[i - 1] - 1e-9);
  }
}

TEST_CASE("fit_em rejects bad inputs") {
  std::vector<Vec2> points{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(fit_em(points, 3, EmConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(fit_em({}, 1, EmConfig{}), std::invalid_argument);
}

TEST_CASE("fit_em is deterministic per seed") {
  auto rng = make_engine(707);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec2> points;
  for (int i = 0; i < 50; ++i) points.push_back({u(rng), u(rng)});
  EmConfig cfg;
  cfg.seed = 12;
  const auto a = fit_em(points, 2, cfg);
  const auto b = fit_em(points, 2, cfg);
  for (std::size_t i = 0; i < a.components.size(); ++i) {
    CHECK(a.components[i].weight == b.components[i].weight);
    CHECK(a.components[i].mean.x == b.components[i].mean.x);
    CHECK(a.components[i].covariance.xx == b.components[i].covariance.xx);
  }
}

TEST_CASE("modes_as_gmm uses uniform weights without probabilities") {
  PredictionSet pred;
  pred.agent_id = "a";
  Trajectory mode;
  mode.dt = 0.1;
  mode.points = {{0, 0}, {1, 0}};
  pred.modes.assign(6, mode);
  const auto gmm = modes_as_gmm(pred, 1, 0.5);
  REQUIRE(gmm.components.size() == 6);
  for (const auto& c : gmm.components) CHECK(c.weight == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("modes_as_gmm passes probabilities through") {
  PredictionSet pred;
  pred.agent_id = "a";
  Trajectory mode;
  mode.dt = 0.1;
  mode.points = {{0, 0}};
  pred.modes = {mode, mode};
  pred.mode_probs = std::vector<double>{0.7, 0.3};
  const auto gmm = modes_as_gmm(pred, 0, 0.5);
  CHECK(gmm.components[0].weight == 0.7);
  CHECK(gmm.components[1].weight == 0.3);
}

TEST_CASE("modes_as_gmm single mode collapses to sigma0^2 I") {
  PredictionSet pred;
  pred.agent_id = "a";
  Trajectory mode;
  mode.dt = 0.1;
  mode.points = {{2.0, 3.0}};
  pred.modes = {mode};
  const auto cov = collapse(modes_as_gmm(pred, 0, 0.5));
  CHECK(cov.matrix.xx == 0.25);
  CHECK(cov.matrix.xy == 0.0);
  CHECK(cov.matrix.yy == 0.25);
}

TEST_CASE("collapse equals Monte-Carlo sample covariance for random mixtures") {
  auto rng = make_engine(808);
  for (int rep = 0; rep < 10; ++rep) {
    const Gmm2D gmm = random_mixture(rng);
    const auto cov = collapse(gmm);
    const Sym2 mc = sample_covariance(gmm, 200000, derive_seed(888, rep));
    const double sxy = std::sqrt(cov.matrix.xx * cov.matrix.yy);
    CHECK(std::abs(mc.xx - cov.matrix.xx) <= 0.02 * std::max(cov.matrix.xx, 1e-6));
    CHECK(std::abs(mc.yy - cov.matrix.yy) <= 0.02 * std::max(cov.matrix.yy, 1e-6));
    CHECK(std::abs(mc.xy - cov.matrix.xy) <= 0.02 * std::max(std::abs(cov.matrix.xy), sxy));
  }
}
