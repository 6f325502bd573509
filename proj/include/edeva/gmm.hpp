#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/random.hpp"

namespace edeva {

// Symmetric 2x2 matrix stored as its three distinct entries (m^2 for covariances).
struct Sym2 {
  double xx{0.0};
  double xy{0.0};
  double yy{0.0};
};

inline Sym2 operator+(Sym2 a, Sym2 b) { return {a.xx + b.xx, a.xy + b.xy, a.yy + b.yy}; }
inline Sym2 operator*(double s, Sym2 m) { return {s * m.xx, s * m.xy, s * m.yy}; }
inline double det(Sym2 m) { return m.xx * m.yy - m.xy * m.xy; }
inline double trace(Sym2 m) { return m.xx + m.yy; }

// Outer product v v^T.
inline Sym2 outer(Vec2 v) { return {v.x * v.x, v.x * v.y, v.y * v.y}; }

// General 2x2, used for the orthogonal eigenvector matrix Q (columns are eigenvectors).
struct Mat2 {
  double m00{1.0}, m01{0.0};
  double m10{0.0}, m11{1.0};
};

inline double det(Mat2 m) { return m.m00 * m.m11 - m.m01 * m.m10; }

struct GmmComponent {
  double weight{1.0};
  Vec2 mean;
  Sym2 covariance;
};

struct Gmm2D {
  std::vector<GmmComponent> components;
};

struct Cov2 {
  Sym2 matrix;
  double lambda1{0.0};  // lambda1 >= lambda2
  double lambda2{0.0};
  Mat2 q;               // columns: eigenvectors for lambda1, lambda2
};

struct EigenPair {
  double lambda1{0.0};
  double lambda2{0.0};
  Mat2 q;
};

/*
 * Closed-form eigendecomposition of a symmetric 2x2 matrix [a c; c b].
 * Roots of the characteristic polynomial, eigenvalues ordered lambda1 >= lambda2.
 * The eigenvector branch follows the larger |diag - lambda1| entry, which keeps
 * the normalization well away from cancellation; the second eigenvector is the
 * 90-degree rotation of the first, so Q is orthogonal with det(Q) = 1.
 */
inline EigenPair eigen2(double m00, double m01, double m10, double m11) {
  if (std::abs(m01 - m10) > 1e-9)
    throw std::invalid_argument("matrix not symmetric");
  const double a = m00;
  const double b = m11;
  const double c = 0.5 * (m01 + m10);

  const double disc = std::sqrt((a - b) * (a - b) + 4.0 * c * c);
  const double l1 = 0.5 * (a + b + disc);
  const double l2 = 0.5 * (a + b - disc);

  Vec2 v{1.0, 0.0};
  if (std::abs(a - l1) > std::abs(b - l1)) {
    const double f = std::hypot(c, l1 - a);
    if (f > 0.0) v = {c / f, (l1 - a) / f};
  } else {
    const double f = std::hypot(c, l1 - b);
    if (f > 0.0) v = {(l1 - b) / f, c / f};
  }

  EigenPair out;
  out.lambda1 = l1;
  out.lambda2 = l2;
  out.q = Mat2{v.x, -v.y, v.y, v.x};
  return out;
}

inline EigenPair eigen2(Sym2 m) { return eigen2(m.xx, m.xy, m.xy, m.yy); }

inline Cov2 make_cov2(Sym2 m) {
  const EigenPair e = eigen2(m);
  return Cov2{m, e.lambda1, e.lambda2, e.q};
}

// Law of total covariance: between-component spread plus mean component covariance.
// Divides by the total weight so that unnormalized weights (and the fl(1/M)*M
// residue of uniform weights) do not leak into the result.
inline Cov2 collapse(const Gmm2D& gmm) {
  if (gmm.components.empty())
    throw std::invalid_argument("collapse: empty mixture");
  double wsum = 0.0;
  double mx = 0.0, my = 0.0;
  for (const auto& c : gmm.components) {
    wsum += c.weight;
    mx += c.weight * c.mean.x;
    my += c.weight * c.mean.y;
  }
  if (!(wsum > 0.0))
    throw std::invalid_argument("collapse: non-positive total weight");
  const Vec2 mean_bar{mx / wsum, my / wsum};

  Sym2 total;
  for (const auto& c : gmm.components) {
    const Vec2 d = c.mean - mean_bar;
    total = total + c.weight * (outer(d) + c.covariance);
  }
  return make_cov2((1.0 / wsum) * total);
}

// sqrt(det) of the collapsed covariance: the uncertainty-ellipse area with the
// constant factor pi dropped.
inline double diversity_area(const Cov2& cov) {
  return std::sqrt(std::max(0.0, cov.lambda1 * cov.lambda2));
}

inline constexpr double kCovarianceFloor = 1e-6;  // m^2

// One isotropic component per predicted mode at timestep t.
inline Gmm2D modes_as_gmm(const PredictionSet& pred, std::size_t t, double sigma0) {
  if (!(sigma0 > 0.0))
    throw std::invalid_argument("modes_as_gmm: sigma0 must be positive");
  if (pred.modes.empty() || t >= pred.horizon())
    throw std::invalid_argument("modes_as_gmm: timestep beyond horizon");
  const double var = std::max(sigma0 * sigma0, kCovarianceFloor);
  const double uniform = 1.0 / static_cast<double>(pred.modes.size());
  Gmm2D out;
  out.components.reserve(pred.modes.size());
  for (std::size_t m = 0; m < pred.modes.size(); ++m) {
    GmmComponent c;
    c.weight = pred.mode_probs ? (*pred.mode_probs)[m] : uniform;
    c.mean = pred.modes[m].points[t];
    c.covariance = Sym2{var, 0.0, var};
    out.components.push_back(c);
  }
  return out;
}

struct EmConfig {
  int max_iterations{100};
  double tolerance{1e-8};
  std::uint64_t seed{0};
  double covariance_floor{kCovarianceFloor};
};

namespace detail {

inline double log_gauss2(Vec2 p, Vec2 mu, Sym2 cov) {
  const double d = det(cov);
  const Vec2 r = p - mu;
  // inverse of [xx xy; xy yy] applied to r
  const double qx = (cov.yy * r.x - cov.xy * r.y) / d;
  const double qy = (-cov.xy * r.x + cov.xx * r.y) / d;
  const double maha = r.x * qx + r.y * qy;
  return -std::log(2.0 * 3.14159265358979323846) - 0.5 * std::log(d) - 0.5 * maha;
}

// k-means++ seeding followed by a few Lloyd iterations; returns cluster centers.
inline std::vector<Vec2> kmeans_centers(const std::vector<Vec2>& points, std::size_t k,
                                        std::mt19937_64& rng) {
  std::vector<Vec2> centers;
  centers.reserve(k);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  centers.push_back(points[pick(rng)]);
  std::vector<double> d2(points.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) {
        const Vec2 r = points[i] - c;
        best = std::min(best, dot(r, r));
      }
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(points[pick(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    std::size_t chosen = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(points[chosen]);
  }
  std::vector<std::size_t> assign(points.size(), 0);
  for (int iter = 0; iter < 20; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const Vec2 r = points[i] - centers[c];
        const double d = dot(r, r);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (assign[i] != arg) {
        assign[i] = arg;
        changed = true;
      }
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      Vec2 sum;
      std::size_t n = 0;
      for (std::size_t i = 0; i < points.size(); ++i)
        if (assign[i] == c) {
          sum = sum + points[i];
          ++n;
        }
      if (n > 0) centers[c] = (1.0 / static_cast<double>(n)) * sum;
    }
    if (!changed) break;
  }
  return centers;
}

}  // namespace detail

// Maximum-likelihood mixture fit; covariances floored by adding eps*I each M-step.
// Deterministic for a fixed config.seed. Optionally records the per-iteration
// log-likelihood trace (non-decreasing).
inline Gmm2D fit_em(const std::vector<Vec2>& points, std::size_t n_components,
                    const EmConfig& config, std::vector<double>* ll_trace = nullptr) {
  if (points.empty())
    throw std::invalid_argument("fit_em: empty input");
  if (n_components < 1 || n_components > points.size())
    throw std::invalid_argument("fit_em: more components than points");

  const double n = static_cast<double>(points.size());
  const Sym2 floor_term{config.covariance_floor, 0.0, config.covariance_floor};

  Gmm2D gmm;
  if (n_components == 1) {
    // Closed-form ML estimate for a single Gaussian.
    Vec2 mean;
    for (const auto& p : points) mean = mean + p;
    mean = (1.0 / n) * mean;
    Sym2 cov;
    for (const auto& p : points) cov = cov + outer(p - mean);
    cov = (1.0 / n) * cov + floor_term;
    gmm.components.push_back({1.0, mean, cov});
    if (ll_trace) {
      double ll = 0.0;
      for (const auto& p : points) ll += detail::log_gauss2(p, mean, cov);
      ll_trace->push_back(ll);
    }
    return gmm;
  }

  auto rng = make_engine(config.seed);
  const auto centers = detail::kmeans_centers(points, n_components, rng);
  for (const auto& c : centers)
    gmm.components.push_back(
        {1.0 / static_cast<double>(n_components), c, Sym2{1.0, 0.0, 1.0}});

  std::vector<double> resp(points.size() * n_components);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    // E step (log-sum-exp over components)
    double ll = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n_components; ++k) {
        const auto& c = gmm.components[k];
        const double lg = std::log(std::max(c.weight, 1e-300)) +
                          detail::log_gauss2(points[i], c.mean, c.covariance);
        resp[i * n_components + k] = lg;
        mx = std::max(mx, lg);
      }
      double denom = 0.0;
      for (std::size_t k = 0; k < n_components; ++k)
        denom += std::exp(resp[i * n_components + k] - mx);
      const double log_denom = mx + std::log(denom);
      ll += log_denom;
      for (std::size_t k = 0; k < n_components; ++k)
        resp[i * n_components + k] = std::exp(resp[i * n_components + k] - log_denom);
    }
    if (ll_trace) ll_trace->push_back(ll);

    // M step
    for (std::size_t k = 0; k < n_components; ++k) {
      double nk = 0.0;
      Vec2 mean;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double r = resp[i * n_components + k];
        nk += r;
        mean = mean + r * points[i];
      }
      nk = std::max(nk, 1e-12);
      mean = (1.0 / nk) * mean;
      Sym2 cov;
      for (std::size_t i = 0; i < points.size(); ++i)
        cov = cov + resp[i * n_components + k] * outer(points[i] - mean);
      auto& c = gmm.components[k];
      c.weight = nk / n;
      c.mean = mean;
      c.covariance = (1.0 / nk) * cov + floor_term;
    }

    if (ll - prev_ll < config.tolerance && iter > 0) break;
    prev_ll = ll;
  }
  return gmm;
}

// Per-timestep mixture over a prediction's mode endpoints.
struct GmmConstruction {
  enum class Method { automatic, mode_per_component, em };
  Method method{Method::automatic};
  double sigma0{0.5};        // m, isotropic std for mode-per-component
  std::size_t em_max_components{3};
  EmConfig em;

  // automatic: EM only pays off once a predictor emits enough samples.
  bool use_em(std::size_t n_modes) const {
    switch (method) {
      case Method::mode_per_component: return false;
      case Method::em: return true;
      case Method::automatic: return n_modes >= 9;
    }
    return false;
  }

  std::string describe(std::size_t n_modes) const {
    if (use_em(n_modes))
      return "em(k=" + std::to_string(std::min(em_max_components, n_modes / 3)) + ")";
    return "mode_per_component(sigma0=" + std::to_string(sigma0) + ")";
  }
};

inline Gmm2D gmm_at_timestep(const PredictionSet& pred, std::size_t t,
                             const GmmConstruction& construction) {
  const std::size_t m = pred.modes.size();
  if (!construction.use_em(m)) return modes_as_gmm(pred, t, construction.sigma0);
  std::vector<Vec2> endpoints;
  endpoints.reserve(m);
  for (const auto& mode : pred.modes) endpoints.push_back(mode.points[t]);
  const std::size_t k = std::max<std::size_t>(1, std::min(construction.em_max_components, m / 3));
  return fit_em(endpoints, k, construction.em);
}

}  // namespace edeva
