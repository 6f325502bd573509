#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/random.hpp"

namespace edeva {

inline constexpr int kGraphNodes = 8;        // ego + 7 neighbors
inline constexpr int kNodeFeatures = 14;
inline constexpr int kGcnWidth = 64;
inline constexpr int kLstmWidth = 32;
inline constexpr double kNeighborDistance = 5.0;  // m, adjacency threshold d_th
inline constexpr double kTtcClip = 10.0;          // s, rel-motion feature clip
inline constexpr double kCriticalTtc = 3.0;       // s, label threshold
inline constexpr double kCollisionGap = 1.0;      // m, label threshold

struct SceneGraph {
  Eigen::MatrixXd node_features;  // N x F
  Eigen::MatrixXd adjacency;      // N x N, row-stochastic
};

// T=15 frames sharing one adjacency (frozen at the window start).
struct GraphSequence {
  Eigen::MatrixXd adjacency;            // N x N
  std::vector<Eigen::MatrixXd> frames;  // T of N x F
};

struct LabeledSample {
  GraphSequence sequence;
  int label{0};  // 1 critical, 0 non-critical
};

// A_ij = (1{|p_i - p_j| < d_th} + delta_ij) / row sum. The indicator fires on
// the diagonal too (distance 0), so isolated nodes get row weight 2/2 = 1.
inline Eigen::MatrixXd build_adjacency(const std::vector<Vec2>& positions,
                                       double d_th = kNeighborDistance) {
  const int n = static_cast<int>(positions.size());
  if (n < 1 || !(d_th > 0.0))
    throw std::invalid_argument("build_adjacency: need >= 1 position and d_th > 0");
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double v = norm(positions[i] - positions[j]) < d_th ? 1.0 : 0.0;
      if (i == j) v += 1.0;
      a(i, j) = v;
    }
    a.row(i) /= a.row(i).sum();
  }
  return a;
}

// [position(3), velocity(3), acceleration(3), rel_motion(5)] where rel_motion =
// [mean dist, min dist, mean closing speed, min TTC clipped, count/7] over the
// neighbor set's 2D kinematics. Empty neighbor set -> zeros.
inline Eigen::Matrix<double, kNodeFeatures, 1> node_features(
    const AgentState& state, const std::vector<AgentState>& neighbors) {
  Eigen::Matrix<double, kNodeFeatures, 1> f;
  f.setZero();
  f(0) = state.position.x;
  f(1) = state.position.y;
  f(2) = state.position.z;
  f(3) = state.velocity.x;
  f(4) = state.velocity.y;
  f(5) = state.velocity.z;
  f(6) = state.acceleration.x;
  f(7) = state.acceleration.y;
  f(8) = state.acceleration.z;
  if (neighbors.empty()) return f;

  double dist_sum = 0.0;
  double dist_min = std::numeric_limits<double>::infinity();
  double closing_sum = 0.0;
  double ttc_min = kTtcClip;
  for (const auto& nb : neighbors) {
    const Vec2 dp{nb.position.x - state.position.x, nb.position.y - state.position.y};
    const Vec2 dv{nb.velocity.x - state.velocity.x, nb.velocity.y - state.velocity.y};
    const double dist = norm(dp);
    dist_sum += dist;
    dist_min = std::min(dist_min, dist);
    // range rate d|dp|/dt = (dp.dv)/|dp|; closing speed is its negation
    const double closing = dist > 1e-9 ? -dot(dp, dv) / dist : 0.0;
    closing_sum += closing;
    if (closing > 1e-9) ttc_min = std::min(ttc_min, std::min(kTtcClip, dist / closing));
  }
  const double n = static_cast<double>(neighbors.size());
  f(9) = dist_sum / n;
  f(10) = dist_min;
  f(11) = closing_sum / n;
  f(12) = ttc_min;
  f(13) = n / 7.0;
  return f;
}

struct CriticalityModel {
  // GCN
  Eigen::MatrixXd w0;  // F x d_g
  Eigen::MatrixXd w1;  // d_g x d_g
  // LSTM gates (input, forget, candidate, output)
  Eigen::MatrixXd wx_i, wx_f, wx_g, wx_o;  // d_h x d_g
  Eigen::MatrixXd wh_i, wh_f, wh_g, wh_o;  // d_h x d_h
  Eigen::MatrixXd b_i, b_f, b_g, b_o;      // d_h x 1
  // linear head
  Eigen::MatrixXd head_w;  // d_h x 1
  Eigen::MatrixXd head_b;  // 1 x 1

  static CriticalityModel zeros() {
    CriticalityModel m;
    m.w0 = Eigen::MatrixXd::Zero(kNodeFeatures, kGcnWidth);
    m.w1 = Eigen::MatrixXd::Zero(kGcnWidth, kGcnWidth);
    for (auto* g : {&m.wx_i, &m.wx_f, &m.wx_g, &m.wx_o})
      *g = Eigen::MatrixXd::Zero(kLstmWidth, kGcnWidth);
    for (auto* g : {&m.wh_i, &m.wh_f, &m.wh_g, &m.wh_o})
      *g = Eigen::MatrixXd::Zero(kLstmWidth, kLstmWidth);
    for (auto* g : {&m.b_i, &m.b_f, &m.b_g, &m.b_o})
      *g = Eigen::MatrixXd::Zero(kLstmWidth, 1);
    m.head_w = Eigen::MatrixXd::Zero(kLstmWidth, 1);
    m.head_b = Eigen::MatrixXd::Zero(1, 1);
    return m;
  }

  // Uniform Xavier init in +-sqrt(6/(fan_in+fan_out)) per matrix; biases zero.
  static CriticalityModel init(std::uint64_t seed) {
    CriticalityModel m = zeros();
    auto rng = make_engine(derive_seed(seed, "model-init"));
    auto fill = [&rng](Eigen::MatrixXd& w) {
      const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    };
    fill(m.w0);
    fill(m.w1);
    for (auto* g : {&m.wx_i, &m.wx_f, &m.wx_g, &m.wx_o}) fill(*g);
    for (auto* g : {&m.wh_i, &m.wh_f, &m.wh_g, &m.wh_o}) fill(*g);
    fill(m.head_w);
    return m;
  }

  std::vector<Eigen::MatrixXd*> params() {
    return {&w0,   &w1,   &wx_i, &wx_f, &wx_g,    &wx_o,   &wh_i, &wh_f,
            &wh_g, &wh_o, &b_i,  &b_f,  &b_g,     &b_o,    &head_w, &head_b};
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    return {&w0,   &w1,   &wx_i, &wx_f, &wx_g,    &wx_o,   &wh_i, &wh_f,
            &wh_g, &wh_o, &b_i,  &b_f,  &b_g,     &b_o,    &head_w, &head_b};
  }
  static std::vector<std::string> param_names() {
    return {"w0",   "w1",   "wx_i", "wx_f", "wx_g",   "wx_o",   "wh_i", "wh_f",
            "wh_g", "wh_o", "b_i",  "b_f",  "b_g",    "b_o",    "head_w", "head_b"};
  }
};

using ModelGradients = CriticalityModel;

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

inline void check_sequence(const GraphSequence& seq) {
  if (seq.frames.size() != kClassifierWindow)
    throw std::invalid_argument("graph sequence must have exactly 15 frames");
  if (seq.adjacency.rows() != kGraphNodes || seq.adjacency.cols() != kGraphNodes)
    throw std::invalid_argument("adjacency must be 8x8");
  for (const auto& x : seq.frames)
    if (x.rows() != kGraphNodes || x.cols() != kNodeFeatures)
      throw std::invalid_argument("frame must be 8x14");
}

}  // namespace detail

// Per-frame: two GCN layers H' = relu(A H W), mean-pool over nodes.
// Depends on w0/w1 only.
inline std::vector<Eigen::VectorXd> pooled_sequence(const CriticalityModel& model,
                                                    const GraphSequence& seq) {
  detail::check_sequence(seq);
  if (model.w0.rows() != kNodeFeatures || model.w0.cols() != kGcnWidth ||
      model.w1.rows() != kGcnWidth || model.w1.cols() != kGcnWidth)
    throw std::invalid_argument("GCN weight shape mismatch");
  std::vector<Eigen::VectorXd> pooled;
  pooled.reserve(seq.frames.size());
  for (const auto& x : seq.frames) {
    const Eigen::MatrixXd h1 = (seq.adjacency * x * model.w0).cwiseMax(0.0);
    const Eigen::MatrixXd h2 = (seq.adjacency * h1 * model.w1).cwiseMax(0.0);
    pooled.push_back(h2.colwise().mean().transpose());
  }
  return pooled;
}

// LSTM over the pooled sequence, then sigmoid(w.h_T + b).
// Depends on the LSTM/head parameters only.
inline double lstm_head_probability(const CriticalityModel& model,
                                    const std::vector<Eigen::VectorXd>& pooled) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(kLstmWidth);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(kLstmWidth);
  for (const auto& x : pooled) {
    const Eigen::ArrayXd i =
        detail::sigmoid((model.wx_i * x + model.wh_i * h + model.b_i).array());
    const Eigen::ArrayXd f =
        detail::sigmoid((model.wx_f * x + model.wh_f * h + model.b_f).array());
    const Eigen::ArrayXd g = (model.wx_g * x + model.wh_g * h + model.b_g).array().tanh();
    const Eigen::ArrayXd o =
        detail::sigmoid((model.wx_o * x + model.wh_o * h + model.b_o).array());
    c = (f * c.array() + i * g).matrix();
    h = (o * c.array().tanh()).matrix();
  }
  const double logit = (model.head_w.col(0).dot(h)) + model.head_b(0, 0);
  const double p = detail::sigmoid(logit);
  return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

inline double forward(const CriticalityModel& model, const GraphSequence& seq) {
  return lstm_head_probability(model, pooled_sequence(model, seq));
}

// -[y log p + (1-y) log(1-p)], p clamped at 1e-7.
inline double loss_bce(double p, int label) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

// Exact reverse-mode gradients of loss_bce(forward(model, seq), label) for
// every parameter. BCE and the output sigmoid are fused: dL/dlogit = p - y.
inline ModelGradients backward(const CriticalityModel& model, const GraphSequence& seq,
                               int label, double* loss_out = nullptr) {
  detail::check_sequence(seq);
  const int t_len = static_cast<int>(seq.frames.size());
  const Eigen::MatrixXd& adj = seq.adjacency;

  // ---- forward with cached intermediates ----
  std::vector<Eigen::MatrixXd> ax(t_len), z1(t_len), h1(t_len), ah1(t_len), z2(t_len),
      h2(t_len);
  std::vector<Eigen::VectorXd> pooled(t_len);
  for (int t = 0; t < t_len; ++t) {
    ax[t] = adj * seq.frames[t];
    z1[t] = ax[t] * model.w0;
    h1[t] = z1[t].cwiseMax(0.0);
    ah1[t] = adj * h1[t];
    z2[t] = ah1[t] * model.w1;
    h2[t] = z2[t].cwiseMax(0.0);
    pooled[t] = h2[t].colwise().mean().transpose();
  }

  std::vector<Eigen::ArrayXd> gi(t_len), gf(t_len), gg(t_len), go(t_len), cs(t_len),
      hs(t_len), tanh_c(t_len);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(kLstmWidth);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(kLstmWidth);
  for (int t = 0; t < t_len; ++t) {
    const Eigen::VectorXd& x = pooled[t];
    gi[t] = detail::sigmoid((model.wx_i * x + model.wh_i * h + model.b_i).array());
    gf[t] = detail::sigmoid((model.wx_f * x + model.wh_f * h + model.b_f).array());
    gg[t] = (model.wx_g * x + model.wh_g * h + model.b_g).array().tanh();
    go[t] = detail::sigmoid((model.wx_o * x + model.wh_o * h + model.b_o).array());
    cs[t] = gf[t] * c.array() + gi[t] * gg[t];
    tanh_c[t] = cs[t].tanh();
    hs[t] = go[t] * tanh_c[t];
    c = cs[t].matrix();
    h = hs[t].matrix();
  }
  const double logit = model.head_w.col(0).dot(h) + model.head_b(0, 0);
  const double p = detail::sigmoid(logit);
  if (loss_out) *loss_out = loss_bce(p, label);

  // ---- backward ----
  ModelGradients grad = CriticalityModel::zeros();
  const double dlogit = p - static_cast<double>(label);
  grad.head_w.col(0) = dlogit * h;
  grad.head_b(0, 0) = dlogit;

  Eigen::ArrayXd dh = (dlogit * model.head_w.col(0)).array();
  Eigen::ArrayXd dc = Eigen::ArrayXd::Zero(kLstmWidth);
  std::vector<Eigen::VectorXd> dpooled(t_len);
  for (int t = t_len - 1; t >= 0; --t) {
    const Eigen::ArrayXd c_prev =
        t > 0 ? cs[t - 1] : Eigen::ArrayXd::Zero(kLstmWidth).eval();
    const Eigen::ArrayXd h_prev_a =
        t > 0 ? hs[t - 1] : Eigen::ArrayXd::Zero(kLstmWidth).eval();
    const Eigen::VectorXd h_prev = h_prev_a.matrix();
    const Eigen::VectorXd& x = pooled[t];

    const Eigen::ArrayXd do_ = dh * tanh_c[t];
    dc += dh * go[t] * (1.0 - tanh_c[t].square());
    const Eigen::ArrayXd di = dc * gg[t];
    const Eigen::ArrayXd dg = dc * gi[t];
    const Eigen::ArrayXd df = dc * c_prev;

    const Eigen::VectorXd du_i = (di * gi[t] * (1.0 - gi[t])).matrix();
    const Eigen::VectorXd du_f = (df * gf[t] * (1.0 - gf[t])).matrix();
    const Eigen::VectorXd du_g = (dg * (1.0 - gg[t].square())).matrix();
    const Eigen::VectorXd du_o = (do_ * go[t] * (1.0 - go[t])).matrix();

    grad.wx_i += du_i * x.transpose();
    grad.wx_f += du_f * x.transpose();
    grad.wx_g += du_g * x.transpose();
    grad.wx_o += du_o * x.transpose();
    grad.wh_i += du_i * h_prev.transpose();
    grad.wh_f += du_f * h_prev.transpose();
    grad.wh_g += du_g * h_prev.transpose();
    grad.wh_o += du_o * h_prev.transpose();
    grad.b_i += du_i;
    grad.b_f += du_f;
    grad.b_g += du_g;
    grad.b_o += du_o;

    dpooled[t] = model.wx_i.transpose() * du_i + model.wx_f.transpose() * du_f +
                 model.wx_g.transpose() * du_g + model.wx_o.transpose() * du_o;
    dh = (model.wh_i.transpose() * du_i + model.wh_f.transpose() * du_f +
          model.wh_g.transpose() * du_g + model.wh_o.transpose() * du_o)
             .array();
    dc *= gf[t];
  }

  for (int t = 0; t < t_len; ++t) {
    // mean-pool: every node row receives dg/N
    const Eigen::MatrixXd dh2 =
        Eigen::VectorXd::Constant(kGraphNodes, 1.0 / kGraphNodes) *
        dpooled[t].transpose();
    const Eigen::MatrixXd dz2 =
        ((z2[t].array() > 0.0).cast<double>() * dh2.array()).matrix();
    grad.w1 += ah1[t].transpose() * dz2;
    const Eigen::MatrixXd dh1 = adj.transpose() * dz2 * model.w1.transpose();
    const Eigen::MatrixXd dz1 =
        ((z1[t].array() > 0.0).cast<double>() * dh1.array()).matrix();
    grad.w0 += ax[t].transpose() * dz1;
  }
  return grad;
}

struct TrainConfig {
  int epochs{30};
  int batch_size{32};
  double learning_rate{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double adam_eps{1e-8};
  std::uint64_t seed{0};
};

struct TrainResult {
  CriticalityModel model;
  std::vector<double> loss_trace;  // mean loss per epoch
};

// Class-balanced sampling (each draw picks a class with probability 1/2, then a
// sample uniformly within it) + Adam on mean batch gradients. Deterministic per
// seed; single-threaded.
inline TrainResult train(const std::vector<LabeledSample>& samples,
                         const TrainConfig& config) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].label == 1 ? positives : negatives).push_back(i);
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("weighted sampling undefined: need both classes");

  TrainResult result;
  result.model = CriticalityModel::init(derive_seed(config.seed, "init"));

  ModelGradients m1 = CriticalityModel::zeros();
  ModelGradients m2 = CriticalityModel::zeros();
  auto p_m1 = m1.params();
  auto p_m2 = m2.params();
  auto p_model = result.model.params();

  auto rng = make_engine(derive_seed(config.seed, "sampler"));
  std::bernoulli_distribution pick_positive(0.5);
  std::uniform_int_distribution<std::size_t> upos(0, positives.size() - 1);
  std::uniform_int_distribution<std::size_t> uneg(0, negatives.size() - 1);

  long step = 0;
  const std::size_t draws_per_epoch = samples.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t drawn = 0;
    while (drawn < draws_per_epoch) {
      const std::size_t batch =
          std::min<std::size_t>(config.batch_size, draws_per_epoch - drawn);
      ModelGradients acc = CriticalityModel::zeros();
      auto p_acc = acc.params();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx =
            pick_positive(rng) ? positives[upos(rng)] : negatives[uneg(rng)];
        double loss = 0.0;
        const ModelGradients g =
            backward(result.model, samples[idx].sequence, samples[idx].label, &loss);
        epoch_loss += loss;
        auto p_g = g.params();
        for (std::size_t k = 0; k < p_acc.size(); ++k) *p_acc[k] += *p_g[k];
      }
      drawn += batch;
      ++step;
      const double scale = 1.0 / static_cast<double>(batch);
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < p_acc.size(); ++k) {
        const Eigen::ArrayXXd g = (scale * *p_acc[k]).array();
        p_m1[k]->array() = config.beta1 * p_m1[k]->array() + (1.0 - config.beta1) * g;
        p_m2[k]->array() =
            config.beta2 * p_m2[k]->array() + (1.0 - config.beta2) * g.square();
        p_model[k]->array() -=
            config.learning_rate * (p_m1[k]->array() / bc1) /
            ((p_m2[k]->array() / bc2).sqrt() + config.adam_eps);
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(draws_per_epoch));
  }
  return result;
}

// Collision proxy over ground-truth futures: any pair closer than 1 m, or any
// pair's range / closing-speed below 3 s, within the horizon.
inline int label_criticality(const ScenarioLog& log,
                             std::size_t horizon_steps = kClassifierWindow) {
  std::vector<const Trajectory*> futs;
  for (const auto& [id, f] : log.futures) futs.push_back(&f);
  if (futs.size() < 2) return 0;
  std::size_t steps = horizon_steps;
  for (const auto* f : futs) steps = std::min(steps, f->length());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t a = 0; a < futs.size(); ++a) {
      for (std::size_t b = a + 1; b < futs.size(); ++b) {
        const Vec2 pa = futs[a]->points[t];
        const Vec2 pb = futs[b]->points[t];
        const double range = norm(pa - pb);
        if (range < kCollisionGap) return 1;
        const double dt = futs[a]->dt;
        const std::size_t tn = t + 1 < steps ? t + 1 : t;
        const std::size_t tp = t + 1 < steps ? t : t - 1;
        if (tn == tp) continue;  // single-step future, no rate estimate
        const Vec2 va = (1.0 / dt) * (futs[a]->points[tn] - futs[a]->points[tp]);
        const Vec2 vb = (1.0 / dt) * (futs[b]->points[tn] - futs[b]->points[tp]);
        const Vec2 dp = pb - pa;
        const Vec2 dv = vb - va;
        const double closing = range > 1e-9 ? -dot(dp, dv) / range : 0.0;
        if (closing > 1e-9 && range / closing < kCriticalTtc) return 1;
      }
    }
  }
  return 0;
}

// Window extraction: last 15 history frames, ego in slot 0, up to 7 nearest
// neighbors at the window start, virtual self-connected nodes pad to 8. All
// positions are shifted so the ego starts at the origin (the classifier sees
// scene-relative geometry, never world coordinates).
inline GraphSequence build_graph_sequence(const ScenarioLog& log) {
  const auto ego_it = log.agents.find(kEgoId);
  if (ego_it == log.agents.end())
    throw std::invalid_argument("build_graph_sequence: ego agent absent");
  const std::size_t t_h = ego_it->second.size();
  if (t_h < kClassifierWindow)
    throw std::invalid_argument("build_graph_sequence: history shorter than window");
  const std::size_t start = t_h - kClassifierWindow;

  const Vec3 origin = ego_it->second[start].position;
  const Vec2 origin2{origin.x, origin.y};

  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [id, states] : log.agents) {
    if (id == kEgoId) continue;
    if (states.size() != t_h)
      throw std::invalid_argument("build_graph_sequence: ragged histories");
    const Vec2 p{states[start].position.x, states[start].position.y};
    ranked.push_back({norm(p - origin2), id});
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::string> node_ids{kEgoId};
  for (std::size_t i = 0; i < ranked.size() && node_ids.size() < kGraphNodes; ++i)
    node_ids.push_back(ranked[i].second);
  const std::size_t real = node_ids.size();

  auto shifted = [&](const AgentState& s) {
    AgentState out = s;
    out.position = {s.position.x - origin.x, s.position.y - origin.y,
                    s.position.z - origin.z};
    return out;
  };

  std::vector<Vec2> start_positions;
  for (const auto& id : node_ids) {
    const auto& st = log.agents.at(id)[start];
    start_positions.push_back({st.position.x - origin.x, st.position.y - origin.y});
  }
  const Eigen::MatrixXd real_adj = build_adjacency(start_positions);

  GraphSequence seq;
  seq.adjacency = Eigen::MatrixXd::Identity(kGraphNodes, kGraphNodes);
  seq.adjacency.topLeftCorner(real, real) = real_adj;

  for (std::size_t t = start; t < t_h; ++t) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(kGraphNodes, kNodeFeatures);
    for (std::size_t i = 0; i < real; ++i) {
      const AgentState self = shifted(log.agents.at(node_ids[i])[t]);
      std::vector<AgentState> neighbors;
      for (std::size_t j = 0; j < real; ++j)
        if (j != i) neighbors.push_back(shifted(log.agents.at(node_ids[j])[t]));
      x.row(i) = node_features(self, neighbors).transpose();
    }
    seq.frames.push_back(std::move(x));
  }
  return seq;
}

}  // namespace edeva
