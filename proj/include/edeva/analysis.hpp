#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/metrics.hpp"

namespace edeva {

// Product-moment correlation. Degenerate (constant) series are an error.
inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw std::invalid_argument("pearson: need equal lengths >= 3");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0)
    throw std::invalid_argument("pearson: degenerate series");
  return sxy / std::sqrt(sxx * syy);
}

// Mann-Whitney form: AUROC = (sum of positive midranks - n1(n1+1)/2) / (n1 n0).
// Equals P(random positive outranks random negative) with ties counted 0.5.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auroc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based midrank
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  double rank_sum = 0.0;
  std::size_t n1 = 0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == 1) {
      rank_sum += rank[k];
      ++n1;
    }
  const std::size_t n0 = labels.size() - n1;
  if (n1 == 0 || n0 == 0)
    throw std::invalid_argument("auroc: both classes required");
  return (rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1)) /
         (static_cast<double>(n1) * static_cast<double>(n0));
}

struct RocPoint {
  double threshold{0.0};
  double fpr{0.0};
  double tpr{0.0};
};

// Curve swept from the highest score downward; one point per distinct score.
inline std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("roc_points: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double n1 = 0.0, n0 = 0.0;
  for (int l : labels) (l == 1 ? n1 : n0) += 1.0;
  if (n1 == 0.0 || n0 == 0.0)
    throw std::invalid_argument("roc_points: both classes required");

  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) (labels[order[k]] == 1 ? tp : fp) += 1.0;
    pts.push_back({scores[order[i]], fp / n0, tp / n1});
    i = j + 1;
  }
  return pts;
}

struct CorrelationBlock {
  std::string predictor_id;
  std::string method;
  std::size_t samples{0};
  double r_efficiency{0.0};
  double r_discomfort{0.0};
  double r_unsafety{0.0};
  double r_overall{0.0};
  double auroc_overall{0.5};
};

struct CorrelationReport {
  std::vector<CorrelationBlock> blocks;
  std::map<std::pair<std::string, std::string>, std::vector<RocPoint>> roc;  // (predictor, method)
};

// Method score for one evaluation row. Error baselines are negated so that
// "higher is better" holds for every method.
inline double method_score(const std::string& method, const EvaluationRecord& rec,
                           const MetricsRow& metrics) {
  if (method == "ed_eva") return rec.score;
  if (method == "gad") return rec.gad;
  if (!method.empty() && method[0] == '-')
    return -metrics.error(error_variant_from_string(method.substr(1)));
  throw std::invalid_argument("unknown evaluation method: " + method);
}

namespace detail {

// Reports 0 for a degenerate pairing instead of propagating pearson's error;
// a constant series carries no rank information either way.
inline double pearson_or_zero(const std::vector<double>& xs, const std::vector<double>& ys) {
  try {
    return pearson(xs, ys);
  } catch (const std::invalid_argument&) {
    return 0.0;
  }
}

}  // namespace detail

// One correlation block per (predictor, method). AUROC labels binarize overall
// performance at the per-predictor median (strictly above = positive).
inline CorrelationReport build_report(const std::vector<EvaluationRecord>& evaluations,
                                      const std::vector<MetricsRow>& metric_rows,
                                      const std::vector<std::string>& methods) {
  std::map<std::pair<std::string, std::string>, const MetricsRow*> metrics_by_key;
  for (const auto& row : metric_rows) {
    if (!metrics_by_key.emplace(std::make_pair(row.scenario_id, row.predictor_id), &row)
             .second)
      throw std::invalid_argument("duplicate evaluation key: " + row.scenario_id + "/" +
                                  row.predictor_id);
  }
  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::vector<const EvaluationRecord*>> by_predictor;
  std::vector<std::string> missing;
  for (const auto& rec : evaluations) {
    if (!seen.insert({rec.scenario_id, rec.predictor_id}).second)
      throw std::invalid_argument("duplicate evaluation key: " + rec.scenario_id + "/" +
                                  rec.predictor_id);
    if (metrics_by_key.find({rec.scenario_id, rec.predictor_id}) == metrics_by_key.end())
      missing.push_back(rec.scenario_id + "/" + rec.predictor_id);
    else
      by_predictor[rec.predictor_id].push_back(&rec);
  }
  if (!missing.empty()) {
    std::string msg = "join mismatch, missing metric rows for:";
    for (const auto& key : missing) msg += " " + key;
    throw std::invalid_argument(msg);
  }

  CorrelationReport report;
  for (const auto& [predictor, recs] : by_predictor) {
    std::vector<double> overall;
    overall.reserve(recs.size());
    for (const auto* r : recs) overall.push_back(r->performance.overall);
    std::vector<double> sorted = overall;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted.size() % 2 == 1
                              ? sorted[sorted.size() / 2]
                              : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    std::vector<int> labels;
    labels.reserve(recs.size());
    for (double v : overall) labels.push_back(v > median ? 1 : 0);

    for (const auto& method : methods) {
      std::vector<double> xs;
      xs.reserve(recs.size());
      for (const auto* r : recs)
        xs.push_back(method_score(method, *r,
                                  *metrics_by_key.at({r->scenario_id, r->predictor_id})));
      CorrelationBlock block;
      block.predictor_id = predictor;
      block.method = method;
      block.samples = recs.size();
      std::vector<double> eff, dis, uns;
      for (const auto* r : recs) {
        eff.push_back(r->performance.efficiency);
        dis.push_back(r->performance.discomfort);
        uns.push_back(r->performance.unsafety);
      }
      block.r_efficiency = detail::pearson_or_zero(xs, eff);
      block.r_discomfort = detail::pearson_or_zero(xs, dis);
      block.r_unsafety = detail::pearson_or_zero(xs, uns);
      block.r_overall = detail::pearson_or_zero(xs, overall);
      block.auroc_overall = auroc(xs, labels);
      report.roc[{predictor, method}] = roc_points(xs, labels);
      report.blocks.push_back(std::move(block));
    }
  }
  return report;
}

}  // namespace edeva
