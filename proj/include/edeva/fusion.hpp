#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/metrics.hpp"

namespace edeva {

enum class Normalization { raw, zscore, minmax };

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::raw: return "raw";
    case Normalization::zscore: return "zscore";
    case Normalization::minmax: return "minmax";
  }
  throw std::logic_error("unknown normalization");
}

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "raw") return Normalization::raw;
  if (s == "zscore") return Normalization::zscore;
  if (s == "minmax") return Normalization::minmax;
  throw std::invalid_argument("unknown normalization: " + s);
}

enum class Ablation { full, fixed_pc, error_only, diversity_only };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::fixed_pc: return "fixed_pc";
    case Ablation::error_only: return "error_only";
    case Ablation::diversity_only: return "diversity_only";
  }
  throw std::logic_error("unknown ablation");
}

struct FusionConfig {
  Normalization normalization{Normalization::minmax};
  ErrorVariant error_variant{ErrorVariant::ade};
  Ablation ablation{Ablation::full};
  double fixed_pc_value{0.5};  // used when ablation == fixed_pc
};

// Per-batch normalization. Degenerate batches (zero range / zero std) map to 0.
inline std::vector<double> normalize(const std::vector<double>& values, Normalization mode) {
  if (values.empty())
    throw std::invalid_argument("normalize: empty batch");
  switch (mode) {
    case Normalization::raw:
      return values;
    case Normalization::minmax: {
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      const double range = *hi - *lo;
      std::vector<double> out(values.size(), 0.0);
      if (range > 0.0)
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
      return out;
    }
    case Normalization::zscore: {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(values.size());  // population variance
      const double sd = std::sqrt(var);
      std::vector<double> out(values.size(), 0.0);
      if (sd > 0.0)
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
      return out;
    }
  }
  throw std::logic_error("unknown normalization");
}

// Criticality-weighted blend; the error term enters negated so that higher
// score always means better.
inline double ed_eva_score(double p_c, double gad_norm, double err_norm) {
  return p_c * gad_norm + (1.0 - p_c) * (-err_norm);
}

// p_critical for a row under the configured ablation. error_only and
// diversity_only are the p_c = 0 / p_c = 1 limits of the same formula.
inline double effective_p_critical(double model_p_c, const FusionConfig& config) {
  switch (config.ablation) {
    case Ablation::full: return model_p_c;
    case Ablation::fixed_pc: return config.fixed_pc_value;
    case Ablation::error_only: return 0.0;
    case Ablation::diversity_only: return 1.0;
  }
  throw std::logic_error("unknown ablation");
}

// Joins metric rows with criticality probabilities and performances, normalizes
// gad / e_error over the whole batch, and scores every row. p_critical values
// are keyed by scenario_id (the classifier sees the scenario, not the
// predictor); rows missing one in full mode are an error.
inline std::vector<EvaluationRecord> evaluate_predictor(
    const std::vector<MetricsRow>& rows,
    const std::map<std::string, double>& p_critical_by_scenario,
    const std::map<std::pair<std::string, std::string>, PerformanceRecord>& performances,
    const FusionConfig& config) {
  if (rows.empty()) return {};

  std::vector<double> gads, errs;
  gads.reserve(rows.size());
  errs.reserve(rows.size());
  for (const auto& row : rows) {
    gads.push_back(row.gad);
    errs.push_back(row.error(config.error_variant));
  }
  const std::vector<double> gad_norm = normalize(gads, config.normalization);
  const std::vector<double> err_norm = normalize(errs, config.normalization);

  std::vector<EvaluationRecord> records;
  records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    double model_pc = 0.5;
    if (config.ablation == Ablation::full) {
      const auto it = p_critical_by_scenario.find(row.scenario_id);
      if (it == p_critical_by_scenario.end())
        throw std::invalid_argument("missing p_critical for scenario " + row.scenario_id);
      model_pc = it->second;
    }
    EvaluationRecord rec;
    rec.scenario_id = row.scenario_id;
    rec.predictor_id = row.predictor_id;
    rec.p_critical = effective_p_critical(model_pc, config);
    rec.gad = row.gad;
    rec.e_error = row.error(config.error_variant);
    rec.gad_norm = gad_norm[i];
    rec.e_error_norm = err_norm[i];
    rec.score = ed_eva_score(rec.p_critical, rec.gad_norm, rec.e_error_norm);
    const auto perf = performances.find({row.scenario_id, row.predictor_id});
    if (perf != performances.end()) rec.performance = perf->second;
    records.push_back(std::move(rec));
  }
  return records;
}

// Mean score per predictor: the scalar M(P_i) used for predictor ranking.
inline std::map<std::string, double> mean_score_by_predictor(
    const std::vector<EvaluationRecord>& records) {
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) {
    sums[r.predictor_id] += r.score;
    counts[r.predictor_id] += 1;
  }
  for (auto& [id, s] : sums) s /= static_cast<double>(counts[id]);
  return sums;
}

}  // namespace edeva
