#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "edeva/core.hpp"
#include "edeva/gmm.hpp"

namespace edeva {

enum class ErrorVariant { ade, fde, min_ade, min_fde, ave_ade, ave_fde };

inline constexpr std::array<ErrorVariant, 6> kAllErrorVariants = {
    ErrorVariant::ade,     ErrorVariant::fde,     ErrorVariant::min_ade,
    ErrorVariant::min_fde, ErrorVariant::ave_ade, ErrorVariant::ave_fde};

inline std::string to_string(ErrorVariant v) {
  switch (v) {
    case ErrorVariant::ade: return "ADE";
    case ErrorVariant::fde: return "FDE";
    case ErrorVariant::min_ade: return "minADE";
    case ErrorVariant::min_fde: return "minFDE";
    case ErrorVariant::ave_ade: return "aveADE";
    case ErrorVariant::ave_fde: return "aveFDE";
  }
  throw std::logic_error("unknown error variant");
}

inline ErrorVariant error_variant_from_string(const std::string& s) {
  for (ErrorVariant v : kAllErrorVariants)
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown error variant: " + s);
}

// Mean over agents and timesteps of the ellipse-area diversity of the
// per-timestep mixture of mode endpoints.
inline double gad(const std::vector<PredictionSet>& preds,
                  const GmmConstruction& construction = {}) {
  if (preds.empty())
    throw std::invalid_argument("gad: empty prediction list");
  const std::size_t horizon = preds.front().horizon();
  if (horizon == 0)
    throw std::invalid_argument("gad: empty prediction horizon");
  for (const auto& p : preds)
    if (p.horizon() != horizon)
      throw std::invalid_argument("gad: prediction horizons differ");

  double sum = 0.0;
  for (const auto& pred : preds)
    for (std::size_t t = 0; t < horizon; ++t)
      sum += diversity_area(collapse(gmm_at_timestep(pred, t, construction)));
  return sum / (static_cast<double>(preds.size()) * static_cast<double>(horizon));
}

namespace detail {

inline double mode_ade(const Trajectory& mode, const Trajectory& truth) {
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.length(); ++t)
    sum += norm(mode.points[t] - truth.points[t]);
  return sum / static_cast<double>(truth.length());
}

inline double mode_fde(const Trajectory& mode, const Trajectory& truth) {
  return norm(mode.points.back() - truth.points.back());
}

}  // namespace detail

// ADE/FDE use the highest-probability mode, min* the best mode by that
// criterion, ave* the mean over modes.
inline double displacement_error(const PredictionSet& preds, const Trajectory& truth,
                                 ErrorVariant variant) {
  if (preds.modes.empty())
    throw std::invalid_argument("displacement_error: no modes");
  if (preds.horizon() != truth.length())
    throw std::invalid_argument("horizon mismatch");

  switch (variant) {
    case ErrorVariant::ade:
      return detail::mode_ade(preds.modes[preds.best_mode_index()], truth);
    case ErrorVariant::fde:
      return detail::mode_fde(preds.modes[preds.best_mode_index()], truth);
    case ErrorVariant::min_ade: {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : preds.modes) best = std::min(best, detail::mode_ade(m, truth));
      return best;
    }
    case ErrorVariant::min_fde: {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : preds.modes) best = std::min(best, detail::mode_fde(m, truth));
      return best;
    }
    case ErrorVariant::ave_ade: {
      double sum = 0.0;
      for (const auto& m : preds.modes) sum += detail::mode_ade(m, truth);
      return sum / static_cast<double>(preds.modes.size());
    }
    case ErrorVariant::ave_fde: {
      double sum = 0.0;
      for (const auto& m : preds.modes) sum += detail::mode_fde(m, truth);
      return sum / static_cast<double>(preds.modes.size());
    }
  }
  throw std::logic_error("unknown error variant");
}

// Predictions one predictor produced for every non-ego agent of one scenario.
struct ScenarioPredictions {
  std::string scenario_id;
  std::string predictor_id;
  std::vector<PredictionSet> predictions;
};

struct MetricsRow {
  std::string scenario_id;
  std::string predictor_id;
  double gad{0.0};
  std::array<double, 6> errors{};  // indexed by ErrorVariant order
  std::vector<std::string> flags;  // e.g. agents without predictions

  double error(ErrorVariant v) const { return errors[static_cast<std::size_t>(v)]; }
};

// One row per (scenario, predictor), ordered by that key. Agents missing a
// prediction flag the row instead of dropping it.
inline std::vector<MetricsRow> batch_metrics(
    const std::vector<ScenarioLog>& logs, const std::vector<ScenarioPredictions>& preds,
    const GmmConstruction& construction = {}) {
  std::map<std::string, const ScenarioLog*> by_id;
  for (const auto& log : logs) by_id[log.scenario_id] = &log;

  std::set<std::pair<std::string, std::string>> seen;
  std::vector<MetricsRow> rows;
  rows.reserve(preds.size());
  for (const auto& sp : preds) {
    if (!seen.insert({sp.scenario_id, sp.predictor_id}).second)
      throw std::invalid_argument("duplicate evaluation key: " + sp.scenario_id + "/" +
                                  sp.predictor_id);
    MetricsRow row;
    row.scenario_id = sp.scenario_id;
    row.predictor_id = sp.predictor_id;

    const auto it = by_id.find(sp.scenario_id);
    if (it == by_id.end()) {
      row.flags.push_back("scenario not found");
      rows.push_back(std::move(row));
      continue;
    }
    const ScenarioLog& log = *it->second;

    std::set<std::string> predicted;
    for (const auto& p : sp.predictions) predicted.insert(p.agent_id);
    for (const auto& [id, fut] : log.futures)
      if (id != kEgoId && predicted.find(id) == predicted.end())
        row.flags.push_back("missing prediction for agent " + id);

    if (!sp.predictions.empty()) {
      row.gad = gad(sp.predictions, construction);
      for (ErrorVariant v : kAllErrorVariants) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& p : sp.predictions) {
          const auto fut = log.futures.find(p.agent_id);
          if (fut == log.futures.end()) continue;
          sum += displacement_error(p, fut->second, v);
          ++n;
        }
        row.errors[static_cast<std::size_t>(v)] =
            n > 0 ? sum / static_cast<double>(n) : 0.0;
      }
    } else {
      row.flags.push_back("no predictions");
    }
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.scenario_id, a.predictor_id) < std::tie(b.scenario_id, b.predictor_id);
  });
  return rows;
}

}  // namespace edeva
