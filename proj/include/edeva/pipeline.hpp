#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "edeva/analysis.hpp"
#include "edeva/core.hpp"
#include "edeva/fusion.hpp"
#include "edeva/io.hpp"
#include "edeva/metrics.hpp"
#include "edeva/scenarionn.hpp"
#include "edeva/sim.hpp"

namespace edeva {

struct RunConfig {
  std::uint64_t master_seed{7};
  int highway_count{120};
  int intersection_count{80};
  int merge_count{60};
  int n_agents_min{3};
  int n_agents_max{6};
  std::vector<std::string> predictors{"noisy_cv:0.6", "noisy_cv:1.2", "noisy_cv:2.0"};
  int train_scenarios{2400};
  TrainConfig train;
  double holdout_fraction{0.2};
  FusionConfig fusion;
  GmmConstruction gmm;
  PlanConfig plan;
  std::string out_dir{"edeva_run"};
  int parallelism{1};

  std::vector<PredictorKind> predictor_kinds() const {
    std::vector<PredictorKind> kinds;
    for (const auto& p : predictors) kinds.push_back(PredictorKind::parse(p));
    return kinds;
  }
};

namespace detail {

inline nlohmann::json run_config_json(const RunConfig& c) {
  nlohmann::json j;
  j["master_seed"] = c.master_seed;
  j["highway_count"] = c.highway_count;
  j["intersection_count"] = c.intersection_count;
  j["merge_count"] = c.merge_count;
  j["n_agents_min"] = c.n_agents_min;
  j["n_agents_max"] = c.n_agents_max;
  j["predictors"] = c.predictors;
  j["train_scenarios"] = c.train_scenarios;
  j["train_epochs"] = c.train.epochs;
  j["train_batch_size"] = c.train.batch_size;
  j["train_learning_rate"] = c.train.learning_rate;
  j["holdout_fraction"] = c.holdout_fraction;
  j["normalization"] = to_string(c.fusion.normalization);
  j["error_variant"] = to_string(c.fusion.error_variant);
  j["ablation"] = to_string(c.fusion.ablation);
  j["fixed_pc_value"] = c.fusion.fixed_pc_value;
  j["gad_sigma0"] = c.gmm.sigma0;
  j["parallelism"] = c.parallelism;
  return j;
}

inline void apply_config_json(const nlohmann::json& j, RunConfig& c) {
  if (j.contains("master_seed")) c.master_seed = j.at("master_seed");
  if (j.contains("highway_count")) c.highway_count = j.at("highway_count");
  if (j.contains("intersection_count")) c.intersection_count = j.at("intersection_count");
  if (j.contains("merge_count")) c.merge_count = j.at("merge_count");
  if (j.contains("n_agents_min")) c.n_agents_min = j.at("n_agents_min");
  if (j.contains("n_agents_max")) c.n_agents_max = j.at("n_agents_max");
  if (j.contains("predictors"))
    c.predictors = j.at("predictors").get<std::vector<std::string>>();
  if (j.contains("train_scenarios")) c.train_scenarios = j.at("train_scenarios");
  if (j.contains("train_epochs")) c.train.epochs = j.at("train_epochs");
  if (j.contains("train_batch_size")) c.train.batch_size = j.at("train_batch_size");
  if (j.contains("train_learning_rate")) c.train.learning_rate = j.at("train_learning_rate");
  if (j.contains("holdout_fraction")) c.holdout_fraction = j.at("holdout_fraction");
  if (j.contains("normalization"))
    c.fusion.normalization = normalization_from_string(j.at("normalization"));
  if (j.contains("error_variant"))
    c.fusion.error_variant = error_variant_from_string(j.at("error_variant"));
  if (j.contains("fixed_pc_value")) c.fusion.fixed_pc_value = j.at("fixed_pc_value");
  if (j.contains("gad_sigma0")) c.gmm.sigma0 = j.at("gad_sigma0");
  if (j.contains("parallelism")) c.parallelism = j.at("parallelism");
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir");
}

inline std::string path_under(const RunConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out_dir) / name).string();
}

}  // namespace detail

// Deterministic evaluation suite: per-kind seed streams derived from the
// master seed, agent counts drawn per scenario.
inline std::vector<ScenarioLog> generate_suite(const RunConfig& config,
                                               const std::string& stream_tag) {
  std::vector<ScenarioLog> logs;
  const struct {
    ScenarioKind kind;
    int count;
  } groups[] = {{ScenarioKind::highway, config.highway_count},
                {ScenarioKind::intersection, config.intersection_count},
                {ScenarioKind::merge, config.merge_count}};
  for (const auto& g : groups) {
    for (int i = 0; i < g.count; ++i) {
      const std::uint64_t seed = derive_seed(
          derive_seed(config.master_seed, stream_tag + "-" + to_string(g.kind)),
          static_cast<std::uint64_t>(i));
      auto rng = make_engine(derive_seed(seed, "agents"));
      std::uniform_int_distribution<int> agents(config.n_agents_min, config.n_agents_max);
      logs.push_back(generate_scenario(g.kind, seed, agents(rng)));
    }
  }
  return logs;
}

// ---------------------------------------------------------------------------
// Stages. Each one reads and writes only files under config.out_dir, so every
// stage can be re-run in isolation.
// ---------------------------------------------------------------------------

inline void write_run_config(const RunConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  detail::write_file(detail::path_under(config, "run_config.json"),
                     detail::run_config_json(config).dump(2) + "\n");
}

// Generate the evaluation suite and run the closed loop for every predictor.
inline void run_simulate(const RunConfig& config) {
  write_run_config(config);
  const auto logs = generate_suite(config, "suite");
  const auto manifest =
      make_manifest("scenario_suite", config.master_seed, detail::run_config_json(config).dump());
  save_scenario_suite(detail::path_under(config, "suite.jsonl"), logs, manifest);

  const auto kinds = config.predictor_kinds();
  const auto episodes = run_closed_loop(logs, kinds, config.plan, config.parallelism);
  save_performances_csv(detail::path_under(config, "performances.csv"), episodes);

  std::size_t failed = 0;
  for (const auto& e : episodes)
    if (!e.error.empty()) ++failed;
  std::cout << "simulate: " << logs.size() << " scenarios x " << kinds.size()
            << " predictors, " << episodes.size() - failed << " episodes ok, " << failed
            << " failed\n";
}

struct TrainReport {
  std::size_t samples{0};
  std::size_t positives{0};
  double holdout_precision{0.0};
  double holdout_recall{0.0};
  std::vector<double> loss_trace;
};

// Build labeled sequences from a dedicated scenario stream, train the
// classifier, persist checkpoint + report.
inline TrainReport run_train(const RunConfig& config) {
  write_run_config(config);
  RunConfig train_cfg = config;
  const double total = std::max(
      1, config.highway_count + config.intersection_count + config.merge_count);
  train_cfg.highway_count =
      static_cast<int>(config.train_scenarios * config.highway_count / total);
  train_cfg.intersection_count =
      static_cast<int>(config.train_scenarios * config.intersection_count / total);
  train_cfg.merge_count = config.train_scenarios - train_cfg.highway_count -
                          train_cfg.intersection_count;
  const auto logs = generate_suite(train_cfg, "train");

  std::vector<LabeledSample> samples;
  samples.reserve(logs.size());
  std::size_t positives = 0;
  for (const auto& log : logs) {
    LabeledSample s;
    s.sequence = build_graph_sequence(log);
    s.label = label_criticality(log);
    positives += s.label;
    samples.push_back(std::move(s));
  }

  // deterministic shuffled holdout split
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_engine(derive_seed(config.master_seed, "holdout"));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t holdout =
      static_cast<std::size_t>(config.holdout_fraction * samples.size());
  std::vector<LabeledSample> train_set, held;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < holdout ? held : train_set).push_back(samples[order[i]]);

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.master_seed, "train");
  const TrainResult result = train(train_set, tc);

  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : held) {
    const bool predicted = forward(result.model, s.sequence) > 0.5;
    if (predicted && s.label == 1) ++tp;
    if (predicted && s.label == 0) ++fp;
    if (!predicted && s.label == 1) ++fn;
  }
  TrainReport report;
  report.samples = samples.size();
  report.positives = positives;
  report.holdout_precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  report.holdout_recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  report.loss_trace = result.loss_trace;

  save_checkpoint(detail::path_under(config, "checkpoint.bin"), result.model,
                  detail::run_config_json(config).dump());
  nlohmann::json j;
  j["samples"] = report.samples;
  j["positives"] = report.positives;
  j["holdout_size"] = held.size();
  j["holdout_precision"] = report.holdout_precision;
  j["holdout_recall"] = report.holdout_recall;
  j["loss_trace"] = report.loss_trace;
  detail::write_file(detail::path_under(config, "train_report.json"), j.dump(2) + "\n");
  std::cout << "train: " << report.samples << " samples (" << report.positives
            << " positive), holdout precision " << report.holdout_precision << " recall "
            << report.holdout_recall << "\n";
  return report;
}

// Score a persisted suite: predictions, metric rows, classifier probabilities,
// fused scores; joins driving performances when available.
inline std::vector<EvaluationRecord> run_evaluate(const RunConfig& config) {
  write_run_config(config);
  const auto suite = load_scenario_suite(detail::path_under(config, "suite.jsonl"));
  const auto kinds = config.predictor_kinds();

  CriticalityModel model = CriticalityModel::zeros();
  const bool needs_model = config.fusion.ablation == Ablation::full;
  if (needs_model)
    model = load_checkpoint(detail::path_under(config, "checkpoint.bin")).model;

  std::vector<ScenarioPredictions> predictions;
  for (const auto& log : suite.logs)
    for (const auto& kind : kinds) {
      ScenarioPredictions sp;
      sp.scenario_id = log.scenario_id;
      sp.predictor_id = kind.id();
      sp.predictions = predict_scenario(log, kind);
      predictions.push_back(std::move(sp));
    }
  save_predictions(detail::path_under(config, "predictions.jsonl"), predictions,
                   make_manifest("prediction_suite", config.master_seed,
                                 detail::run_config_json(config).dump()));

  const auto rows = batch_metrics(suite.logs, predictions, config.gmm);
  save_metrics_csv(detail::path_under(config, "metrics.csv"), rows);

  std::map<std::string, double> p_critical;
  if (needs_model)
    for (const auto& log : suite.logs)
      p_critical[log.scenario_id] = forward(model, build_graph_sequence(log));

  std::map<std::pair<std::string, std::string>, PerformanceRecord> performances;
  const std::string perf_path = detail::path_under(config, "performances.csv");
  if (std::filesystem::exists(perf_path))
    for (const auto& row : load_performances_csv(perf_path))
      if (row.error.empty())
        performances[{row.scenario_id, row.predictor_id}] = row.performance;

  const auto records = evaluate_predictor(rows, p_critical, performances, config.fusion);
  save_evaluations_csv(detail::path_under(config, "evaluations.csv"), records);

  nlohmann::json meta;
  meta["e_error_variant"] = to_string(config.fusion.error_variant);
  meta["ade_definition"] = "highest-probability mode (mode 0 when probabilities are uniform)";
  meta["gad_construction"] = config.gmm.describe(6);
  meta["normalization"] = to_string(config.fusion.normalization);
  meta["ablation"] = to_string(config.fusion.ablation);
  detail::write_file(detail::path_under(config, "eval_meta.json"), meta.dump(2) + "\n");
  std::cout << "evaluate: " << records.size() << " records ("
            << to_string(config.fusion.ablation) << ")\n";
  return records;
}

struct CorrelateOutcome {
  CorrelationReport report;
  bool ed_eva_positive{false};
  bool ed_eva_beats_neg_ade{false};
  double min_ed_eva_r{0.0};
  double min_margin{0.0};
};

inline constexpr const char* kDefaultMethods[] = {"ed_eva",   "-ADE",    "-FDE",
                                                  "-minADE", "-minFDE", "-aveADE",
                                                  "-aveFDE"};

// Join evaluations with metric rows, emit correlation + ROC CSVs, and print
// one pass/fail line per acceptance threshold.
inline CorrelateOutcome run_correlate(const RunConfig& config,
                                      const std::vector<std::string>& methods = {}) {
  const auto evaluations =
      load_evaluations_csv(detail::path_under(config, "evaluations.csv"));
  const auto rows = load_metrics_csv(detail::path_under(config, "metrics.csv"));
  std::vector<std::string> use_methods = methods;
  if (use_methods.empty())
    use_methods.assign(std::begin(kDefaultMethods), std::end(kDefaultMethods));

  CorrelateOutcome outcome;
  outcome.report = build_report(evaluations, rows, use_methods);
  save_correlations_csv(detail::path_under(config, "correlations.csv"), outcome.report);
  save_roc_csv(detail::path_under(config, "roc.csv"), outcome.report);

  std::map<std::string, double> ed_r, ade_r;
  for (const auto& b : outcome.report.blocks) {
    if (b.method == "ed_eva") ed_r[b.predictor_id] = b.r_overall;
    if (b.method == "-ADE") ade_r[b.predictor_id] = b.r_overall;
  }
  outcome.ed_eva_positive = !ed_r.empty();
  outcome.ed_eva_beats_neg_ade = !ed_r.empty() && !ade_r.empty();
  outcome.min_ed_eva_r = std::numeric_limits<double>::infinity();
  outcome.min_margin = std::numeric_limits<double>::infinity();
  for (const auto& [pid, r] : ed_r) {
    outcome.min_ed_eva_r = std::min(outcome.min_ed_eva_r, r);
    if (r <= 0.0) outcome.ed_eva_positive = false;
    const auto it = ade_r.find(pid);
    if (it != ade_r.end()) {
      outcome.min_margin = std::min(outcome.min_margin, r - it->second);
      if (r - it->second < 0.1) outcome.ed_eva_beats_neg_ade = false;
    }
  }
  std::cout << (outcome.ed_eva_positive ? "[PASS]" : "[FAIL]")
            << " ED-Eva overall r > 0 for every predictor (min r = " << outcome.min_ed_eva_r
            << ")\n";
  std::cout << (outcome.ed_eva_beats_neg_ade ? "[PASS]" : "[FAIL]")
            << " ED-Eva overall r exceeds -ADE by >= 0.1 (min margin = "
            << outcome.min_margin << ")\n";
  return outcome;
}

struct AblationOutcome {
  double full_mean_r{0.0};
  double fixed_mean_r{0.0};
  double error_only_mean_r{0.0};
  bool strict_ordering{false};
};

// Fig-7-style component removal: full vs fixed_pc(0.5) vs error_only, each
// scored by mean per-predictor correlation with overall performance.
inline AblationOutcome run_ablate(const RunConfig& config) {
  const auto rows = load_metrics_csv(detail::path_under(config, "metrics.csv"));
  const auto evaluations =
      load_evaluations_csv(detail::path_under(config, "evaluations.csv"));

  std::map<std::string, double> p_critical;
  std::map<std::pair<std::string, std::string>, PerformanceRecord> performances;
  for (const auto& r : evaluations) {
    p_critical[r.scenario_id] = r.p_critical;
    performances[{r.scenario_id, r.predictor_id}] = r.performance;
  }

  auto mean_r = [&](Ablation ablation) {
    FusionConfig fusion = config.fusion;
    fusion.ablation = ablation;
    const auto recs = evaluate_predictor(rows, p_critical, performances, fusion);
    const auto report = build_report(recs, rows, {"ed_eva"});
    double sum = 0.0;
    for (const auto& b : report.blocks) sum += b.r_overall;
    return report.blocks.empty() ? 0.0 : sum / static_cast<double>(report.blocks.size());
  };

  AblationOutcome outcome;
  outcome.full_mean_r = mean_r(Ablation::full);
  outcome.fixed_mean_r = mean_r(Ablation::fixed_pc);
  outcome.error_only_mean_r = mean_r(Ablation::error_only);
  outcome.strict_ordering = outcome.full_mean_r > outcome.fixed_mean_r &&
                            outcome.fixed_mean_r > outcome.error_only_mean_r;

  std::string body = "ablation,mean_r_overall\n";
  body += "full," + detail::format_double(outcome.full_mean_r) + "\n";
  body += "fixed_pc_0.5," + detail::format_double(outcome.fixed_mean_r) + "\n";
  body += "error_only," + detail::format_double(outcome.error_only_mean_r) + "\n";
  detail::write_file(detail::path_under(config, "ablation.csv"), body);

  std::cout << (outcome.strict_ordering ? "[PASS]" : "[FAIL]")
            << " ablation ordering full > fixed_pc(0.5) > error_only (" << outcome.full_mean_r
            << " / " << outcome.fixed_mean_r << " / " << outcome.error_only_mean_r << ")\n";
  return outcome;
}

// simulate -> train -> evaluate -> correlate -> ablate with one configuration.
inline void run_reproduce(const RunConfig& config) {
  run_simulate(config);
  run_train(config);
  run_evaluate(config);
  run_correlate(config);
  run_ablate(config);
}

}  // namespace edeva
