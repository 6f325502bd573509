#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "edeva/pipeline.hpp"

namespace {

std::string default_out_dir() {
  if (const char* root = std::getenv("EDEVA_OUTPUT_ROOT"))
    return (std::filesystem::path(root) / "edeva_run").string();
  return "edeva_run";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    if (comma > start) out.push_back(text.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

struct CliOptions {
  edeva::RunConfig config;
  std::string config_file;
  std::string predictors_arg;
  std::string ablation_arg{"full"};
  std::string methods_arg;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--seed", opt.config.master_seed, "master seed");
  cmd->add_option("--out", opt.config.out_dir, "run directory");
  cmd->add_option("--jobs", opt.config.parallelism, "parallel scenario workers")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--config", opt.config_file,
                  "JSON config file; values in it override flags");
}

void finalize(CliOptions& opt) {
  if (!opt.predictors_arg.empty()) opt.config.predictors = split_list(opt.predictors_arg);
  if (opt.ablation_arg == "full") {
    opt.config.fusion.ablation = edeva::Ablation::full;
  } else if (opt.ablation_arg == "error_only") {
    opt.config.fusion.ablation = edeva::Ablation::error_only;
  } else if (opt.ablation_arg == "diversity_only") {
    opt.config.fusion.ablation = edeva::Ablation::diversity_only;
  } else if (opt.ablation_arg.rfind("fixed_pc", 0) == 0) {
    opt.config.fusion.ablation = edeva::Ablation::fixed_pc;
    const auto colon = opt.ablation_arg.find(':');
    if (colon != std::string::npos)
      opt.config.fusion.fixed_pc_value = std::stod(opt.ablation_arg.substr(colon + 1));
    if (opt.config.fusion.fixed_pc_value < 0.0 || opt.config.fusion.fixed_pc_value > 1.0)
      throw std::invalid_argument("fixed_pc value must be in [0,1]");
  } else {
    throw std::invalid_argument("unknown ablation: " + opt.ablation_arg);
  }
  if (!opt.config_file.empty()) {
    const auto body = edeva::detail::read_file(opt.config_file);
    edeva::detail::apply_config_json(nlohmann::json::parse(body), opt.config);
  }
  for (const auto& p : opt.config.predictors) edeva::PredictorKind::parse(p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scenario-adaptive trajectory-predictor evaluation toolkit"};
  app.require_subcommand(1);

  CliOptions opt;
  opt.config.out_dir = default_out_dir();

  auto* simulate = app.add_subcommand("simulate", "generate scenario suite + closed loop");
  add_common_flags(simulate, opt);
  simulate->add_option("--highway", opt.config.highway_count, "highway scenario count");
  simulate->add_option("--intersection", opt.config.intersection_count,
                       "intersection scenario count");
  simulate->add_option("--merge", opt.config.merge_count, "merge scenario count");
  simulate->add_option("--predictors", opt.predictors_arg,
                       "comma list, e.g. noisy_cv:0.6,multimodal:6,oracle:0.8");

  auto* train = app.add_subcommand("train-scenario-nn", "train the criticality classifier");
  add_common_flags(train, opt);
  train->add_option("--epochs", opt.config.train.epochs, "training epochs");
  train->add_option("--train-scenarios", opt.config.train_scenarios,
                    "labeled scenario count");

  auto* evaluate = app.add_subcommand("evaluate", "score a persisted suite");
  add_common_flags(evaluate, opt);
  evaluate->add_option("--predictors", opt.predictors_arg, "comma list of predictor kinds");
  evaluate->add_option("--ablation", opt.ablation_arg,
                       "full | fixed_pc[:v] | error_only | diversity_only");

  auto* correlate = app.add_subcommand("correlate", "correlation + ROC reports");
  add_common_flags(correlate, opt);
  correlate->add_option("--methods", opt.methods_arg,
                        "comma list, e.g. -ADE,-FDE,ed_eva (default: all)");

  auto* ablate = app.add_subcommand("ablate", "component-removal comparison");
  add_common_flags(ablate, opt);

  auto* reproduce = app.add_subcommand(
      "reproduce", "simulate + train + evaluate + correlate + ablate");
  add_common_flags(reproduce, opt);
  reproduce->add_option("--highway", opt.config.highway_count, "highway scenario count");
  reproduce->add_option("--intersection", opt.config.intersection_count,
                        "intersection scenario count");
  reproduce->add_option("--merge", opt.config.merge_count, "merge scenario count");
  reproduce->add_option("--predictors", opt.predictors_arg, "comma list of predictor kinds");
  reproduce->add_option("--epochs", opt.config.train.epochs, "training epochs");
  reproduce->add_option("--train-scenarios", opt.config.train_scenarios,
                        "labeled scenario count");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a persisted scenario suite");
  validate->add_option("suite", validate_path, "suite.jsonl path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    finalize(opt);
    if (simulate->parsed()) {
      edeva::run_simulate(opt.config);
    } else if (train->parsed()) {
      edeva::run_train(opt.config);
    } else if (evaluate->parsed()) {
      if (opt.config.fusion.ablation == edeva::Ablation::full &&
          !std::filesystem::exists(
              edeva::detail::path_under(opt.config, "checkpoint.bin")))
        throw std::invalid_argument(
            "missing checkpoint.bin (run train-scenario-nn first or pick an ablation)");
      edeva::run_evaluate(opt.config);
    } else if (correlate->parsed()) {
      std::vector<std::string> methods;
      if (!opt.methods_arg.empty()) methods = split_list(opt.methods_arg);
      edeva::run_correlate(opt.config, methods);
    } else if (ablate->parsed()) {
      edeva::run_ablate(opt.config);
    } else if (reproduce->parsed()) {
      edeva::run_reproduce(opt.config);
    } else if (validate->parsed()) {
      const auto suite = edeva::load_scenario_suite(validate_path);
      std::size_t bad = 0;
      for (const auto& log : suite.logs) {
        const auto violations = edeva::validate_scenario(log);
        for (const auto& v : violations)
          std::cout << log.scenario_id << ": " << v << "\n";
        if (!violations.empty()) ++bad;
      }
      std::cout << suite.logs.size() << " scenarios, " << bad << " with violations\n";
      return bad == 0 ? 0 : 1;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
