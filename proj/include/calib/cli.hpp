#pragma once

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calib/experiment.hpp"

namespace calib::cli {

struct Overrides {
  std::optional<std::string> config_path;
  std::optional<int> bins;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> beta;
  std::optional<std::string> loss;
};

inline void add_common_flags(CLI::App* cmd, Overrides& overrides) {
  cmd->add_option("--config", overrides.config_path,
                  "experiment config file (key = value lines)");
  cmd->add_option("--bins", overrides.bins, "confidence bin count");
  cmd->add_option("--seed", overrides.seed,
                  "single seed, replaces the config seed list");
  cmd->add_option("--out", overrides.out, "output directory");
  cmd->add_option("--beta", overrides.beta, "auxiliary loss weight");
  cmd->add_option("--loss", overrides.loss,
                  "objective: ce | dca | entropy | smoothing | mmce");
}

inline ExperimentConfig resolve_config(const Overrides& overrides) {
  ExperimentConfig config = overrides.config_path
                                ? load_config(*overrides.config_path)
                                : ExperimentConfig{};
  if (overrides.bins) config.m_bins = *overrides.bins;
  if (overrides.seed) config.seeds = {*overrides.seed};
  if (overrides.out) config.out_dir = *overrides.out;
  if (overrides.beta) config.loss.beta = *overrides.beta;
  if (overrides.loss)
    config.loss.kind = io::loss_kind_from_string(*overrides.loss);
  return config;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"calib: confidence-calibration toolkit "
               "(trainable auxiliary losses, temperature scaling, "
               "reliability reports)"};
  app.require_subcommand(1);

  Overrides train_overrides;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train one model per seed and report");
  add_common_flags(train_cmd, train_overrides);

  Overrides eval_overrides;
  std::string eval_log, eval_ckpt, eval_data;
  double eval_temperature = 0.0;
  bool eval_stored_temperature = false;
  CLI::App* eval_cmd = app.add_subcommand(
      "evaluate", "calibration report from a prediction log or checkpoint");
  eval_cmd->add_option("--log", eval_log,
                       "prediction log (JSON lines with logits + label)");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval_cmd->add_option("--data", eval_data, "dataset CSV for --checkpoint");
  eval_cmd->add_option("--temperature", eval_temperature,
                       "apply this temperature to the log's logits");
  eval_cmd->add_flag("--stored-temperature", eval_stored_temperature,
                     "apply the checkpoint's stored temperature");
  add_common_flags(eval_cmd, eval_overrides);

  Overrides cal_overrides;
  std::string cal_log, cal_apply, cal_objective = "nll";
  CLI::App* cal_cmd = app.add_subcommand(
      "calibrate", "fit a temperature on a log and report before/after");
  cal_cmd->add_option("--log", cal_log, "prediction log to fit on")
      ->required();
  cal_cmd->add_option("--apply", cal_apply,
                      "apply the fitted temperature to this log instead");
  cal_cmd->add_option("--objective", cal_objective,
                      "fit objective: nll (default) | ece");
  add_common_flags(cal_cmd, cal_overrides);

  Overrides toy_overrides;
  CLI::App* toy_cmd = app.add_subcommand(
      "toy-experiment",
      "1-D probability recovery: plain vs temperature vs auxiliary loss");
  add_common_flags(toy_cmd, toy_overrides);

  Overrides sweep_overrides;
  std::string sweep_betas = "1,5,10,15,20,25";
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep-beta", "train and evaluate across auxiliary weights");
  sweep_cmd->add_option("--betas", sweep_betas, "comma-separated weights");
  add_common_flags(sweep_cmd, sweep_overrides);

  Overrides compare_overrides;
  std::string compare_methods = "uncalibrated,temperature,dca";
  CLI::App* compare_cmd = app.add_subcommand(
      "compare", "side-by-side mean report table across methods");
  compare_cmd->add_option("--methods", compare_methods,
                          "comma-separated method list");
  add_common_flags(compare_cmd, compare_overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig config = resolve_config(train_overrides);
      const TrainOutcome outcome = cmd_train(config);
      for (std::size_t i = 0; i < outcome.runs.size(); ++i)
        std::printf("seed %llu: ece %.4f  accuracy %.4f\n",
                    static_cast<unsigned long long>(config.seeds[i]),
                    outcome.runs[i].report.ece,
                    outcome.runs[i].report.accuracy);
      std::printf("wrote %s\n", config.out_dir.c_str());
    } else if (*eval_cmd) {
      const ExperimentConfig config = resolve_config(eval_overrides);
      CalibrationReport report;
      if (!eval_log.empty()) {
        std::optional<double> t;
        if (eval_temperature > 0.0) t = eval_temperature;
        report = cmd_evaluate_log(eval_log, config.m_bins, config.out_dir, t);
      } else if (!eval_ckpt.empty() && !eval_data.empty()) {
        report = cmd_evaluate_checkpoint(eval_ckpt, eval_data, config.m_bins,
                                         config.out_dir,
                                         eval_stored_temperature);
      } else {
        std::fprintf(stderr,
                     "evaluate needs --log or --checkpoint with --data\n");
        return 1;
      }
      std::printf("ece %.6f  mce %.6f  accuracy %.6f  nll %.6f\n", report.ece,
                  report.mce, report.accuracy, report.nll);
      std::printf("wrote %s\n", config.out_dir.c_str());
    } else if (*cal_cmd) {
      const ExperimentConfig config = resolve_config(cal_overrides);
      TemperatureFitOptions opts;
      if (cal_objective == "ece") {
        opts.objective = TemperatureObjective::Ece;
        opts.ece_bins = config.m_bins;
      } else if (cal_objective != "nll") {
        std::fprintf(stderr, "unknown objective: %s\n", cal_objective.c_str());
        return 1;
      }
      std::optional<fs::path> apply;
      if (!cal_apply.empty()) apply = cal_apply;
      const CalibrateOutcome outcome =
          cmd_calibrate(cal_log, apply, config.m_bins, config.out_dir, opts);
      std::printf("t %.6f  ece %.6f -> %.6f  nll %.6f -> %.6f\n",
                  outcome.scaler.t, outcome.before.ece, outcome.after.ece,
                  outcome.before.nll, outcome.after.nll);
      std::printf("wrote %s\n", config.out_dir.c_str());
    } else if (*toy_cmd) {
      const ExperimentConfig config = resolve_config(toy_overrides);
      const ToyOutcome outcome = cmd_toy_experiment(config);
      std::printf("median curve deviation: uncalibrated %.4f  temperature "
                  "%.4f  dca %.4f\n",
                  outcome.median_mad_uncalibrated,
                  outcome.median_mad_temperature, outcome.median_mad_dca);
      std::printf("wrote %s\n", config.out_dir.c_str());
    } else if (*sweep_cmd) {
      const ExperimentConfig config = resolve_config(sweep_overrides);
      const std::vector<double> betas =
          detail::parse_list<double>(sweep_betas, "betas");
      const SweepOutcome outcome = cmd_sweep_beta(config, betas);
      for (const auto& [beta, median_ece] : outcome.median_ece_by_beta)
        std::printf("beta %g: median ece %.4f\n", beta, median_ece);
      std::printf("wrote %s\n", config.out_dir.c_str());
    } else if (*compare_cmd) {
      const ExperimentConfig config = resolve_config(compare_overrides);
      std::vector<std::string> methods;
      std::istringstream in(compare_methods);
      std::string name;
      while (std::getline(in, name, ','))
        if (!detail::trim(name).empty()) methods.push_back(detail::trim(name));
      const CompareOutcome outcome = cmd_compare(config, methods);
      std::fputs(outcome.markdown.c_str(), stdout);
      std::printf("wrote %s\n", config.out_dir.c_str());
    }
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}

}  // namespace calib::cli
