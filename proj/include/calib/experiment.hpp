#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "calib/data.hpp"
#include "calib/io.hpp"
#include "calib/losses.hpp"
#include "calib/metrics.hpp"
#include "calib/nn.hpp"
#include "calib/temperature.hpp"

namespace calib {

namespace fs = std::filesystem;

// Everything one experiment needs: dataset recipe, model shape, training
// schedule, objective, and evaluation settings. Parsed from a key = value
// config file; unknown keys are rejected.
struct ExperimentConfig {
  // dataset
  std::string dataset = "toy1d";  // toy1d | blobs
  std::string curve = "logistic";  // logistic | ramp (toy1d only)
  double curve_scale = 2.0;
  std::size_t train_n = 200;
  std::size_t test_n = 2000;
  int classes = 2;         // blobs only
  int dim = 1;             // blobs only
  double separation = 3.0;  // blobs only
  // model
  std::vector<int> hidden = {16};
  // training
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 0.01;
  bool shuffle = true;
  // objective
  LossSpec loss = LossSpec{LossKind::CrossEntropy, 10.0, 0.1};
  // evaluation
  int m_bins = 10;
  bool fit_temp = false;
  double val_fraction = 0.2;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw invalid_input("config key '" + key + "' wants a boolean, got '" +
                      value + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& value, const std::string& key) {
  std::vector<T> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<T>(io::parse_double(item, key.c_str())));
  }
  if (out.empty())
    throw invalid_input("config key '" + key + "' wants a non-empty list");
  return out;
}

// Disjoint seeds for the independently generated test split.
inline std::uint64_t test_seed(std::uint64_t seed) {
  return seed ^ 0x517cc1b727220a95ULL;
}

}  // namespace detail

inline GroundTruthCurve curve_from_config(const ExperimentConfig& config) {
  GroundTruthCurve curve;
  if (config.curve == "logistic") {
    curve.kind = GroundTruthCurve::Kind::Logistic;
    curve.scale = config.curve_scale;
  } else if (config.curve == "ramp") {
    curve.kind = GroundTruthCurve::Kind::LinearRamp;
  } else {
    throw invalid_input("unknown curve: " + config.curve);
  }
  return curve;
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& origin) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw invalid_input(origin + ":" + std::to_string(line_no) +
                          ": expected key = value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));

    if (key == "dataset") config.dataset = value;
    else if (key == "curve") config.curve = value;
    else if (key == "curve_scale")
      config.curve_scale = io::parse_double(value, key.c_str());
    else if (key == "train_n")
      config.train_n = static_cast<std::size_t>(
          io::parse_double(value, key.c_str()));
    else if (key == "test_n")
      config.test_n = static_cast<std::size_t>(
          io::parse_double(value, key.c_str()));
    else if (key == "classes")
      config.classes = static_cast<int>(io::parse_double(value, key.c_str()));
    else if (key == "dim")
      config.dim = static_cast<int>(io::parse_double(value, key.c_str()));
    else if (key == "separation")
      config.separation = io::parse_double(value, key.c_str());
    else if (key == "hidden")
      config.hidden = detail::parse_list<int>(value, key);
    else if (key == "epochs")
      config.epochs = static_cast<int>(io::parse_double(value, key.c_str()));
    else if (key == "batch_size")
      config.batch_size =
          static_cast<int>(io::parse_double(value, key.c_str()));
    else if (key == "learning_rate")
      config.learning_rate = io::parse_double(value, key.c_str());
    else if (key == "shuffle")
      config.shuffle = detail::parse_bool(value, key);
    else if (key == "loss")
      config.loss.kind = io::loss_kind_from_string(value);
    else if (key == "beta")
      config.loss.beta = io::parse_double(value, key.c_str());
    else if (key == "alpha")
      config.loss.alpha = io::parse_double(value, key.c_str());
    else if (key == "mmce_width")
      config.loss.mmce_kernel_width = io::parse_double(value, key.c_str());
    else if (key == "entropy_sign") {
      if (value == "penalty") config.loss.entropy_reward = false;
      else if (value == "reward") config.loss.entropy_reward = true;
      else
        throw invalid_input("entropy_sign must be penalty or reward, got '" +
                            value + "'");
    } else if (key == "bins")
      config.m_bins = static_cast<int>(io::parse_double(value, key.c_str()));
    else if (key == "fit_temperature")
      config.fit_temp = detail::parse_bool(value, key);
    else if (key == "val_fraction")
      config.val_fraction = io::parse_double(value, key.c_str());
    else if (key == "seeds")
      config.seeds = detail::parse_list<std::uint64_t>(value, key);
    else if (key == "out")
      config.out_dir = value;
    else
      throw invalid_input(origin + ":" + std::to_string(line_no) +
                          ": unknown config key '" + key + "'");
  }
  return config;
}

inline ExperimentConfig load_config(const fs::path& path) {
  return parse_config_text(io::read_text_file(path), path.string());
}

inline void validate_config(const ExperimentConfig& config) {
  if (config.dataset != "toy1d" && config.dataset != "blobs")
    throw invalid_input("dataset must be toy1d or blobs");
  if (config.seeds.empty()) throw invalid_input("seed list is empty");
  if (config.m_bins < 1) throw invalid_input("bins must be >= 1");
  if (config.epochs < 1) throw invalid_input("epochs must be >= 1");
  if (config.batch_size < 1) throw invalid_input("batch_size must be >= 1");
  if (!(config.learning_rate >= 0.0))
    throw invalid_input("learning_rate must be >= 0");
  if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0))
    throw invalid_input("val_fraction must be in (0, 1)");
  if (config.train_n < 2 || config.test_n < 1)
    throw invalid_input("train_n must be >= 2 and test_n >= 1");
  if (config.dataset == "blobs") {
    if (config.classes < 2) throw invalid_input("classes must be >= 2");
    if (config.train_n % static_cast<std::size_t>(config.classes) != 0 ||
        config.test_n % static_cast<std::size_t>(config.classes) != 0)
      throw invalid_input("blob sample counts must divide by the class count");
  }
  for (int width : config.hidden)
    if (width < 1) throw invalid_input("hidden widths must be >= 1");
}

// Train/test pair for one seed; both splits are generated independently.
inline std::pair<Dataset, Dataset> make_datasets(
    const ExperimentConfig& config, std::uint64_t seed) {
  if (config.dataset == "toy1d") {
    const GroundTruthCurve curve = curve_from_config(config);
    return {gen_toy1d(config.train_n, seed, curve),
            gen_toy1d(config.test_n, detail::test_seed(seed), curve)};
  }
  const auto k = static_cast<std::size_t>(config.classes);
  return {gen_blobs(config.classes, config.train_n / k, config.separation,
                    config.dim, seed),
          gen_blobs(config.classes, config.test_n / k, config.separation,
                    config.dim, detail::test_seed(seed))};
}

// One full training run: optional validation carve-out, training, optional
// temperature fit on the validation logits.
struct RunArtifacts {
  MlpModel model;
  TrainingTrace trace;
  CalibrationReport report;  // test set, raw logits
  std::optional<TemperatureScaler> scaler;
  std::optional<CalibrationReport> scaled_report;  // test set, scaled logits
  Dataset test;
};

inline RunArtifacts run_training(const ExperimentConfig& config,
                                 std::uint64_t seed,
                                 std::optional<LossSpec> loss_override = {}) {
  validate_config(config);
  auto [train_full, test] = make_datasets(config, seed);

  Dataset core = train_full;
  std::optional<Dataset> val;
  if (config.fit_temp) {
    auto [rest, held_out] = split(train_full, config.val_fraction, seed);
    core = std::move(rest);
    val = std::move(held_out);
  }

  RunArtifacts run;
  run.model = make_mlp(core.dim(), config.hidden,
                       config.dataset == "toy1d" ? 2 : config.classes, seed);
  TrainConfig train_config;
  train_config.epochs = config.epochs;
  train_config.batch_size = config.batch_size;
  train_config.learning_rate = config.learning_rate;
  train_config.seed = seed;
  train_config.loss = loss_override.value_or(config.loss);
  train_config.shuffle = config.shuffle;
  run.trace = train(run.model, core, test, train_config, config.m_bins);
  run.report = run.trace.final_report;

  if (config.fit_temp) {
    run.scaler = fit_temperature(forward(run.model, val->inputs), val->labels);
    run.scaled_report = evaluate(
        predictions_of(run.model, test, run.scaler->t), config.m_bins);
  }
  run.test = std::move(test);
  return run;
}

namespace detail {

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline std::string seed_tag(std::uint64_t seed) {
  return "seed" + std::to_string(seed);
}

inline std::string number_tag(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", value);
  return buf;
}

inline io::json config_echo(const ExperimentConfig& config) {
  io::json j;
  j["dataset"] = config.dataset;
  j["loss"] = to_string(config.loss.kind);
  j["beta"] = config.loss.beta;
  j["alpha"] = config.loss.alpha;
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["learning_rate"] = config.learning_rate;
  j["hidden"] = config.hidden;
  j["bins"] = config.m_bins;
  j["train_n"] = config.train_n;
  j["test_n"] = config.test_n;
  j["val_fraction"] = config.val_fraction;
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train: one checkpoint + trace + report per seed, plus a summary.
// ---------------------------------------------------------------------------

struct TrainOutcome {
  std::vector<RunArtifacts> runs;  // one per seed, in seed order
};

inline TrainOutcome cmd_train(const ExperimentConfig& config) {
  validate_config(config);
  fs::create_directories(config.out_dir);
  TrainOutcome outcome;
  io::json summary;
  summary["config"] = detail::config_echo(config);
  io::json per_seed = io::json::array();
  for (std::uint64_t seed : config.seeds) {
    RunArtifacts run = run_training(config, seed);
    const std::string tag = detail::seed_tag(seed);
    const fs::path dir(config.out_dir);

    io::Checkpoint ckpt;
    ckpt.model = run.model;
    if (run.scaler) ckpt.temperature = run.scaler->t;
    ckpt.config.epochs = config.epochs;
    ckpt.config.batch_size = config.batch_size;
    ckpt.config.learning_rate = config.learning_rate;
    ckpt.config.seed = seed;
    ckpt.config.loss = config.loss;
    ckpt.config.shuffle = config.shuffle;
    io::write_checkpoint(dir / ("model_" + tag + ".ckpt"), ckpt);
    io::write_text_file(dir / ("trace_" + tag + ".csv"),
                        io::trace_csv(run.trace));

    io::json report = io::report_to_json(run.report);
    report["seed"] = seed;
    report["loss"] = to_string(config.loss.kind);
    if (run.scaler) {
      report["temperature"] = run.scaler->t;
      report["temperature_fit_nll"] = run.scaler->fit_nll;
      report["val_fraction"] = config.val_fraction;
      report["scaled"] = io::report_to_json(*run.scaled_report);
    }
    io::write_text_file(dir / ("report_" + tag + ".json"),
                        report.dump(2) + "\n");
    io::write_text_file(dir / ("reliability_" + tag + ".csv"),
                        io::reliability_csv(run.report));
    io::write_text_file(dir / ("reliability_" + tag + ".svg"),
                        io::reliability_svg(run.report));

    io::json row;
    row["seed"] = seed;
    row["ece"] = run.report.ece;
    row["mce"] = run.report.mce;
    row["accuracy"] = run.report.accuracy;
    row["nll"] = run.report.nll;
    if (run.scaler) row["temperature"] = run.scaler->t;
    per_seed.push_back(row);
    outcome.runs.push_back(std::move(run));
  }
  summary["runs"] = per_seed;
  std::vector<double> eces, accs;
  for (const RunArtifacts& run : outcome.runs) {
    eces.push_back(run.report.ece);
    accs.push_back(run.report.accuracy);
  }
  summary["median_ece"] = detail::median(eces);
  summary["median_accuracy"] = detail::median(accs);
  io::write_text_file(fs::path(config.out_dir) / "summary.json",
                      summary.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// evaluate: calibration report (JSON + reliability CSV + SVG) from either a
// prediction log or a checkpoint plus dataset file.
// ---------------------------------------------------------------------------

inline CalibrationReport write_evaluation(const fs::path& out_dir,
                                          const PredictionSet& preds,
                                          int m_bins,
                                          io::json extra = io::json::object()) {
  fs::create_directories(out_dir);
  const CalibrationReport report = evaluate(preds, m_bins);
  io::json j = io::report_to_json(report);
  for (const auto& [key, value] : extra.items()) j[key] = value;
  io::write_text_file(out_dir / "report.json", j.dump(2) + "\n");
  io::write_text_file(out_dir / "reliability.csv",
                      io::reliability_csv(report));
  io::write_text_file(out_dir / "reliability.svg",
                      io::reliability_svg(report));
  return report;
}

inline CalibrationReport cmd_evaluate_log(const fs::path& log_path,
                                          int m_bins,
                                          const fs::path& out_dir,
                                          std::optional<double> temperature = {}) {
  const io::PredictionLog log = io::read_prediction_log(log_path);
  const PredictionSet preds =
      make_prediction_set(log.logits, log.labels, temperature.value_or(1.0));
  io::json extra;
  extra["source"] = log_path.filename().string();
  if (temperature) extra["temperature"] = *temperature;
  return write_evaluation(out_dir, preds, m_bins, extra);
}

inline CalibrationReport cmd_evaluate_checkpoint(const fs::path& ckpt_path,
                                                 const fs::path& data_path,
                                                 int m_bins,
                                                 const fs::path& out_dir,
                                                 bool use_stored_temperature) {
  const io::Checkpoint ckpt = io::read_checkpoint(ckpt_path);
  const Dataset data = io::read_dataset_csv(data_path);
  const double t = use_stored_temperature && ckpt.temperature
                       ? *ckpt.temperature
                       : 1.0;
  const PredictionSet preds = predictions_of(ckpt.model, data, t);
  io::json extra;
  extra["source"] = ckpt_path.filename().string();
  extra["data"] = data_path.filename().string();
  if (use_stored_temperature && ckpt.temperature)
    extra["temperature"] = *ckpt.temperature;
  return write_evaluation(out_dir, preds, m_bins, extra);
}

// ---------------------------------------------------------------------------
// calibrate: fit a temperature on one prediction log, optionally apply it to
// a second log, and report before/after.
// ---------------------------------------------------------------------------

struct CalibrateOutcome {
  TemperatureScaler scaler;
  CalibrationReport before;
  CalibrationReport after;
};

inline CalibrateOutcome cmd_calibrate(const fs::path& fit_log_path,
                                      std::optional<fs::path> apply_log_path,
                                      int m_bins, const fs::path& out_dir,
                                      const TemperatureFitOptions& opts = {}) {
  fs::create_directories(out_dir);
  const io::PredictionLog fit_log = io::read_prediction_log(fit_log_path);
  CalibrateOutcome outcome;
  outcome.scaler = fit_temperature(fit_log.logits, fit_log.labels, opts);

  io::json tj;
  tj["t"] = outcome.scaler.t;
  tj["fit_nll"] = outcome.scaler.fit_nll;
  tj["nll_at_1"] = nll_at_temperature(fit_log.logits, fit_log.labels, 1.0);
  tj["objective"] =
      opts.objective == TemperatureObjective::Nll ? "nll" : "ece";
  io::json trace = io::json::array();
  for (const auto& [t, value] : outcome.scaler.search_trace)
    trace.push_back({{"t", t}, {"objective", value}});
  tj["search_trace"] = trace;
  io::write_text_file(out_dir / "temperature.json", tj.dump(2) + "\n");

  const io::PredictionLog& target_log =
      apply_log_path ? io::read_prediction_log(*apply_log_path) : fit_log;
  const PredictionSet before =
      make_prediction_set(target_log.logits, target_log.labels);
  const PredictionSet after = make_prediction_set(
      target_log.logits, target_log.labels, outcome.scaler.t);
  outcome.before = evaluate(before, m_bins);
  outcome.after = evaluate(after, m_bins);
  io::write_text_file(out_dir / "report_uncalibrated.json",
                      io::report_to_json(outcome.before).dump(2) + "\n");
  io::json after_json = io::report_to_json(outcome.after);
  after_json["temperature"] = outcome.scaler.t;
  io::write_text_file(out_dir / "report_calibrated.json",
                      after_json.dump(2) + "\n");
  io::write_text_file(out_dir / "reliability_calibrated.csv",
                      io::reliability_csv(outcome.after));
  io::write_text_file(out_dir / "reliability_calibrated.svg",
                      io::reliability_svg(outcome.after));
  return outcome;
}

// ---------------------------------------------------------------------------
// toy-experiment: train the plain and auxiliary-loss models on the same 1-D
// data, fit a temperature for the plain model on its validation split, and
// emit the three recovered probability curves with their deviation scores.
// ---------------------------------------------------------------------------

struct ToySeedResult {
  std::uint64_t seed = 0;
  double t = 1.0;
  double mad_uncalibrated = 0.0;
  double mad_temperature = 0.0;
  double mad_dca = 0.0;
  std::vector<CurvePoint> uncal_curve, temp_curve, dca_curve;
};

struct ToyOutcome {
  std::vector<ToySeedResult> seeds;
  double median_mad_uncalibrated = 0.0;
  double median_mad_temperature = 0.0;
  double median_mad_dca = 0.0;
};

inline ToyOutcome cmd_toy_experiment(const ExperimentConfig& config,
                                     std::size_t grid_points = 201) {
  if (config.dataset != "toy1d")
    throw invalid_input("toy-experiment needs a 1-D dataset");
  validate_config(config);
  fs::create_directories(config.out_dir);
  const GroundTruthCurve curve = curve_from_config(config);
  const std::vector<double> grid = uniform_grid(-2.0, 2.0, grid_points);

  ToyOutcome outcome;
  for (std::uint64_t seed : config.seeds) {
    auto [train_full, test] = make_datasets(config, seed);
    // Both models train on the same core split; the held-out part only
    // serves the temperature fit of the plain model.
    auto [core, val] = split(train_full, config.val_fraction, seed);

    TrainConfig base;
    base.epochs = config.epochs;
    base.batch_size = config.batch_size;
    base.learning_rate = config.learning_rate;
    base.seed = seed;
    base.shuffle = config.shuffle;

    MlpModel uncal = make_mlp(1, config.hidden, 2, seed);
    TrainConfig uncal_config = base;
    uncal_config.loss = LossSpec{LossKind::CrossEntropy};
    train(uncal, core, test, uncal_config, config.m_bins);

    MlpModel dca_model = make_mlp(1, config.hidden, 2, seed);
    TrainConfig dca_config = base;
    dca_config.loss = LossSpec{LossKind::Dca, config.loss.beta};
    train(dca_model, core, test, dca_config, config.m_bins);

    const TemperatureScaler scaler =
        fit_temperature(forward(uncal, val.inputs), val.labels);

    ToySeedResult result;
    result.seed = seed;
    result.t = scaler.t;
    result.uncal_curve = recover_curve(uncal, std::nullopt, grid, curve);
    result.temp_curve = recover_curve(uncal, scaler.t, grid, curve);
    result.dca_curve = recover_curve(dca_model, std::nullopt, grid, curve);
    result.mad_uncalibrated = curve_score(result.uncal_curve);
    result.mad_temperature = curve_score(result.temp_curve);
    result.mad_dca = curve_score(result.dca_curve);

    std::ostringstream csv;
    csv << "x,truth,uncalibrated,temperature,dca\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      csv << io::format_double(grid[i]) << ','
          << io::format_double(result.uncal_curve[i].truth) << ','
          << io::format_double(result.uncal_curve[i].predicted) << ','
          << io::format_double(result.temp_curve[i].predicted) << ','
          << io::format_double(result.dca_curve[i].predicted) << '\n';
    }
    io::write_text_file(fs::path(config.out_dir) /
                            ("curves_" + detail::seed_tag(seed) + ".csv"),
                        csv.str());
    outcome.seeds.push_back(std::move(result));
  }

  std::vector<double> mads_uncal, mads_temp, mads_dca;
  io::json rows = io::json::array();
  for (const ToySeedResult& r : outcome.seeds) {
    mads_uncal.push_back(r.mad_uncalibrated);
    mads_temp.push_back(r.mad_temperature);
    mads_dca.push_back(r.mad_dca);
    rows.push_back({{"seed", r.seed},
                    {"temperature", r.t},
                    {"mad_uncalibrated", r.mad_uncalibrated},
                    {"mad_temperature", r.mad_temperature},
                    {"mad_dca", r.mad_dca}});
  }
  outcome.median_mad_uncalibrated = detail::median(mads_uncal);
  outcome.median_mad_temperature = detail::median(mads_temp);
  outcome.median_mad_dca = detail::median(mads_dca);

  io::json summary;
  summary["config"] = detail::config_echo(config);
  summary["curve"] = curve.describe();
  summary["runs"] = rows;
  summary["median_mad_uncalibrated"] = outcome.median_mad_uncalibrated;
  summary["median_mad_temperature"] = outcome.median_mad_temperature;
  summary["median_mad_dca"] = outcome.median_mad_dca;
  io::write_text_file(fs::path(config.out_dir) / "toy_summary.json",
                      summary.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// sweep-beta: one full train/evaluate per (beta, seed).
// ---------------------------------------------------------------------------

struct SweepRow {
  double beta = 0.0;
  std::uint64_t seed = 0;
  double ece = 0.0, mce = 0.0, accuracy = 0.0, nll = 0.0;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;                 // beta-major, seed order
  std::map<double, double> median_ece_by_beta;
};

inline const std::vector<double>& default_beta_sweep() {
  static const std::vector<double> betas{1, 5, 10, 15, 20, 25};
  return betas;
}

inline SweepOutcome cmd_sweep_beta(const ExperimentConfig& config,
                                   const std::vector<double>& betas) {
  if (betas.empty()) throw invalid_input("beta list is empty");
  for (double beta : betas)
    if (!(beta >= 0.0)) throw invalid_input("beta values must be >= 0");
  validate_config(config);
  fs::create_directories(config.out_dir);

  SweepOutcome outcome;
  std::ostringstream csv;
  csv << "beta,seed,ece,mce,accuracy,nll\n";
  for (double beta : betas) {
    std::vector<double> eces;
    for (std::uint64_t seed : config.seeds) {
      RunArtifacts run =
          run_training(config, seed, LossSpec{LossKind::Dca, beta});
      io::write_text_file(
          fs::path(config.out_dir) /
              ("trace_beta" + detail::number_tag(beta) + "_" +
               detail::seed_tag(seed) + ".csv"),
          io::trace_csv(run.trace));
      SweepRow row{beta, seed, run.report.ece, run.report.mce,
                   run.report.accuracy, run.report.nll};
      csv << detail::number_tag(beta) << ',' << seed << ','
          << io::format_double(row.ece) << ',' << io::format_double(row.mce)
          << ',' << io::format_double(row.accuracy) << ','
          << io::format_double(row.nll) << '\n';
      eces.push_back(row.ece);
      outcome.rows.push_back(row);
    }
    outcome.median_ece_by_beta[beta] = detail::median(eces);
  }
  io::write_text_file(fs::path(config.out_dir) / "sweep.csv", csv.str());

  io::json summary;
  summary["config"] = detail::config_echo(config);
  io::json medians = io::json::array();
  for (const auto& [beta, med] : outcome.median_ece_by_beta)
    medians.push_back({{"beta", beta}, {"median_ece", med}});
  summary["median_ece_by_beta"] = medians;
  io::write_text_file(fs::path(config.out_dir) / "sweep_summary.json",
                      summary.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// compare: per-method mean report table, paper-style.
// ---------------------------------------------------------------------------

struct MethodColumn {
  std::string name;
  std::vector<double> ece, mce, accuracy;  // per seed
  double mean_ece = 0.0, mean_mce = 0.0, mean_accuracy = 0.0;
};

struct CompareOutcome {
  std::vector<MethodColumn> columns;
  std::string markdown;
};

namespace detail {

inline LossSpec method_loss(const std::string& name,
                            const ExperimentConfig& config) {
  if (name == "uncalibrated" || name == "ce")
    return LossSpec{LossKind::CrossEntropy};
  if (name == "dca") return LossSpec{LossKind::Dca, config.loss.beta};
  if (name == "entropy") {
    LossSpec spec{LossKind::EntropyPenalty, config.loss.beta};
    spec.entropy_reward = config.loss.entropy_reward;
    return spec;
  }
  if (name == "smoothing")
    return LossSpec{LossKind::LabelSmoothing, 0.0, config.loss.alpha};
  if (name == "mmce") {
    LossSpec spec{LossKind::Mmce, config.loss.beta};
    spec.mmce_kernel_width = config.loss.mmce_kernel_width;
    return spec;
  }
  throw invalid_input("unknown method: " + name +
                      " (want uncalibrated, temperature, dca, entropy, "
                      "smoothing or mmce)");
}

}  // namespace detail

inline CompareOutcome cmd_compare(const ExperimentConfig& config,
                                  const std::vector<std::string>& methods) {
  if (methods.size() < 2)
    throw invalid_input("compare needs at least 2 methods");
  validate_config(config);
  fs::create_directories(config.out_dir);

  const bool wants_temperature =
      std::find(methods.begin(), methods.end(), "temperature") !=
      methods.end();

  CompareOutcome outcome;
  for (const std::string& name : methods)
    outcome.columns.push_back(MethodColumn{name, {}, {}, {}});

  for (std::uint64_t seed : config.seeds) {
    // The temperature column shares the plain model of the same seed, so
    // its accuracy matches the uncalibrated column exactly.
    std::optional<RunArtifacts> plain_run;
    auto plain = [&]() -> RunArtifacts& {
      if (!plain_run) {
        ExperimentConfig plain_config = config;
        plain_config.fit_temp = wants_temperature;
        plain_run = run_training(plain_config, seed,
                                 LossSpec{LossKind::CrossEntropy});
        io::write_text_file(
            fs::path(config.out_dir) /
                ("trace_uncalibrated_" + detail::seed_tag(seed) + ".csv"),
            io::trace_csv(plain_run->trace));
      }
      return *plain_run;
    };

    for (MethodColumn& column : outcome.columns) {
      CalibrationReport report;
      if (column.name == "uncalibrated" || column.name == "ce") {
        report = plain().report;
      } else if (column.name == "temperature") {
        report = *plain().scaled_report;
        io::json tj;
        tj["t"] = plain().scaler->t;
        tj["fit_nll"] = plain().scaler->fit_nll;
        io::write_text_file(fs::path(config.out_dir) /
                                ("temperature_" + detail::seed_tag(seed) +
                                 ".json"),
                            tj.dump(2) + "\n");
      } else {
        ExperimentConfig method_config = config;
        method_config.fit_temp = wants_temperature;  // same core split
        RunArtifacts run = run_training(
            method_config, seed, detail::method_loss(column.name, config));
        io::write_text_file(
            fs::path(config.out_dir) / ("trace_" + column.name + "_" +
                                        detail::seed_tag(seed) + ".csv"),
            io::trace_csv(run.trace));
        report = run.report;
      }
      column.ece.push_back(report.ece);
      column.mce.push_back(report.mce);
      column.accuracy.push_back(report.accuracy);
    }
  }

  const double n_seeds = static_cast<double>(config.seeds.size());
  for (MethodColumn& column : outcome.columns) {
    for (double v : column.ece) column.mean_ece += v / n_seeds;
    for (double v : column.mce) column.mean_mce += v / n_seeds;
    for (double v : column.accuracy) column.mean_accuracy += v / n_seeds;
  }

  const MethodColumn& baseline = outcome.columns.front();
  std::ostringstream md;
  md << "| method | mean ECE | mean MCE | mean accuracy | ECE reduction vs "
     << baseline.name << " |\n";
  md << "|---|---|---|---|---|\n";
  char buf[160];
  for (const MethodColumn& column : outcome.columns) {
    const double reduction =
        baseline.mean_ece > 0.0
            ? (baseline.mean_ece - column.mean_ece) / baseline.mean_ece * 100.0
            : 0.0;
    std::snprintf(buf, sizeof(buf),
                  "| %s | %.4f | %.4f | %.4f | %.2f%% |\n",
                  column.name.c_str(), column.mean_ece, column.mean_mce,
                  column.mean_accuracy, reduction);
    md << buf;
  }
  outcome.markdown = md.str();

  io::json summary;
  summary["config"] = detail::config_echo(config);
  io::json cols = io::json::array();
  for (const MethodColumn& column : outcome.columns) {
    const double reduction =
        baseline.mean_ece > 0.0
            ? (baseline.mean_ece - column.mean_ece) / baseline.mean_ece
            : 0.0;
    cols.push_back({{"method", column.name},
                    {"ece_per_seed", column.ece},
                    {"mce_per_seed", column.mce},
                    {"accuracy_per_seed", column.accuracy},
                    {"mean_ece", column.mean_ece},
                    {"mean_mce", column.mean_mce},
                    {"mean_accuracy", column.mean_accuracy},
                    {"ece_reduction_vs_baseline", reduction}});
  }
  summary["methods"] = cols;
  io::write_text_file(fs::path(config.out_dir) / "compare.json",
                      summary.dump(2) + "\n");
  io::write_text_file(fs::path(config.out_dir) / "compare.md",
                      outcome.markdown);
  return outcome;
}

}  // namespace calib
