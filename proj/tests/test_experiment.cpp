#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "calib/experiment.hpp"
#include "calib/io.hpp"

using namespace calib;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("calib_exp_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small, fast configuration for command-level tests.
ExperimentConfig micro_config(const std::string& out_dir) {
  ExperimentConfig config;
  config.dataset = "toy1d";
  config.curve_scale = 0.5;
  config.train_n = 60;
  config.test_n = 200;
  config.hidden = {8};
  config.epochs = 4;
  config.batch_size = 16;
  config.learning_rate = 0.01;
  config.loss = LossSpec{LossKind::Dca, 10.0};
  config.m_bins = 10;
  config.seeds = {1, 2};
  config.out_dir = out_dir;
  return config;
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }

}  // namespace

TEST_CASE("config parser covers every key and rejects unknown ones") {
  const std::string text =
      "# comment\n"
      "dataset = blobs\n"
      "curve = ramp\n"
      "curve_scale = 1.5\n"
      "train_n = 120\n"
      "test_n = 60\n"
      "classes = 3\n"
      "dim = 4\n"
      "separation = 2.5\n"
      "hidden = 32,16\n"
      "epochs = 7\n"
      "batch_size = 10\n"
      "learning_rate = 0.005\n"
      "shuffle = false\n"
      "loss = mmce\n"
      "beta = 3.5\n"
      "alpha = 0.2\n"
      "mmce_width = 0.3\n"
      "entropy_sign = reward\n"
      "bins = 12\n"
      "fit_temperature = true\n"
      "val_fraction = 0.25\n"
      "seeds = 7, 8, 9\n"
      "out = somewhere\n";
  const ExperimentConfig config = parse_config_text(text, "test");
  CHECK(config.dataset == "blobs");
  CHECK(config.curve == "ramp");
  CHECK(config.curve_scale == 1.5);
  CHECK(config.train_n == 120);
  CHECK(config.test_n == 60);
  CHECK(config.classes == 3);
  CHECK(config.dim == 4);
  CHECK(config.separation == 2.5);
  CHECK(config.hidden == std::vector<int>{32, 16});
  CHECK(config.epochs == 7);
  CHECK(config.batch_size == 10);
  CHECK(config.learning_rate == 0.005);
  CHECK(config.shuffle == false);
  CHECK(config.loss.kind == LossKind::Mmce);
  CHECK(config.loss.beta == 3.5);
  CHECK(config.loss.alpha == 0.2);
  CHECK(config.loss.mmce_kernel_width == 0.3);
  CHECK(config.loss.entropy_reward == true);
  CHECK(config.m_bins == 12);
  CHECK(config.fit_temp == true);
  CHECK(config.val_fraction == 0.25);
  CHECK(config.seeds == std::vector<std::uint64_t>{7, 8, 9});
  CHECK(config.out_dir == "somewhere");

  CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n", "test"),
                  invalid_input);
  CHECK_THROWS_AS(parse_config_text("dataset toy1d\n", "test"),
                  invalid_input);
  CHECK_THROWS_AS(parse_config_text("shuffle = maybe\n", "test"),
                  invalid_input);
}

TEST_CASE("config validation rejects inconsistent setups") {
  ExperimentConfig config = micro_config("unused");
  config.dataset = "tabular";
  CHECK_THROWS_AS(validate_config(config), invalid_input);

  config = micro_config("unused");
  config.dataset = "blobs";
  config.classes = 3;
  config.train_n = 100;  // not divisible by 3
  CHECK_THROWS_AS(validate_config(config), invalid_input);

  config = micro_config("unused");
  config.seeds.clear();
  CHECK_THROWS_AS(validate_config(config), invalid_input);

  config = micro_config("unused");
  config.m_bins = 0;
  CHECK_THROWS_AS(validate_config(config), invalid_input);
}

TEST_CASE("train and test sets come from disjoint seeded streams") {
  ExperimentConfig config = micro_config("unused");
  auto [train_a, test_a] = make_datasets(config, 9);
  auto [train_b, test_b] = make_datasets(config, 9);
  CHECK(train_a.inputs == train_b.inputs);
  CHECK(test_a.inputs == test_b.inputs);
  CHECK(train_a.inputs != test_a.inputs);
}

TEST_CASE("cmd_train fans out per seed and is byte-deterministic") {
  TempDir dir("train");
  ExperimentConfig config = micro_config((dir.path / "a").string());
  const TrainOutcome outcome = cmd_train(config);
  CHECK(outcome.runs.size() == 2);

  for (const char* name :
       {"model_seed1.ckpt", "model_seed2.ckpt", "trace_seed1.csv",
        "trace_seed2.csv", "report_seed1.json", "report_seed2.json",
        "reliability_seed1.csv", "reliability_seed1.svg", "summary.json"})
    CHECK(fs::exists(dir.path / "a" / name));

  // one trace row per epoch
  std::istringstream trace(slurp(dir.path / "a" / "trace_seed1.csv"));
  std::string line;
  int rows = -1;  // header
  while (std::getline(trace, line))
    if (!line.empty()) ++rows;
  CHECK(rows == config.epochs);

  // byte-identical rerun
  config.out_dir = (dir.path / "b").string();
  cmd_train(config);
  for (const char* name : {"model_seed1.ckpt", "trace_seed1.csv",
                           "report_seed1.json", "reliability_seed1.csv",
                           "summary.json"})
    CHECK(slurp(dir.path / "a" / name) == slurp(dir.path / "b" / name));
}

TEST_CASE("evaluating a checkpoint against an exported dataset reproduces "
          "the training report") {
  TempDir dir("roundtrip");
  ExperimentConfig config = micro_config((dir.path / "run").string());
  config.seeds = {5};
  const TrainOutcome outcome = cmd_train(config);

  io::write_dataset_csv(dir.path / "test.csv", outcome.runs[0].test);
  const CalibrationReport report = cmd_evaluate_checkpoint(
      dir.path / "run" / "model_seed5.ckpt", dir.path / "test.csv",
      config.m_bins, dir.path / "eval", false);
  CHECK(report.ece == outcome.runs[0].report.ece);
  CHECK(report.accuracy == outcome.runs[0].report.accuracy);
  CHECK(report.nll == outcome.runs[0].report.nll);
}

TEST_CASE("evaluate reproduces the single-bin worked example") {
  // 10 samples in one bin, 7 correct, confidence 0.85 -> ece 0.15.
  TempDir dir("evallog");
  io::PredictionLog log;
  const double logit = std::log(0.85 / 0.15);
  for (int i = 0; i < 10; ++i) {
    log.logits.push_back({logit, 0.0});
    log.labels.push_back(i < 7 ? 1 : 2);
  }
  io::write_prediction_log(dir.path / "log.jsonl", log);
  const CalibrationReport report =
      cmd_evaluate_log(dir.path / "log.jsonl", 10, dir.path / "out");
  CHECK(report.ece == Catch::Approx(0.15).margin(1e-9));
  CHECK(report.accuracy == Catch::Approx(0.7));

  const io::json j = io::json::parse(slurp(dir.path / "out" / "report.json"));
  CHECK(j["ece"].get<double>() == Catch::Approx(0.15).margin(1e-9));
  CHECK(fs::exists(dir.path / "out" / "reliability.csv"));
  CHECK(fs::exists(dir.path / "out" / "reliability.svg"));
}

TEST_CASE("evaluate can apply an explicit temperature to a log") {
  TempDir dir("evaltemp");
  Rng rng(31);
  io::PredictionLog log;
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    log.logits.push_back({3.0 * std::log(p), 3.0 * std::log(1.0 - p)});
    log.labels.push_back(rng.bernoulli(p) ? 1 : 2);
  }
  io::write_prediction_log(dir.path / "log.jsonl", log);
  const CalibrationReport raw =
      cmd_evaluate_log(dir.path / "log.jsonl", 10, dir.path / "a");
  const CalibrationReport cooled =
      cmd_evaluate_log(dir.path / "log.jsonl", 10, dir.path / "b", 3.0);
  const CalibrationReport expected =
      evaluate(make_prediction_set(log.logits, log.labels, 3.0), 10);
  CHECK(cooled.ece == expected.ece);
  CHECK(cooled.nll == expected.nll);
  CHECK(cooled.accuracy == raw.accuracy);  // argmax invariance
  CHECK(cooled.nll < raw.nll);             // sharpened log improves when cooled
}

TEST_CASE("evaluate of a perfect log reports zeros") {
  TempDir dir("perfect");
  io::PredictionLog log;
  for (int i = 0; i < 6; ++i) {
    log.logits.push_back({i % 2 == 0 ? 40.0 : -40.0,
                          i % 2 == 0 ? -40.0 : 40.0});
    log.labels.push_back(i % 2 == 0 ? 1 : 2);
  }
  io::write_prediction_log(dir.path / "log.jsonl", log);
  const CalibrationReport report =
      cmd_evaluate_log(dir.path / "log.jsonl", 10, dir.path / "out");
  CHECK(report.ece == 0.0);
  CHECK(report.mce == 0.0);
  CHECK(report.accuracy == 1.0);
}

TEST_CASE("calibrate fits a temperature that improves the log") {
  TempDir dir("calibrate");
  // 3x sharpened calibrated logits, fit should cool them down.
  Rng rng(7);
  io::PredictionLog log;
  for (int i = 0; i < 2000; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    log.logits.push_back({3.0 * std::log(p), 3.0 * std::log(1.0 - p)});
    log.labels.push_back(rng.bernoulli(p) ? 1 : 2);
  }
  io::write_prediction_log(dir.path / "log.jsonl", log);
  const CalibrateOutcome outcome =
      cmd_calibrate(dir.path / "log.jsonl", {}, 10, dir.path / "out");
  CHECK(outcome.scaler.t > 1.5);
  CHECK(outcome.after.nll <= outcome.before.nll + 1e-12);
  CHECK(outcome.after.ece < outcome.before.ece);
  CHECK(outcome.after.accuracy == outcome.before.accuracy);
  CHECK(fs::exists(dir.path / "out" / "temperature.json"));
  CHECK(fs::exists(dir.path / "out" / "report_uncalibrated.json"));
  CHECK(fs::exists(dir.path / "out" / "report_calibrated.json"));

  const io::json tj =
      io::json::parse(slurp(dir.path / "out" / "temperature.json"));
  CHECK(tj["t"].get<double>() == outcome.scaler.t);
  CHECK(tj["fit_nll"].get<double>() <= tj["nll_at_1"].get<double>());
}

TEST_CASE("toy experiment emits exactly three labeled curves per seed") {
  TempDir dir("toy");
  ExperimentConfig config = micro_config((dir.path / "out").string());
  config.seeds = {3};
  const ToyOutcome outcome = cmd_toy_experiment(config, 41);
  REQUIRE(outcome.seeds.size() == 1);
  CHECK(outcome.seeds[0].uncal_curve.size() == 41);
  CHECK(outcome.seeds[0].temp_curve.size() == 41);
  CHECK(outcome.seeds[0].dca_curve.size() == 41);

  const std::string csv = slurp(dir.path / "out" / "curves_seed3.csv");
  CHECK(csv.rfind("x,truth,uncalibrated,temperature,dca\n", 0) == 0);
  CHECK(fs::exists(dir.path / "out" / "toy_summary.json"));

  ExperimentConfig blobs = config;
  blobs.dataset = "blobs";
  blobs.train_n = 60;
  blobs.test_n = 30;
  CHECK_THROWS_AS(cmd_toy_experiment(blobs), invalid_input);
}

TEST_CASE("sweep rows cover every beta x seed and beta zero matches plain "
          "cross entropy") {
  TempDir dir("sweep");
  ExperimentConfig config = micro_config((dir.path / "out").string());
  const SweepOutcome outcome = cmd_sweep_beta(config, {0.0, 10.0});
  CHECK(outcome.rows.size() == 4);  // 2 betas x 2 seeds

  // The beta = 0 rows must equal an uncalibrated run under the same seed.
  for (std::uint64_t seed : config.seeds) {
    const RunArtifacts plain =
        run_training(config, seed, LossSpec{LossKind::CrossEntropy});
    for (const SweepRow& row : outcome.rows) {
      if (row.beta == 0.0 && row.seed == seed) {
        CHECK(row.ece == plain.report.ece);
        CHECK(row.accuracy == plain.report.accuracy);
      }
    }
  }
  CHECK(fs::exists(dir.path / "out" / "sweep.csv"));
  CHECK(fs::exists(dir.path / "out" / "sweep_summary.json"));
  CHECK_THROWS_AS(cmd_sweep_beta(config, {}), invalid_input);
  CHECK_THROWS_AS(cmd_sweep_beta(config, {-1.0}), invalid_input);
}

TEST_CASE("compare columns behave like the paper table") {
  TempDir dir("compare");
  ExperimentConfig config = micro_config((dir.path / "out").string());
  const CompareOutcome outcome = cmd_compare(
      config, {"uncalibrated", "temperature", "dca", "uncalibrated"});
  REQUIRE(outcome.columns.size() == 4);

  // Identical method listed twice gives identical columns.
  CHECK(outcome.columns[0].ece == outcome.columns[3].ece);
  CHECK(outcome.columns[0].accuracy == outcome.columns[3].accuracy);

  // Temperature shares the plain model, so accuracy matches per seed.
  CHECK(outcome.columns[1].accuracy == outcome.columns[0].accuracy);

  // Relative reduction follows (ece_a - ece_b) / ece_a.
  const io::json j = io::json::parse(slurp(dir.path / "out" / "compare.json"));
  const double base = j["methods"][0]["mean_ece"].get<double>();
  const double dca = j["methods"][2]["mean_ece"].get<double>();
  CHECK(j["methods"][2]["ece_reduction_vs_baseline"].get<double>() ==
        Catch::Approx((base - dca) / base).margin(1e-12));

  CHECK(outcome.markdown.find("| method |") == 0);
  CHECK_THROWS_AS(cmd_compare(config, {"dca"}), invalid_input);
  CHECK_THROWS_AS(cmd_compare(config, {"dca", "nonsense"}), invalid_input);
}

TEST_CASE("fit_temperature training stores the scaler in the checkpoint") {
  TempDir dir("fittemp");
  ExperimentConfig config = micro_config((dir.path / "out").string());
  config.seeds = {4};
  config.fit_temp = true;
  config.loss = LossSpec{LossKind::CrossEntropy};
  const TrainOutcome outcome = cmd_train(config);
  REQUIRE(outcome.runs[0].scaler.has_value());
  REQUIRE(outcome.runs[0].scaled_report.has_value());

  const io::Checkpoint ckpt =
      io::read_checkpoint(dir.path / "out" / "model_seed4.ckpt");
  REQUIRE(ckpt.temperature.has_value());
  CHECK(*ckpt.temperature == outcome.runs[0].scaler->t);

  const io::json report =
      io::json::parse(slurp(dir.path / "out" / "report_seed4.json"));
  CHECK(report["temperature"].get<double>() == outcome.runs[0].scaler->t);
  CHECK(report["val_fraction"].get<double>() == config.val_fraction);
  CHECK(report.contains("scaled"));

  // Argmax invariance: scaling never moves the test accuracy.
  CHECK(outcome.runs[0].scaled_report->accuracy ==
        outcome.runs[0].report.accuracy);
}

TEST_CASE("compare writes a trace file behind every cell") {
  TempDir dir("comparetrace");
  ExperimentConfig config = micro_config((dir.path / "out").string());
  cmd_compare(config, {"uncalibrated", "temperature", "dca"});
  for (std::uint64_t seed : config.seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    CHECK(fs::exists(dir.path / "out" / ("trace_uncalibrated_" + tag + ".csv")));
    CHECK(fs::exists(dir.path / "out" / ("temperature_" + tag + ".json")));
    CHECK(fs::exists(dir.path / "out" / ("trace_dca_" + tag + ".csv")));
  }
}

TEST_CASE("toy experiment outputs are byte-deterministic") {
  TempDir dir("determinism");
  ExperimentConfig config = micro_config((dir.path / "a").string());
  config.seeds = {11};
  cmd_toy_experiment(config, 31);
  config.out_dir = (dir.path / "b").string();
  cmd_toy_experiment(config, 31);
  CHECK(slurp(dir.path / "a" / "curves_seed11.csv") ==
        slurp(dir.path / "b" / "curves_seed11.csv"));
  CHECK(slurp(dir.path / "a" / "toy_summary.json") ==
        slurp(dir.path / "b" / "toy_summary.json"));
}
