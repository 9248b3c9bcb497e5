#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "calib/dataset.hpp"
#include "calib/errors.hpp"
#include "calib/metrics.hpp"
#include "calib/nn.hpp"
#include "calib/prob.hpp"

namespace calib::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting. CSVs carry full-precision decimals (%.17g) so that
// re-aggregating a table reproduces the JSON numbers exactly; checkpoints
// carry hexadecimal floats, which round-trip losslessly by construction.
// ---------------------------------------------------------------------------

inline std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

inline std::string format_hex(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%a", value);
  return buffer;
}

inline double parse_double(const std::string& token, const char* what) {
  char* end = nullptr;
  const double value = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0')
    throw invalid_input(std::string("could not parse number for ") + what +
                        ": '" + token + "'");
  return value;
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw invalid_input("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw invalid_input("write failed: " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open for reading: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// ---------------------------------------------------------------------------
// Prediction logs: one JSON record per line with `logits` (K reals) and
// `label` (0-based in the file, 1-based in memory). Logits rather than
// probabilities so temperature scaling stays applicable post hoc.
// ---------------------------------------------------------------------------

struct PredictionLog {
  std::vector<LogitVector> logits;
  std::vector<int> labels;  // 1-based
};

inline void write_prediction_log(const fs::path& path,
                                 const PredictionLog& log) {
  std::ostringstream out;
  for (std::size_t i = 0; i < log.logits.size(); ++i) {
    json record;
    record["logits"] = log.logits[i];
    record["label"] = log.labels[i] - 1;
    out << record.dump() << "\n";
  }
  write_text_file(path, out.str());
}

inline PredictionLog read_prediction_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open for reading: " + path.string());
  PredictionLog log;
  std::string line;
  std::size_t line_no = 0;
  std::size_t k = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& err) {
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": malformed record: " + err.what());
    }
    if (!record.contains("logits") || !record.contains("label") ||
        !record["logits"].is_array() ||
        !record["label"].is_number_integer())
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": record needs a `logits` array and an integer "
                          "`label`");
    LogitVector logits = record["logits"].get<LogitVector>();
    if (logits.size() < 2)
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": need at least 2 logits");
    if (k == 0) k = logits.size();
    if (logits.size() != k)
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": inconsistent class count");
    const int label = record["label"].get<int>();
    if (label < 0 || label >= static_cast<int>(k))
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": label outside {0..K-1}");
    log.logits.push_back(std::move(logits));
    log.labels.push_back(label + 1);
  }
  if (log.logits.empty())
    throw invalid_input(path.string() + ": empty prediction log");
  return log;
}

// ---------------------------------------------------------------------------
// Calibration reports: JSON plus the reliability table as CSV.
// ---------------------------------------------------------------------------

inline json report_to_json(const CalibrationReport& report) {
  json bins = json::array();
  for (const BinStats& row : report.bins) {
    bins.push_back({{"bin_index", row.bin_index},
                    {"lower", static_cast<double>(row.bin_index - 1) /
                                  report.m_bins},
                    {"upper", static_cast<double>(row.bin_index) /
                                  report.m_bins},
                    {"count", row.count},
                    {"accuracy", row.accuracy},
                    {"confidence", row.mean_confidence},
                    {"gap", row.accuracy - row.mean_confidence}});
  }
  return json{{"ece", report.ece},         {"mce", report.mce},
              {"accuracy", report.accuracy}, {"nll", report.nll},
              {"m_bins", report.m_bins},   {"bins", bins}};
}

inline std::string reliability_csv(const CalibrationReport& report) {
  std::ostringstream out;
  out << "bin_index,lower,upper,count,accuracy,confidence,gap\n";
  for (const BinStats& row : report.bins) {
    out << row.bin_index << ','
        << format_double(static_cast<double>(row.bin_index - 1) /
                         report.m_bins)
        << ','
        << format_double(static_cast<double>(row.bin_index) / report.m_bins)
        << ',' << row.count << ',' << format_double(row.accuracy) << ','
        << format_double(row.mean_confidence) << ','
        << format_double(row.accuracy - row.mean_confidence) << '\n';
  }
  return out.str();
}

// Self-contained reliability diagram: accuracy bars per non-empty bin, red
// mean-confidence ticks, and the diagonal of perfect calibration.
inline std::string reliability_svg(const CalibrationReport& report) {
  const double size = 360.0, margin = 48.0;
  const double span = size - 2.0 * margin;
  auto sx = [&](double v) { return margin + v * span; };
  auto sy = [&](double v) { return size - margin - v * span; };
  char buf[256];
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"360\" "
         "height=\"360\" viewBox=\"0 0 360 360\">\n"
      << "<rect width=\"360\" height=\"360\" fill=\"white\"/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    const double v = tick / 5.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#dddddd\"/>\n",
                  sx(v), sy(0.0), sx(v), sy(1.0));
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#dddddd\"/>\n",
                  sx(0.0), sy(v), sx(1.0), sy(v));
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" "
                  "text-anchor=\"middle\">%.1f</text>\n",
                  sx(v), size - margin + 16.0, v);
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  margin - 6.0, sy(v) + 3.0, v);
    svg << buf;
  }
  for (const BinStats& row : report.bins) {
    const double lo = static_cast<double>(row.bin_index - 1) / report.m_bins;
    const double hi = static_cast<double>(row.bin_index) / report.m_bins;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" "
                  "height=\"%.2f\" fill=\"#4878a8\" fill-opacity=\"0.8\"/>\n",
                  sx(lo) + 1.0, sy(row.accuracy), (hi - lo) * span - 2.0,
                  (size - margin) - sy(row.accuracy) - margin);
    svg << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#c03028\" stroke-width=\"2\"/>\n",
                  sx(lo) + 1.0, sy(row.mean_confidence), sx(hi) - 1.0,
                  sy(row.mean_confidence));
    svg << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                "stroke=\"#333333\" stroke-dasharray=\"4 3\"/>\n",
                sx(0.0), sy(0.0), sx(1.0), sy(1.0));
  svg << buf;
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                "fill=\"none\" stroke=\"#333333\"/>\n",
                margin, margin, span, span);
  svg << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" "
                "text-anchor=\"middle\">confidence</text>\n",
                size / 2.0, size - 8.0);
  svg << buf;
  std::snprintf(
      buf, sizeof(buf),
      "<text x=\"12\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 12 %.2f)\">accuracy</text>\n",
      size / 2.0, size / 2.0);
  svg << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\">ECE %.4f    "
                "MCE %.4f    bins %d</text>\n",
                margin, margin - 10.0, report.ece, report.mce, report.m_bins);
  svg << buf;
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Training trace: one CSV row per epoch.
// ---------------------------------------------------------------------------

inline std::string trace_csv(const TrainingTrace& trace) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,test_loss,test_acc\n";
  for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
    const EpochRecord& r = trace.epochs[e];
    out << (e + 1) << ',' << format_double(r.train_loss) << ','
        << format_double(r.train_acc) << ',' << format_double(r.test_loss)
        << ',' << format_double(r.test_acc) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned structured text, parameters as lossless hex floats,
// optional temperature, and the TrainConfig that produced the model.
// ---------------------------------------------------------------------------

struct Checkpoint {
  MlpModel model;
  std::optional<double> temperature;
  TrainConfig config;
};

inline LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "dca") return LossKind::Dca;
  if (name == "entropy") return LossKind::EntropyPenalty;
  if (name == "smoothing") return LossKind::LabelSmoothing;
  if (name == "mmce") return LossKind::Mmce;
  throw invalid_input("unknown loss kind: " + name);
}

inline std::string checkpoint_text(const Checkpoint& ckpt) {
  std::ostringstream out;
  out << "calib-checkpoint v1\n";
  out << "input_dim " << ckpt.model.input_dim << "\n";
  out << "class_count " << ckpt.model.class_count << "\n";
  out << "layers " << ckpt.model.layers.size() << "\n";
  for (std::size_t l = 0; l < ckpt.model.layers.size(); ++l) {
    const Layer& layer = ckpt.model.layers[l];
    out << "layer " << l << " in " << layer.in << " out " << layer.out
        << " act "
        << (layer.act == Activation::LeakyRelu ? "leaky_relu" : "identity")
        << "\n";
    out << "w";
    for (double v : layer.w) out << ' ' << format_hex(v);
    out << "\nb";
    for (double v : layer.b) out << ' ' << format_hex(v);
    out << "\n";
  }
  if (ckpt.temperature)
    out << "temperature " << format_hex(*ckpt.temperature) << "\n";
  const LossSpec& loss = ckpt.config.loss;
  out << "config epochs " << ckpt.config.epochs << " batch_size "
      << ckpt.config.batch_size << " learning_rate "
      << format_hex(ckpt.config.learning_rate) << " seed " << ckpt.config.seed
      << " shuffle " << (ckpt.config.shuffle ? 1 : 0) << " loss "
      << to_string(loss.kind) << " beta " << format_hex(loss.beta)
      << " alpha " << format_hex(loss.alpha) << " mmce_width "
      << format_hex(loss.mmce_kernel_width) << " entropy_reward "
      << (loss.entropy_reward ? 1 : 0) << "\n";
  out << "end\n";
  return out.str();
}

inline void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_text_file(path, checkpoint_text(ckpt));
}

inline Checkpoint parse_checkpoint(const std::string& text,
                                   const std::string& origin) {
  std::istringstream in(text);
  auto fail = [&](const std::string& why) -> void {
    throw invalid_input(origin + ": bad checkpoint: " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != "calib-checkpoint v1")
    fail("missing or unsupported version header");

  Checkpoint ckpt;
  std::size_t n_layers = 0;
  std::string word;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    row >> word;
    if (word == "input_dim") {
      row >> ckpt.model.input_dim;
    } else if (word == "class_count") {
      row >> ckpt.model.class_count;
    } else if (word == "layers") {
      row >> n_layers;
    } else if (word == "layer") {
      Layer layer;
      std::size_t index;
      std::string key, act;
      row >> index >> key >> layer.in >> key >> layer.out >> key >> act;
      if (!row) fail("malformed layer line");
      layer.act = act == "leaky_relu" ? Activation::LeakyRelu
                                      : Activation::Identity;
      std::string values;
      if (!std::getline(in, values) || values.substr(0, 1) != "w")
        fail("expected weight line");
      std::istringstream wrow(values.substr(1));
      std::string token;
      while (wrow >> token)
        layer.w.push_back(parse_double(token, "weight"));
      if (layer.w.size() !=
          static_cast<std::size_t>(layer.in) * static_cast<std::size_t>(layer.out))
        fail("weight count does not match layer dimensions");
      if (!std::getline(in, values) || values.substr(0, 1) != "b")
        fail("expected bias line");
      std::istringstream brow(values.substr(1));
      while (brow >> token)
        layer.b.push_back(parse_double(token, "bias"));
      if (layer.b.size() != static_cast<std::size_t>(layer.out))
        fail("bias count does not match layer dimensions");
      ckpt.model.layers.push_back(std::move(layer));
    } else if (word == "temperature") {
      std::string token;
      row >> token;
      ckpt.temperature = parse_double(token, "temperature");
    } else if (word == "config") {
      std::string key;
      while (row >> key) {
        std::string token;
        if (!(row >> token)) fail("dangling config key: " + key);
        if (key == "epochs")
          ckpt.config.epochs = static_cast<int>(parse_double(token, key.c_str()));
        else if (key == "batch_size")
          ckpt.config.batch_size =
              static_cast<int>(parse_double(token, key.c_str()));
        else if (key == "learning_rate")
          ckpt.config.learning_rate = parse_double(token, key.c_str());
        else if (key == "seed")
          ckpt.config.seed = std::stoull(token);
        else if (key == "shuffle")
          ckpt.config.shuffle = token != "0";
        else if (key == "loss")
          ckpt.config.loss.kind = loss_kind_from_string(token);
        else if (key == "beta")
          ckpt.config.loss.beta = parse_double(token, key.c_str());
        else if (key == "alpha")
          ckpt.config.loss.alpha = parse_double(token, key.c_str());
        else if (key == "mmce_width")
          ckpt.config.loss.mmce_kernel_width = parse_double(token, key.c_str());
        else if (key == "entropy_reward")
          ckpt.config.loss.entropy_reward = token != "0";
        else
          fail("unknown config key: " + key);
      }
    } else if (word == "end") {
      if (ckpt.model.layers.size() != n_layers)
        fail("layer count mismatch");
      if (ckpt.model.layers.empty()) fail("checkpoint has no layers");
      int expect = ckpt.model.input_dim;
      for (const Layer& layer : ckpt.model.layers) {
        if (layer.in != expect) fail("layer dimensions do not chain");
        expect = layer.out;
      }
      if (expect != ckpt.model.class_count)
        fail("final layer width != class_count");
      return ckpt;
    } else if (!word.empty()) {
      fail("unknown line: " + word);
    }
    word.clear();
  }
  fail("missing end marker");
  return ckpt;  // unreachable
}

inline Checkpoint read_checkpoint(const fs::path& path) {
  return parse_checkpoint(read_text_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Dataset export: delimited text with a header row, 0-based labels in the
// file, and a JSON sidecar (<path>.meta.json) recording the generator.
// ---------------------------------------------------------------------------

inline fs::path dataset_sidecar_path(const fs::path& csv_path) {
  fs::path sidecar = csv_path;
  sidecar += ".meta.json";
  return sidecar;
}

inline void write_dataset_csv(const fs::path& path, const Dataset& data) {
  std::ostringstream out;
  const int d = data.dim();
  for (int c = 0; c < d; ++c) out << 'x' << c << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int c = 0; c < d; ++c)
      out << format_double(data.inputs[i][static_cast<std::size_t>(c)]) << ',';
    out << (data.labels[i] - 1) << '\n';
  }
  write_text_file(path, out.str());

  json meta;
  meta["n"] = data.size();
  meta["dim"] = d;
  meta["k"] = data.k;
  for (const auto& [key, value] : data.meta) meta[key] = value;
  write_text_file(dataset_sidecar_path(path), meta.dump(2) + "\n");
}

inline Dataset read_dataset_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open for reading: " + path.string());
  Dataset data;
  std::string line;
  if (!std::getline(in, line))
    throw invalid_input(path.string() + ": empty dataset file");
  const std::size_t columns =
      1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (columns < 2)
    throw invalid_input(path.string() + ": need at least one feature column");
  std::size_t line_no = 1;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> features;
    for (std::size_t c = 0; c + 1 < columns; ++c) {
      if (!std::getline(row, cell, ','))
        throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                            ": too few columns");
      features.push_back(parse_double(cell, "feature"));
    }
    if (!std::getline(row, cell))
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": missing label column");
    const int label = static_cast<int>(parse_double(cell, "label"));
    if (label < 0)
      throw invalid_input(path.string() + ":" + std::to_string(line_no) +
                          ": negative label");
    data.inputs.push_back(std::move(features));
    data.labels.push_back(label + 1);
    max_label = std::max(max_label, label + 1);
  }
  if (data.inputs.empty())
    throw invalid_input(path.string() + ": dataset has no rows");
  data.k = std::max(2, max_label);

  const fs::path sidecar = dataset_sidecar_path(path);
  if (fs::exists(sidecar)) {
    const json meta = json::parse(read_text_file(sidecar));
    if (meta.contains("k")) data.k = meta["k"].get<int>();
    for (const auto& [key, value] : meta.items())
      if (value.is_string()) data.meta[key] = value.get<std::string>();
  }
  return data;
}

}  // namespace calib::io
