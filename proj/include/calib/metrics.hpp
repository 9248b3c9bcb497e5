#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "calib/errors.hpp"
#include "calib/prob.hpp"

namespace calib {

// Probabilities are floored here before taking logs so saturated softmax
// outputs cannot produce an infinite likelihood term.
inline constexpr double kNllProbFloor = 1e-12;

// Per-bin accuracy / mean-confidence pair; only defined for count > 0.
struct BinStats {
  int bin_index = 0;  // 1-based
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  double mce = 0.0;
  double accuracy = 0.0;
  double nll = 0.0;
  int m_bins = 0;
  std::vector<BinStats> bins;  // non-empty bins, ascending bin index
};

// Fraction of correct predictions inside one bin.
inline double bin_accuracy(const std::vector<std::size_t>& bin,
                           const PredictionSet& preds) {
  if (bin.empty()) throw empty_bin("accuracy of an empty bin is undefined");
  std::size_t correct = 0;
  for (std::size_t i : bin)
    if (preds.correct(i)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(bin.size());
}

// Arithmetic mean of the predicted-class confidences inside one bin.
inline double bin_confidence(const std::vector<std::size_t>& bin,
                             const PredictionSet& preds) {
  if (bin.empty()) throw empty_bin("confidence of an empty bin is undefined");
  double sum = 0.0;
  for (std::size_t i : bin) sum += preds.predictions[i].confidence;
  return sum / static_cast<double>(bin.size());
}

inline double accuracy(const PredictionSet& preds) {
  if (preds.size() == 0) throw invalid_input("empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds.correct(i)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// Mean negative log probability of the true class.
inline double nll(const PredictionSet& preds) {
  if (preds.size() == 0) throw invalid_input("empty prediction set");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double p = preds.predictions[i].probs[
        static_cast<std::size_t>(preds.true_labels[i] - 1)];
    sum -= std::log(std::max(p, kNllProbFloor));
  }
  return sum / static_cast<double>(preds.size());
}

// One row per non-empty bin, ascending bin index. Summation order inside a
// bin follows ascending sample index, so reports are reproducible bit for
// bit.
inline std::vector<BinStats> reliability_table(const PredictionSet& preds,
                                               int m_bins) {
  BinPartition part = partition(preds, m_bins);
  std::vector<BinStats> rows;
  for (int m = 1; m <= m_bins; ++m) {
    const auto& bin = part.membership[static_cast<std::size_t>(m - 1)];
    if (bin.empty()) continue;
    rows.push_back(BinStats{m, bin.size(), bin_accuracy(bin, preds),
                            bin_confidence(bin, preds)});
  }
  return rows;
}

// Bin-weighted average of |accuracy - mean confidence|; empty bins carry
// zero weight.
inline double ece(const PredictionSet& preds, int m_bins) {
  if (preds.size() == 0) throw invalid_input("empty prediction set");
  const double n = static_cast<double>(preds.size());
  double sum = 0.0;
  for (const BinStats& row : reliability_table(preds, m_bins))
    sum += (static_cast<double>(row.count) / n) *
           std::fabs(row.accuracy - row.mean_confidence);
  return sum;
}

// Largest per-bin |accuracy - mean confidence| over non-empty bins.
inline double mce(const PredictionSet& preds, int m_bins) {
  if (preds.size() == 0) throw invalid_input("empty prediction set");
  double worst = 0.0;
  for (const BinStats& row : reliability_table(preds, m_bins))
    worst = std::max(worst, std::fabs(row.accuracy - row.mean_confidence));
  return worst;
}

inline CalibrationReport evaluate(const PredictionSet& preds, int m_bins) {
  if (preds.size() == 0) throw invalid_input("empty prediction set");
  CalibrationReport report;
  report.m_bins = m_bins;
  report.bins = reliability_table(preds, m_bins);
  const double n = static_cast<double>(preds.size());
  double sum = 0.0;
  double worst = 0.0;
  for (const BinStats& row : report.bins) {
    double gap = std::fabs(row.accuracy - row.mean_confidence);
    sum += (static_cast<double>(row.count) / n) * gap;
    worst = std::max(worst, gap);
  }
  report.ece = sum;
  report.mce = worst;
  report.accuracy = accuracy(preds);
  report.nll = nll(preds);
  return report;
}

}  // namespace calib
