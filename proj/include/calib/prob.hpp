#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "calib/errors.hpp"

namespace calib {

// Raw class scores, length K >= 2, any finite reals.
using LogitVector = std::vector<double>;

// Normalized class probabilities: entries >= 0, summing to 1 within 1e-9.
using ProbVector = std::vector<double>;

inline constexpr double kProbSumTolerance = 1e-9;

// One classified sample. Class labels are 1-based throughout the library
// ({1..K}); file formats use 0-based labels and convert at the boundary.
struct Prediction {
  int label = 0;            // argmax class, lowest index on exact ties
  double confidence = 0.0;  // max probability, in [1/K, 1]
  ProbVector probs;
};

// A set of classified samples with their ground-truth labels.
struct PredictionSet {
  std::vector<Prediction> predictions;
  std::vector<int> true_labels;  // 1-based, same length as predictions

  std::size_t size() const { return predictions.size(); }

  int class_count() const {
    return predictions.empty() ? 0
                               : static_cast<int>(predictions[0].probs.size());
  }

  bool correct(std::size_t i) const {
    return predictions[i].label == true_labels[i];
  }
};

// Equal-width confidence bins: bin m (1-based) covers ((m-1)/M, m/M].
// A confidence of exactly 0 is clamped into bin 1.
struct BinPartition {
  int m_bins = 0;
  std::vector<std::vector<std::size_t>> membership;  // [bin-1] -> sample ids

  double lower(int bin) const {
    return static_cast<double>(bin - 1) / m_bins;
  }
  double upper(int bin) const { return static_cast<double>(bin) / m_bins; }
};

inline void validate_probs(const ProbVector& probs) {
  if (probs.size() < 2) throw invalid_input("probability vector needs K >= 2");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw invalid_input("probability entry outside [0, 1]");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > kProbSumTolerance)
    throw invalid_input("probabilities do not sum to 1");
}

// Exp-normalize with max subtraction so large logits cannot overflow.
inline ProbVector softmax(const LogitVector& logits) {
  if (logits.size() < 2) throw invalid_input("softmax needs K >= 2 logits");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw invalid_input("softmax: non-finite logit");
    zmax = std::max(zmax, z);
  }
  ProbVector out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - zmax);
    sum += out[k];
  }
  for (double& p : out) p /= sum;
  return out;
}

// Argmax prediction; exact ties resolve to the lowest class index.
inline Prediction predict(const ProbVector& probs) {
  validate_probs(probs);
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[best]) best = k;
  return Prediction{static_cast<int>(best) + 1, probs[best], probs};
}

inline Prediction predict_from_logits(const LogitVector& logits) {
  return predict(softmax(logits));
}

// Bin index (1-based) of a confidence under the half-open interval rule.
// The ceil shortcut is corrected against the interval arithmetic itself so
// membership always satisfies (m-1)/M < p <= m/M exactly as computed in
// floating point.
inline int bin_of(double confidence, int m_bins) {
  if (m_bins < 1) throw invalid_input("bin count must be >= 1");
  if (!(confidence >= 0.0 && confidence <= 1.0))
    throw invalid_input("confidence outside [0, 1]");
  int m = static_cast<int>(std::ceil(confidence * m_bins));
  m = std::clamp(m, 1, m_bins);
  while (m > 1 && confidence <= static_cast<double>(m - 1) / m_bins) --m;
  while (m < m_bins && confidence > static_cast<double>(m) / m_bins) ++m;
  return m;
}

// Assigns every sample to exactly one bin; empty bins are retained.
inline BinPartition partition(const PredictionSet& preds, int m_bins) {
  if (m_bins < 1) throw invalid_input("bin count must be >= 1");
  BinPartition part;
  part.m_bins = m_bins;
  part.membership.resize(static_cast<std::size_t>(m_bins));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int m = bin_of(preds.predictions[i].confidence, m_bins);
    part.membership[static_cast<std::size_t>(m - 1)].push_back(i);
  }
  return part;
}

// Builds a PredictionSet from raw logits and 1-based true labels.
inline PredictionSet make_prediction_set(const std::vector<LogitVector>& logits,
                                         const std::vector<int>& true_labels) {
  if (logits.size() != true_labels.size())
    throw invalid_input("logits and labels differ in length");
  if (logits.empty()) throw invalid_input("empty prediction set");
  PredictionSet set;
  set.predictions.reserve(logits.size());
  set.true_labels = true_labels;
  const std::size_t k = logits[0].size();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i].size() != k)
      throw invalid_input("inconsistent class count across samples");
    set.predictions.push_back(predict_from_logits(logits[i]));
    int y = true_labels[i];
    if (y < 1 || y > static_cast<int>(k))
      throw invalid_input("true label outside {1..K}");
  }
  return set;
}

}  // namespace calib
