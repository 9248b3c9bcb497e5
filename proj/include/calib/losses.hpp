#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "calib/errors.hpp"
#include "calib/metrics.hpp"
#include "calib/prob.hpp"

namespace calib {

enum class LossKind { CrossEntropy, Dca, EntropyPenalty, LabelSmoothing, Mmce };

inline const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Dca: return "dca";
    case LossKind::EntropyPenalty: return "entropy";
    case LossKind::LabelSmoothing: return "smoothing";
    case LossKind::Mmce: return "mmce";
  }
  return "?";
}

// Selects the training objective. beta weights the auxiliary term for
// Dca / EntropyPenalty / Mmce; alpha is the smoothing amount for
// LabelSmoothing. Unused fields are ignored per kind.
struct LossSpec {
  LossKind kind = LossKind::CrossEntropy;
  double beta = 0.0;
  double alpha = 0.0;
  double mmce_kernel_width = 0.4;
  // The entropy term enters as a confidence penalty (CE - beta * H).
  // Setting this flips it to CE + beta * H, which rewards low entropy.
  bool entropy_reward = false;
};

// One training mini-batch: per-sample logits plus 1-based true labels.
struct Batch {
  std::vector<LogitVector> logits;
  std::vector<int> labels;

  std::size_t size() const { return logits.size(); }
};

// Loss value split into its cross-entropy and auxiliary parts, plus the
// gradient of the total w.r.t. every logit (1/N normalization included).
struct BatchLossResult {
  double total = 0.0;
  double ce_part = 0.0;
  double aux_part = 0.0;  // raw auxiliary value, before the beta weight
  std::vector<LogitVector> grad_logits;
  bool mmce_fallback = false;  // degenerate batch fell back to CE only
};

// Mean negative log true-class probability with gradient w.r.t. the logits
// that generated `probs` (i.e. (softmax - onehot) / N per sample).
inline BatchLossResult cross_entropy(const std::vector<ProbVector>& probs,
                                     const std::vector<int>& labels) {
  if (probs.empty()) throw empty_batch("cross_entropy: empty batch");
  if (probs.size() != labels.size())
    throw invalid_input("cross_entropy: probs/labels length mismatch");
  const std::size_t n = probs.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  BatchLossResult result;
  result.grad_logits.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i] - 1);
    if (y >= probs[i].size())
      throw invalid_input("cross_entropy: label outside {1..K}");
    sum -= std::log(std::max(probs[i][y], kNllProbFloor));
    result.grad_logits[i].resize(probs[i].size());
    for (std::size_t k = 0; k < probs[i].size(); ++k)
      result.grad_logits[i][k] =
          (probs[i][k] - (k == y ? 1.0 : 0.0)) * inv_n;
  }
  result.ce_part = result.total = sum * inv_n;
  return result;
}

// |mean correctness - mean predicted-class confidence| over the batch.
inline double dca(const std::vector<Prediction>& preds,
                  const std::vector<int>& labels) {
  if (preds.empty()) throw empty_batch("dca: empty batch");
  if (preds.size() != labels.size())
    throw invalid_input("dca: preds/labels length mismatch");
  double acc = 0.0;
  double conf = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    acc += preds[i].label == labels[i] ? 1.0 : 0.0;
    conf += preds[i].confidence;
  }
  const double n = static_cast<double>(preds.size());
  return std::fabs(acc / n - conf / n);
}

namespace detail {

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Softmax Jacobian row of the predicted class: d p_yhat / d z_k.
inline void add_predicted_prob_grad(const ProbVector& p, std::size_t yhat,
                                    double coeff, LogitVector& grad) {
  const double p_hat = p[yhat];
  for (std::size_t k = 0; k < p.size(); ++k)
    grad[k] += coeff * p_hat * ((k == yhat ? 1.0 : 0.0) - p[k]);
}

}  // namespace detail

// Gradient of the raw DCA term w.r.t. logits. The accuracy mean is treated
// as a constant (no gradient through the argmax), so only the confidence
// mean is differentiated; the subgradient at DCA = 0 is the zero vector.
inline std::vector<LogitVector> dca_gradient(
    const std::vector<ProbVector>& probs, const std::vector<int>& labels) {
  if (probs.empty()) throw empty_batch("dca_gradient: empty batch");
  const std::size_t n = probs.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<std::size_t> yhat(n);
  double acc = 0.0;
  double conf = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Prediction pred = predict(probs[i]);
    yhat[i] = static_cast<std::size_t>(pred.label - 1);
    acc += pred.label == labels[i] ? 1.0 : 0.0;
    conf += pred.confidence;
  }
  const double s = detail::sign_of(acc * inv_n - conf * inv_n);
  std::vector<LogitVector> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i].assign(probs[i].size(), 0.0);
    detail::add_predicted_prob_grad(probs[i], yhat[i], -s * inv_n, grad[i]);
  }
  return grad;
}

// Soft targets: the true class gets 1 - alpha + alpha/K, the rest alpha/K.
inline std::vector<ProbVector> smooth_targets(const std::vector<int>& labels,
                                              int k, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw invalid_input("smoothing amount must be in [0, 1]");
  if (k < 2) throw invalid_input("smooth_targets: K >= 2 required");
  const double off = alpha / static_cast<double>(k);
  std::vector<ProbVector> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > k)
      throw invalid_input("smooth_targets: label outside {1..K}");
    targets[i].assign(static_cast<std::size_t>(k), off);
    targets[i][static_cast<std::size_t>(labels[i] - 1)] = 1.0 - alpha + off;
  }
  return targets;
}

// Shannon entropy, -sum p log p, with 0 log 0 = 0.
inline double entropy_of(const ProbVector& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// Correctness/confidence view of a batch for the pairwise kernel penalty.
// The weighted form needs both a correct and an incorrect prediction.
struct MmceBatch {
  std::vector<int> correctness;     // c_i in {0, 1}
  std::vector<double> confidences;  // predicted-class probabilities
  std::size_t n_batch = 0;
  std::size_t n_correct = 0;
};

inline MmceBatch make_mmce_batch(const std::vector<Prediction>& preds,
                                 const std::vector<int>& labels) {
  if (preds.empty()) throw empty_batch("mmce: empty batch");
  MmceBatch batch;
  batch.n_batch = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int c = preds[i].label == labels[i] ? 1 : 0;
    batch.correctness.push_back(c);
    batch.confidences.push_back(preds[i].confidence);
    batch.n_correct += static_cast<std::size_t>(c);
  }
  return batch;
}

namespace detail {

inline double laplacian_kernel(double a, double b, double width) {
  return std::exp(-std::fabs(a - b) / width);
}

}  // namespace detail

// Squared weighted pairwise calibration penalty over all ordered pairs,
// Laplacian kernel k(p, q) = exp(-|p - q| / width). Incorrect-incorrect
// pairs are weighted by 1/n_incorrect^2, correct-correct by 1/n_correct^2
// and cross pairs by 1/(n_incorrect * n_correct). Clamped at zero; the
// square root is taken by composite_loss.
inline double mmce_weighted(const MmceBatch& batch, double kernel_width) {
  if (batch.n_batch == 0) throw empty_batch("mmce: empty batch");
  if (batch.n_correct == 0 || batch.n_correct == batch.n_batch)
    throw degenerate_batch("mmce: batch is all-correct or all-incorrect");
  if (!(kernel_width > 0.0)) throw invalid_input("kernel width must be > 0");
  const double n_cor = static_cast<double>(batch.n_correct);
  const double n_inc = static_cast<double>(batch.n_batch - batch.n_correct);
  double sum_ii = 0.0, sum_cc = 0.0, sum_ci = 0.0;
  for (std::size_t i = 0; i < batch.n_batch; ++i) {
    for (std::size_t j = 0; j < batch.n_batch; ++j) {
      const double k = detail::laplacian_kernel(batch.confidences[i],
                                                batch.confidences[j],
                                                kernel_width);
      const double pi = batch.confidences[i];
      const double pj = batch.confidences[j];
      if (batch.correctness[i] == 0 && batch.correctness[j] == 0)
        sum_ii += pi * pj * k;
      else if (batch.correctness[i] == 1 && batch.correctness[j] == 1)
        sum_cc += (1.0 - pi) * (1.0 - pj) * k;
      else if (batch.correctness[i] == 1 && batch.correctness[j] == 0)
        sum_ci += (1.0 - pi) * pj * k;
    }
  }
  const double value = sum_ii / (n_inc * n_inc) + sum_cc / (n_cor * n_cor) -
                       2.0 * sum_ci / (n_inc * n_cor);
  return std::max(0.0, value);
}

namespace detail {

// Value of sqrt(max(0, mmce_w^2)) together with its derivative w.r.t. each
// confidence. Correctness indicators are constants (no gradient through the
// argmax); at a clamped or zero value the subgradient is zero.
inline std::pair<double, std::vector<double>> mmce_sqrt_with_grad(
    const MmceBatch& batch, double kernel_width) {
  const double s_clamped = mmce_weighted(batch, kernel_width);
  const std::size_t n = batch.n_batch;
  std::vector<double> grad(n, 0.0);
  if (s_clamped <= 0.0) return {0.0, grad};
  const double root = std::sqrt(s_clamped);
  const double n_cor = static_cast<double>(batch.n_correct);
  const double n_inc = static_cast<double>(n - batch.n_correct);
  const double w_ii = 1.0 / (n_inc * n_inc);
  const double w_cc = 1.0 / (n_cor * n_cor);
  const double w_ic = 1.0 / (n_inc * n_cor);
  for (std::size_t t = 0; t < n; ++t) {
    const double pt = batch.confidences[t];
    double ds = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double pj = batch.confidences[j];
      const double k = laplacian_kernel(pt, pj, kernel_width);
      const double s_tj = sign_of(pt - pj);
      if (batch.correctness[t] == 0) {
        if (batch.correctness[j] == 0)
          ds += 2.0 * w_ii * pj * k * (1.0 - pt * s_tj / kernel_width);
        else
          ds -= 2.0 * w_ic * (1.0 - pj) * k *
                (1.0 - pt * s_tj / kernel_width);
      } else {
        if (batch.correctness[j] == 1)
          ds -= 2.0 * w_cc * (1.0 - pj) * k *
                (1.0 + (1.0 - pt) * s_tj / kernel_width);
        else
          ds += 2.0 * w_ic * pj * k *
                (1.0 + (1.0 - pt) * s_tj / kernel_width);
      }
    }
    grad[t] = ds / (2.0 * root);
  }
  return {root, grad};
}

}  // namespace detail

// Dispatches the configured objective over one batch. A zero weight
// (beta = 0 or alpha = 0) reduces to plain cross-entropy exactly. An
// Mmce batch that is all-correct or all-incorrect falls back to plain
// cross-entropy for that batch and flags the result.
inline BatchLossResult composite_loss(const LossSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw empty_batch("composite_loss: empty batch");
  if (batch.logits.size() != batch.labels.size())
    throw invalid_input("composite_loss: logits/labels length mismatch");
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<ProbVector> probs(n);
  std::vector<Prediction> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = softmax(batch.logits[i]);
    preds[i] = predict(probs[i]);
  }

  BatchLossResult result = cross_entropy(probs, batch.labels);

  switch (spec.kind) {
    case LossKind::CrossEntropy:
      break;

    case LossKind::Dca: {
      if (spec.beta == 0.0) break;
      result.aux_part = dca(preds, batch.labels);
      result.total = result.ce_part + spec.beta * result.aux_part;
      const std::vector<LogitVector> aux_grad =
          dca_gradient(probs, batch.labels);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < probs[i].size(); ++k)
          result.grad_logits[i][k] += spec.beta * aux_grad[i][k];
      break;
    }

    case LossKind::EntropyPenalty: {
      if (spec.beta == 0.0) break;
      const double sign = spec.entropy_reward ? 1.0 : -1.0;
      double mean_h = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean_h += entropy_of(probs[i]);
      mean_h *= inv_n;
      result.aux_part = mean_h;
      result.total = result.ce_part + sign * spec.beta * mean_h;
      for (std::size_t i = 0; i < n; ++i) {
        const double h = entropy_of(probs[i]);
        for (std::size_t k = 0; k < probs[i].size(); ++k) {
          const double p = probs[i][k];
          if (p > 0.0)
            result.grad_logits[i][k] +=
                sign * spec.beta * inv_n * (-p * (std::log(p) + h));
        }
      }
      break;
    }

    case LossKind::LabelSmoothing: {
      if (spec.alpha == 0.0) break;
      const int k_classes = static_cast<int>(probs[0].size());
      const std::vector<ProbVector> targets =
          smooth_targets(batch.labels, k_classes, spec.alpha);
      double smoothed = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < probs[i].size(); ++k) {
          if (targets[i][k] > 0.0)
            smoothed -= targets[i][k] *
                        std::log(std::max(probs[i][k], kNllProbFloor));
          result.grad_logits[i][k] = (probs[i][k] - targets[i][k]) * inv_n;
        }
      }
      result.total = smoothed * inv_n;
      result.aux_part = result.total - result.ce_part;
      break;
    }

    case LossKind::Mmce: {
      if (spec.beta == 0.0) break;
      const MmceBatch mmce_batch = make_mmce_batch(preds, batch.labels);
      if (mmce_batch.n_correct == 0 ||
          mmce_batch.n_correct == mmce_batch.n_batch) {
        result.mmce_fallback = true;
        break;
      }
      const auto [root, conf_grad] =
          detail::mmce_sqrt_with_grad(mmce_batch, spec.mmce_kernel_width);
      result.aux_part = root;
      result.total = result.ce_part + spec.beta * root;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t yhat = static_cast<std::size_t>(preds[i].label - 1);
        detail::add_predicted_prob_grad(probs[i], yhat,
                                        spec.beta * conf_grad[i],
                                        result.grad_logits[i]);
      }
      break;
    }
  }
  return result;
}

}  // namespace calib
