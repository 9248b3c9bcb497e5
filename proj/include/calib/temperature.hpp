#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "calib/errors.hpp"
#include "calib/metrics.hpp"
#include "calib/prob.hpp"

namespace calib {

// Result of fitting a single scalar temperature on held-out logits.
struct TemperatureScaler {
  double t = 1.0;
  double fit_nll = 0.0;  // objective value at t on the fitting set
  std::vector<std::pair<double, double>> search_trace;  // (t, objective)
};

enum class TemperatureObjective { Nll, Ece };

struct TemperatureFitOptions {
  double t_min = 0.05;
  double t_max = 20.0;
  int grid_points = 60;     // coarse log-spaced pass
  double tolerance = 1e-4;  // absolute tolerance on t for the refinement
  TemperatureObjective objective = TemperatureObjective::Nll;
  int ece_bins = 10;  // used only by the Ece objective
};

// softmax(logits / t); t = 1 is the same code path as plain softmax.
inline ProbVector apply_temperature(const LogitVector& logits, double t) {
  if (!(t > 0.0)) throw invalid_input("temperature must be > 0");
  if (t == 1.0) return softmax(logits);
  LogitVector scaled(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) scaled[k] = logits[k] / t;
  return softmax(scaled);
}

inline PredictionSet make_prediction_set(const std::vector<LogitVector>& logits,
                                         const std::vector<int>& true_labels,
                                         double temperature) {
  if (logits.size() != true_labels.size())
    throw invalid_input("logits and labels differ in length");
  if (logits.empty()) throw invalid_input("empty prediction set");
  PredictionSet set;
  set.predictions.reserve(logits.size());
  set.true_labels = true_labels;
  for (const LogitVector& z : logits)
    set.predictions.push_back(predict(apply_temperature(z, temperature)));
  return set;
}

inline double nll_at_temperature(const std::vector<LogitVector>& logits,
                                 const std::vector<int>& labels, double t) {
  return nll(make_prediction_set(logits, labels, t));
}

namespace detail {

inline double temperature_objective(const std::vector<LogitVector>& logits,
                                    const std::vector<int>& labels, double t,
                                    const TemperatureFitOptions& opts) {
  const PredictionSet set = make_prediction_set(logits, labels, t);
  return opts.objective == TemperatureObjective::Nll ? nll(set)
                                                     : ece(set, opts.ece_bins);
}

}  // namespace detail

// Minimizes the validation objective over t: a coarse log-spaced grid pass
// followed by golden-section refinement of the best bracket. t = 1 is always
// evaluated, so the fitted objective can never be worse than no scaling.
inline TemperatureScaler fit_temperature(
    const std::vector<LogitVector>& val_logits,
    const std::vector<int>& val_labels,
    const TemperatureFitOptions& opts = {}) {
  if (val_logits.empty()) throw invalid_input("empty validation set");
  if (val_logits.size() != val_labels.size())
    throw invalid_input("logits and labels differ in length");
  if (!(opts.t_min > 0.0 && opts.t_max > opts.t_min))
    throw invalid_input("bad temperature search range");

  TemperatureScaler scaler;
  auto objective = [&](double t) {
    double value = detail::temperature_objective(val_logits, val_labels, t, opts);
    scaler.search_trace.emplace_back(t, value);
    return value;
  };

  // Coarse pass: log-spaced grid plus t = 1 when it lies in range.
  std::vector<double> grid;
  const double log_lo = std::log(opts.t_min);
  const double log_hi = std::log(opts.t_max);
  for (int i = 0; i < opts.grid_points; ++i)
    grid.push_back(std::exp(log_lo + (log_hi - log_lo) * i /
                            (opts.grid_points - 1)));
  if (opts.t_min <= 1.0 && 1.0 <= opts.t_max) grid.push_back(1.0);

  double best_t = grid[0];
  double best_value = objective(grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double value = objective(grid[i]);
    if (value < best_value) {
      best_value = value;
      best_t = grid[i];
    }
  }

  // Refine within the neighbors of the best grid point.
  double lo = opts.t_min;
  double hi = opts.t_max;
  for (double t : grid) {
    if (t < best_t && t > lo) lo = t;
    if (t > best_t && t < hi) hi = t;
  }
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - golden * (b - a);
  double x2 = a + golden * (b - a);
  double f1 = objective(x1);
  double f2 = objective(x2);
  while (b - a > opts.tolerance) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - golden * (b - a);
      f1 = objective(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + golden * (b - a);
      f2 = objective(x2);
    }
  }
  const double refined = 0.5 * (a + b);
  const double refined_value = objective(refined);

  scaler.t = best_t;
  scaler.fit_nll = best_value;
  if (refined_value < scaler.fit_nll) {
    scaler.t = refined;
    scaler.fit_nll = refined_value;
  }
  return scaler;
}

}  // namespace calib
