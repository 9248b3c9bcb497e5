#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "calib/dataset.hpp"
#include "calib/errors.hpp"
#include "calib/nn.hpp"
#include "calib/rng.hpp"
#include "calib/temperature.hpp"

namespace calib {

// 1-D binary task: x ~ Uniform(-2, 2), y ~ Bernoulli(curve.p1(x)).
// Internal classes: 1 = negative (file label 0), 2 = positive (file label 1).
inline Dataset gen_toy1d(std::size_t n, std::uint64_t seed,
                         const GroundTruthCurve& curve = {}) {
  if (n < 1) throw invalid_input("gen_toy1d: n must be >= 1");
  Dataset data;
  data.k = 2;
  data.ground_truth = curve;
  Rng rng(seed);
  data.inputs.reserve(n);
  data.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    const bool positive = rng.bernoulli(curve.p1(x));
    data.inputs.push_back({x});
    data.labels.push_back(positive ? 2 : 1);
  }
  data.meta["generator"] = "toy1d";
  data.meta["seed"] = std::to_string(seed);
  data.meta["curve"] = curve.describe();
  data.meta["rng"] = Rng::kGeneratorId;
  return data;
}

namespace detail {

// Class centers at the given radius on a seeded random frame. dim == 1
// spreads them evenly on [-r, r]; otherwise they sit evenly on a circle
// inside a random 2-plane with a random phase.
inline std::vector<std::vector<double>> blob_centers(int k, double radius,
                                                     int dim, Rng& rng) {
  std::vector<std::vector<double>> centers(
      static_cast<std::size_t>(k),
      std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  if (dim == 1) {
    for (int c = 0; c < k; ++c)
      centers[static_cast<std::size_t>(c)][0] =
          -radius + 2.0 * radius * c / (k - 1);
    return centers;
  }
  std::vector<double> u(static_cast<std::size_t>(dim)), v(u.size());
  for (double& x : u) x = rng.normal();
  double nu = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  for (double& x : u) x /= nu;
  for (double& x : v) x = rng.normal();
  double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * u[i];
  double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  for (double& x : v) x /= nv;
  const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  for (int c = 0; c < k; ++c) {
    const double theta = phase + 2.0 * 3.14159265358979323846 * c / k;
    for (std::size_t i = 0; i < u.size(); ++i)
      centers[static_cast<std::size_t>(c)][i] =
          radius * (std::cos(theta) * u[i] + std::sin(theta) * v[i]);
  }
  return centers;
}

}  // namespace detail

// Exactly balanced unit-variance Gaussian clusters, emitted round-robin
// over classes so any prefix stays close to balanced.
inline Dataset gen_blobs(int k, std::size_t n_per_class, double separation,
                         int dim, std::uint64_t seed) {
  if (k < 2) throw invalid_input("gen_blobs: k must be >= 2");
  if (n_per_class < 1) throw invalid_input("gen_blobs: n_per_class >= 1");
  if (dim < 1) throw invalid_input("gen_blobs: dim must be >= 1");
  Dataset data;
  data.k = k;
  Rng rng(seed);
  const auto centers = detail::blob_centers(k, separation, dim, rng);
  const std::size_t n = n_per_class * static_cast<std::size_t>(k);
  data.inputs.reserve(n);
  data.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(k));
    std::vector<double> point(static_cast<std::size_t>(dim));
    for (std::size_t d = 0; d < point.size(); ++d)
      point[d] = centers[static_cast<std::size_t>(cls)][d] + rng.normal();
    data.inputs.push_back(std::move(point));
    data.labels.push_back(cls + 1);
  }
  data.meta["generator"] = "blobs";
  data.meta["seed"] = std::to_string(seed);
  data.meta["separation"] = std::to_string(separation);
  data.meta["rng"] = Rng::kGeneratorId;
  return data;
}

// Seeded permutation split. Every class present in `data` must land in the
// train part; the shuffle is retried up to 100 times before giving up.
inline std::pair<Dataset, Dataset> split(const Dataset& data,
                                         double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw invalid_input("test_fraction must be in (0, 1)");
  const std::size_t n = data.size();
  if (n < 2) throw invalid_input("split: need at least 2 samples");
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  const std::set<int> all_classes(data.labels.begin(), data.labels.end());
  std::vector<std::size_t> order(n);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(seed + static_cast<std::uint64_t>(attempt));
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::set<int> train_classes;
    for (std::size_t i = n_test; i < n; ++i)
      train_classes.insert(data.labels[order[i]]);
    if (train_classes != all_classes) continue;

    Dataset train, test;
    train.k = test.k = data.k;
    train.ground_truth = test.ground_truth = data.ground_truth;
    train.meta = test.meta = data.meta;
    for (std::size_t i = 0; i < n_test; ++i) {
      test.inputs.push_back(data.inputs[order[i]]);
      test.labels.push_back(data.labels[order[i]]);
    }
    for (std::size_t i = n_test; i < n; ++i) {
      train.inputs.push_back(data.inputs[order[i]]);
      train.labels.push_back(data.labels[order[i]]);
    }
    return {std::move(train), std::move(test)};
  }
  throw invalid_input("split: could not keep every class in the train part");
}

// One grid point of the recovered 1-D probability curve.
struct CurvePoint {
  double x = 0.0;
  double predicted = 0.0;  // model P(positive | x), after optional scaling
  double truth = 0.0;      // curve P(y = 1 | x)
};

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = lo + (hi - lo) * static_cast<double>(i) /
                       static_cast<double>(points - 1);
  return grid;
}

// Evaluates the model's positive-class probability over a grid, paired with
// the ground truth. The positive class is internal class 2 (file label 1).
inline std::vector<CurvePoint> recover_curve(const MlpModel& model,
                                             std::optional<double> temperature,
                                             const std::vector<double>& grid,
                                             const GroundTruthCurve& curve) {
  if (model.input_dim != 1)
    throw invalid_input("recover_curve: model must take 1-D inputs");
  if (grid.empty()) throw invalid_input("recover_curve: empty grid");
  std::vector<CurvePoint> points;
  points.reserve(grid.size());
  for (double x : grid) {
    const LogitVector logits = forward(model, {{x}})[0];
    const ProbVector probs = temperature ? apply_temperature(logits, *temperature)
                                         : softmax(logits);
    points.push_back(CurvePoint{x, probs[1], curve.p1(x)});
  }
  return points;
}

// Mean absolute deviation between recovered and true curve; the score used
// to compare recovery quality across methods.
inline double curve_score(const std::vector<CurvePoint>& points) {
  double sum = 0.0;
  for (const CurvePoint& p : points) sum += std::fabs(p.predicted - p.truth);
  return sum / static_cast<double>(points.size());
}

}  // namespace calib
