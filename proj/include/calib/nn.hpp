#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "calib/dataset.hpp"
#include "calib/errors.hpp"
#include "calib/losses.hpp"
#include "calib/metrics.hpp"
#include "calib/prob.hpp"
#include "calib/rng.hpp"
#include "calib/temperature.hpp"

namespace calib {

inline constexpr double kLeakyReluSlope = 0.01;

enum class Activation { LeakyRelu, Identity };

struct Layer {
  int in = 0;
  int out = 0;
  Activation act = Activation::Identity;
  std::vector<double> w;  // row-major, out x in
  std::vector<double> b;  // out
};

// Dense network; the final layer is Identity and emits logits.
struct MlpModel {
  std::vector<Layer> layers;
  int input_dim = 0;
  int class_count = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

// Seeded Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero
// biases. Hidden layers use LeakyReLU, the output layer Identity.
inline MlpModel make_mlp(int input_dim, const std::vector<int>& hidden, int k,
                         std::uint64_t seed) {
  if (input_dim < 1) throw invalid_input("input_dim must be >= 1");
  if (k < 2) throw invalid_input("class count must be >= 2");
  MlpModel model;
  model.input_dim = input_dim;
  model.class_count = k;
  Rng rng(seed);
  int in = input_dim;
  std::vector<int> widths = hidden;
  widths.push_back(k);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    Layer layer;
    layer.in = in;
    layer.out = widths[l];
    layer.act = l + 1 == widths.size() ? Activation::Identity
                                       : Activation::LeakyRelu;
    const double limit = std::sqrt(6.0 / (layer.in + layer.out));
    layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
    for (double& w : layer.w) w = rng.uniform(-limit, limit);
    layer.b.assign(static_cast<std::size_t>(layer.out), 0.0);
    model.layers.push_back(std::move(layer));
    in = widths[l];
  }
  return model;
}

namespace detail {

inline double activate(double z, Activation act) {
  return act == Activation::LeakyRelu ? (z > 0.0 ? z : kLeakyReluSlope * z)
                                      : z;
}

inline double activate_grad(double z, Activation act) {
  return act == Activation::LeakyRelu ? (z > 0.0 ? 1.0 : kLeakyReluSlope)
                                      : 1.0;
}

}  // namespace detail

// Layer-by-layer batch evaluation keeping everything backward needs:
// post[0] is the input batch, post[l + 1] = act(pre[l]).
struct ForwardCache {
  std::vector<std::vector<std::vector<double>>> post;
  std::vector<std::vector<std::vector<double>>> pre;

  const std::vector<std::vector<double>>& logits() const {
    return post.back();
  }
};

inline ForwardCache forward_cached(
    const MlpModel& model, const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) throw invalid_input("forward: empty batch");
  for (const auto& row : inputs)
    if (static_cast<int>(row.size()) != model.input_dim)
      throw invalid_input("forward: input width != input_dim");
  const std::size_t n = inputs.size();
  ForwardCache cache;
  cache.post.push_back(inputs);
  for (const Layer& layer : model.layers) {
    const auto& prev = cache.post.back();
    std::vector<std::vector<double>> pre(n, std::vector<double>(layer.out));
    std::vector<std::vector<double>> post(n, std::vector<double>(layer.out));
    for (std::size_t s = 0; s < n; ++s) {
      for (int r = 0; r < layer.out; ++r) {
        double z = layer.b[static_cast<std::size_t>(r)];
        const double* wrow = layer.w.data() +
                             static_cast<std::size_t>(r) * layer.in;
        for (int c = 0; c < layer.in; ++c)
          z += wrow[c] * prev[s][static_cast<std::size_t>(c)];
        pre[s][static_cast<std::size_t>(r)] = z;
        post[s][static_cast<std::size_t>(r)] = detail::activate(z, layer.act);
      }
    }
    cache.pre.push_back(std::move(pre));
    cache.post.push_back(std::move(post));
  }
  return cache;
}

inline std::vector<LogitVector> forward(
    const MlpModel& model, const std::vector<std::vector<double>>& inputs) {
  return forward_cached(model, inputs).post.back();
}

struct Gradients {
  std::vector<std::vector<double>> dw;  // per layer, row-major out x in
  std::vector<std::vector<double>> db;  // per layer, out
};

// Reverse-mode gradients of the batch loss w.r.t. every weight and bias,
// given the loss gradient w.r.t. the logits (which already carries the 1/N
// batch normalization).
inline Gradients backward(const MlpModel& model, const ForwardCache& cache,
                          const std::vector<LogitVector>& grad_logits) {
  const std::size_t n = grad_logits.size();
  Gradients grads;
  grads.dw.resize(model.layers.size());
  grads.db.resize(model.layers.size());
  std::vector<std::vector<double>> delta = grad_logits;  // d loss / d post[l+1]
  for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
    const Layer& layer = model.layers[static_cast<std::size_t>(l)];
    const auto& pre = cache.pre[static_cast<std::size_t>(l)];
    const auto& below = cache.post[static_cast<std::size_t>(l)];
    auto& dw = grads.dw[static_cast<std::size_t>(l)];
    auto& db = grads.db[static_cast<std::size_t>(l)];
    dw.assign(layer.w.size(), 0.0);
    db.assign(layer.b.size(), 0.0);
    std::vector<std::vector<double>> delta_below(
        n, std::vector<double>(static_cast<std::size_t>(layer.in), 0.0));
    for (std::size_t s = 0; s < n; ++s) {
      for (int r = 0; r < layer.out; ++r) {
        const double dpre =
            delta[s][static_cast<std::size_t>(r)] *
            detail::activate_grad(pre[s][static_cast<std::size_t>(r)],
                                  layer.act);
        db[static_cast<std::size_t>(r)] += dpre;
        double* dwrow = dw.data() + static_cast<std::size_t>(r) * layer.in;
        const double* wrow = layer.w.data() +
                             static_cast<std::size_t>(r) * layer.in;
        for (int c = 0; c < layer.in; ++c) {
          dwrow[c] += dpre * below[s][static_cast<std::size_t>(c)];
          delta_below[s][static_cast<std::size_t>(c)] += dpre * wrow[c];
        }
      }
    }
    delta = std::move(delta_below);
  }
  return grads;
}

// Standard Adam with bias correction; (0.9, 0.999, 1e-8) are fixed.
struct AdamState {
  std::vector<std::vector<double>> mw, vw, mb, vb;
  long step = 0;
};

inline AdamState make_adam_state(const MlpModel& model) {
  AdamState state;
  for (const Layer& layer : model.layers) {
    state.mw.emplace_back(layer.w.size(), 0.0);
    state.vw.emplace_back(layer.w.size(), 0.0);
    state.mb.emplace_back(layer.b.size(), 0.0);
    state.vb.emplace_back(layer.b.size(), 0.0);
  }
  return state;
}

inline void adam_step(MlpModel& model, const Gradients& grads,
                      AdamState& state, double learning_rate) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& params, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      params[i] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].w, grads.dw[l], state.mw[l], state.vw[l]);
    update(model.layers[l].b, grads.db[l], state.mb[l], state.vb[l]);
  }
}

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double learning_rate = 0.0001;
  std::uint64_t seed = 1;
  LossSpec loss;
  bool shuffle = true;
};

struct EpochRecord {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

struct TrainingTrace {
  std::vector<EpochRecord> epochs;
  CalibrationReport final_report;  // test set, at the requested bin count
  std::size_t mmce_fallback_batches = 0;
};

inline PredictionSet predictions_of(const MlpModel& model,
                                    const Dataset& data,
                                    double temperature = 1.0) {
  return make_prediction_set(forward(model, data.inputs), data.labels,
                             temperature);
}

namespace detail {

// Full-set loss and accuracy under the configured objective.
inline std::pair<double, double> dataset_loss_acc(const MlpModel& model,
                                                  const Dataset& data,
                                                  const LossSpec& spec) {
  Batch batch{forward(model, data.inputs), data.labels};
  const BatchLossResult loss = composite_loss(spec, batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (predict_from_logits(batch.logits[i]).label == batch.labels[i])
      ++correct;
  return {loss.total,
          static_cast<double>(correct) / static_cast<double>(batch.size())};
}

}  // namespace detail

// Mini-batch training with seeded shuffling. The per-epoch trace records
// the full-set composite loss and accuracy at epoch end, so every trace
// row can be reproduced from the epoch-end parameters alone. The ragged
// last batch is kept; batch means use the true batch size.
inline TrainingTrace train(MlpModel& model, const Dataset& train_set,
                           const Dataset& test_set, const TrainConfig& config,
                           int report_bins = 10) {
  if (config.epochs < 1) throw invalid_input("epochs must be >= 1");
  if (config.batch_size < 1) throw invalid_input("batch_size must be >= 1");
  // learning_rate == 0 is a valid no-op configuration.
  if (!(config.learning_rate >= 0.0))
    throw invalid_input("learning_rate must be >= 0");
  if (train_set.size() == 0 || test_set.size() == 0)
    throw invalid_input("train and test sets must be non-empty");
  const std::set<int> distinct(train_set.labels.begin(),
                               train_set.labels.end());
  if (distinct.size() < 2)
    throw invalid_input("training set contains a single class");

  TrainingTrace trace;
  AdamState adam = make_adam_state(model);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::vector<double>> inputs;
      std::vector<int> labels;
      inputs.reserve(stop - start);
      labels.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        inputs.push_back(train_set.inputs[order[i]]);
        labels.push_back(train_set.labels[order[i]]);
      }
      ForwardCache cache = forward_cached(model, inputs);
      Batch batch{cache.post.back(), labels};
      const BatchLossResult loss = composite_loss(config.loss, batch);
      if (loss.mmce_fallback) ++trace.mmce_fallback_batches;
      const Gradients grads = backward(model, cache, loss.grad_logits);
      adam_step(model, grads, adam, config.learning_rate);
    }
    EpochRecord record;
    std::tie(record.train_loss, record.train_acc) =
        detail::dataset_loss_acc(model, train_set, config.loss);
    std::tie(record.test_loss, record.test_acc) =
        detail::dataset_loss_acc(model, test_set, config.loss);
    trace.epochs.push_back(record);
  }

  trace.final_report = evaluate(predictions_of(model, test_set), report_bins);
  return trace;
}

}  // namespace calib
