#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "calib/losses.hpp"
#include "calib/prob.hpp"
#include "calib/rng.hpp"
#include "oracle_utils.hpp"

using namespace calib;

namespace {

std::vector<ProbVector> probs_of(const Batch& batch) {
  std::vector<ProbVector> probs;
  for (const auto& z : batch.logits) probs.push_back(softmax(z));
  return probs;
}

std::vector<Prediction> preds_of(const Batch& batch) {
  std::vector<Prediction> preds;
  for (const auto& z : batch.logits) preds.push_back(predict_from_logits(z));
  return preds;
}

// Random batch kept away from the kinks the analytic gradients step over:
// argmax ties, DCA = 0, coincident confidences and a vanishing MMCE value.
Batch guarded_random_batch(Rng& rng, std::size_t n, int k,
                           const LossSpec& spec) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Batch batch;
    for (std::size_t i = 0; i < n; ++i) {
      LogitVector z(static_cast<std::size_t>(k));
      for (double& v : z) v = rng.uniform(-2.5, 2.5);
      batch.logits.push_back(z);
      batch.labels.push_back(1 + static_cast<int>(rng.below(k)));
    }
    bool ok = true;
    const auto preds = preds_of(batch);
    for (const auto& pred : preds) {
      ProbVector sorted = pred.probs;
      std::sort(sorted.begin(), sorted.end());
      if (sorted[sorted.size() - 1] - sorted[sorted.size() - 2] < 1e-3)
        ok = false;
    }
    if (spec.kind == LossKind::Dca && dca(preds, batch.labels) < 1e-3)
      ok = false;
    if (spec.kind == LossKind::Mmce) {
      const MmceBatch mm = make_mmce_batch(preds, batch.labels);
      if (mm.n_correct == 0 || mm.n_correct == mm.n_batch) ok = false;
      if (ok) {
        for (std::size_t i = 0; i < n && ok; ++i)
          for (std::size_t j = i + 1; j < n; ++j)
            if (std::fabs(mm.confidences[i] - mm.confidences[j]) < 1e-3)
              ok = false;
        if (ok && mmce_weighted(mm, spec.mmce_kernel_width) < 1e-5) ok = false;
      }
    }
    if (ok) return batch;
  }
  FAIL("could not generate a guarded batch");
  return {};
}

std::vector<double> flatten(const std::vector<LogitVector>& grads) {
  std::vector<double> flat;
  for (const auto& g : grads) flat.insert(flat.end(), g.begin(), g.end());
  return flat;
}

}  // namespace

TEST_CASE("cross entropy of one-hot predictions is zero") {
  std::vector<ProbVector> probs{{1.0, 0.0}, {0.0, 1.0}};
  BatchLossResult result = cross_entropy(probs, {1, 2});
  CHECK(result.total == 0.0);
  CHECK(result.ce_part == 0.0);
}

TEST_CASE("cross entropy of uniform binary predictions is ln 2") {
  std::vector<ProbVector> probs{{0.5, 0.5}, {0.5, 0.5}};
  BatchLossResult result = cross_entropy(probs, {1, 2});
  CHECK(result.total == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects an empty batch") {
  CHECK_THROWS_AS(cross_entropy({}, {}), empty_batch);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(41);
  LossSpec spec;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const int k = 2 + static_cast<int>(rng.below(4));
    Batch batch = guarded_random_batch(rng, n, k, spec);
    BatchLossResult result = composite_loss(spec, batch);
    auto fd = oracle::fd_logit_gradient(spec, batch.logits, batch.labels);
    CHECK(oracle::relative_gap(flatten(result.grad_logits), flatten(fd)) <
          1e-5);
  }
}

TEST_CASE("dca value follows its definition") {
  // All correct with mean confidence 0.9.
  std::vector<Prediction> all_correct{
      Prediction{1, 0.9, {0.9, 0.1}}, Prediction{1, 0.9, {0.9, 0.1}}};
  CHECK(dca(all_correct, {1, 1}) == Catch::Approx(0.1).margin(1e-12));

  // Accuracy 0.75 with confidences {0.9, 0.8, 0.6, 0.7}: matched means.
  std::vector<Prediction> matched{
      Prediction{1, 0.9, {0.9, 0.1}}, Prediction{1, 0.8, {0.8, 0.2}},
      Prediction{1, 0.6, {0.6, 0.4}}, Prediction{1, 0.7, {0.7, 0.3}}};
  CHECK(dca(matched, {1, 1, 2, 1}) == Catch::Approx(0.0).margin(1e-12));
  CHECK_THROWS_AS(dca({}, {}), empty_batch);
}

TEST_CASE("dca is bounded and permutation invariant") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const int k = 2 + static_cast<int>(rng.below(5));
    Batch batch;
    for (std::size_t i = 0; i < n; ++i) {
      LogitVector z(static_cast<std::size_t>(k));
      for (double& v : z) v = rng.uniform(-3.0, 3.0);
      batch.logits.push_back(z);
      batch.labels.push_back(1 + static_cast<int>(rng.below(k)));
    }
    const double value = dca(preds_of(batch), batch.labels);
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    Batch shuffled;
    for (std::size_t i : order) {
      shuffled.logits.push_back(batch.logits[i]);
      shuffled.labels.push_back(batch.labels[i]);
    }
    CHECK(dca(preds_of(shuffled), shuffled.labels) ==
          Catch::Approx(value).margin(1e-12));
  }
}

TEST_CASE("dca gradient is zero at a perfectly matched batch") {
  // Accuracy = mean confidence = 0.75 exactly.
  std::vector<ProbVector> probs{{0.75, 0.25}, {0.75, 0.25},
                                {0.75, 0.25}, {0.75, 0.25}};
  auto grad = dca_gradient(probs, {1, 1, 1, 2});
  for (const auto& g : grad)
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("dca gradient reduces confidence on an overconfident batch") {
  Rng rng(47);
  LossSpec spec{LossKind::Dca, 1.0};
  for (int trial = 0; trial < 10; ++trial) {
    Batch batch = guarded_random_batch(rng, 8, 3, spec);
    const auto preds = preds_of(batch);
    double acc = 0.0, conf = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      acc += preds[i].label == batch.labels[i] ? 1.0 : 0.0;
      conf += preds[i].confidence;
    }
    if (conf <= acc) continue;  // only the overconfident direction here

    auto grad = dca_gradient(probs_of(batch), batch.labels);
    Batch stepped = batch;
    for (std::size_t i = 0; i < stepped.logits.size(); ++i)
      for (std::size_t k = 0; k < stepped.logits[i].size(); ++k)
        stepped.logits[i][k] -= 0.05 * grad[i][k];
    double new_conf = 0.0;
    for (const auto& pred : preds_of(stepped)) new_conf += pred.confidence;
    CHECK(new_conf < conf);
  }
}

TEST_CASE("dca gradient matches finite differences with frozen correctness") {
  Rng rng(53);
  LossSpec spec{LossKind::Dca, 7.5};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(14);
    const int k = 2 + static_cast<int>(rng.below(4));
    Batch batch = guarded_random_batch(rng, n, k, spec);
    BatchLossResult result = composite_loss(spec, batch);
    auto fd = oracle::fd_logit_gradient(spec, batch.logits, batch.labels);
    CHECK(oracle::relative_gap(flatten(result.grad_logits), flatten(fd)) <
          1e-5);
  }
}

TEST_CASE("beta scales the dca contribution linearly") {
  Rng rng(59);
  Batch batch = guarded_random_batch(rng, 6, 3, LossSpec{LossKind::Dca, 1.0});
  auto at = [&](double beta) {
    return composite_loss(LossSpec{LossKind::Dca, beta}, batch);
  };
  const BatchLossResult ce = at(0.0);
  const BatchLossResult b1 = at(1.0);
  const BatchLossResult b5 = at(5.0);
  CHECK(b5.total - ce.total ==
        Catch::Approx(5.0 * (b1.total - ce.total)).epsilon(1e-9));
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t k = 0; k < batch.logits[i].size(); ++k) {
      const double d1 = b1.grad_logits[i][k] - ce.grad_logits[i][k];
      const double d5 = b5.grad_logits[i][k] - ce.grad_logits[i][k];
      CHECK(d5 == Catch::Approx(5.0 * d1).margin(1e-12));
    }
}

TEST_CASE("smooth targets interpolate between one-hot and uniform") {
  auto hard = smooth_targets({2}, 3, 0.0);
  CHECK(hard[0][0] == 0.0);
  CHECK(hard[0][1] == 1.0);
  CHECK(hard[0][2] == 0.0);

  auto uniform = smooth_targets({1}, 4, 1.0);
  for (double t : uniform[0]) CHECK(t == Catch::Approx(0.25).margin(1e-15));

  auto mild = smooth_targets({1}, 2, 0.1);
  CHECK(mild[0][0] == Catch::Approx(0.95).margin(1e-15));
  CHECK(mild[0][1] == Catch::Approx(0.05).margin(1e-15));

  for (const auto& row : {hard[0], uniform[0], mild[0]}) {
    double sum = 0.0;
    for (double t : row) sum += t;
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
  CHECK_THROWS_AS(smooth_targets({1}, 2, -0.1), invalid_input);
  CHECK_THROWS_AS(smooth_targets({1}, 2, 1.1), invalid_input);
}

TEST_CASE("entropy of distributions") {
  CHECK(entropy_of({1.0, 0.0}) == 0.0);
  CHECK(entropy_of({0.25, 0.25, 0.25, 0.25}) ==
        Catch::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(entropy_of({0.75, 0.25}) == Catch::Approx(0.5623).margin(5e-5));
}

TEST_CASE("mmce matches a hand-evaluated two-sample batch") {
  // One correct at 0.99, one incorrect at 0.01, width 0.4.
  MmceBatch batch;
  batch.correctness = {1, 0};
  batch.confidences = {0.99, 0.01};
  batch.n_batch = 2;
  batch.n_correct = 1;
  const double w = 0.4;
  const double cross_kernel = std::exp(-std::fabs(0.99 - 0.01) / w);
  const double expected =
      0.01 * 0.01 + (1.0 - 0.99) * (1.0 - 0.99) -
      2.0 * (1.0 - 0.99) * 0.01 * cross_kernel;
  CHECK(mmce_weighted(batch, w) == Catch::Approx(expected).epsilon(1e-12));
  CHECK(mmce_weighted(batch, w) < 1e-3);
}

TEST_CASE("mmce of a calibrated batch is small") {
  // All confidences 0.55, correctness Bernoulli(0.55): the kernel is exactly
  // 1 within the batch, so the value collapses to (2q - 1)^2 plus noise.
  Rng rng(61);
  MmceBatch batch;
  batch.n_batch = 4000;
  for (std::size_t i = 0; i < batch.n_batch; ++i) {
    const int c = rng.bernoulli(0.55) ? 1 : 0;
    batch.correctness.push_back(c);
    batch.confidences.push_back(0.55);
    batch.n_correct += static_cast<std::size_t>(c);
  }
  CHECK(mmce_weighted(batch, 0.4) < 0.05);
}

TEST_CASE("mmce with a flat kernel collapses to a closed form") {
  Rng rng(67);
  MmceBatch batch;
  batch.n_batch = 40;
  for (std::size_t i = 0; i < batch.n_batch; ++i) {
    const int c = i % 3 == 0 ? 0 : 1;
    batch.correctness.push_back(c);
    batch.confidences.push_back(rng.uniform(0.5, 1.0));
    batch.n_correct += static_cast<std::size_t>(c);
  }
  double mean_inc = 0.0, mean_cor = 0.0;
  for (std::size_t i = 0; i < batch.n_batch; ++i) {
    if (batch.correctness[i] == 0)
      mean_inc += batch.confidences[i];
    else
      mean_cor += 1.0 - batch.confidences[i];
  }
  mean_inc /= static_cast<double>(batch.n_batch - batch.n_correct);
  mean_cor /= static_cast<double>(batch.n_correct);
  const double closed_form = (mean_inc - mean_cor) * (mean_inc - mean_cor);
  CHECK(mmce_weighted(batch, 1e12) ==
        Catch::Approx(closed_form).margin(1e-9));
}

TEST_CASE("mmce rejects degenerate batches") {
  MmceBatch all_correct{{1, 1}, {0.9, 0.8}, 2, 2};
  CHECK_THROWS_AS(mmce_weighted(all_correct, 0.4), degenerate_batch);
  MmceBatch all_wrong{{0, 0}, {0.9, 0.8}, 2, 0};
  CHECK_THROWS_AS(mmce_weighted(all_wrong, 0.4), degenerate_batch);
}

TEST_CASE("mmce gradient matches finite differences") {
  Rng rng(71);
  LossSpec spec{LossKind::Mmce, 2.0};
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t n = 4 + rng.below(10);
    const int k = 2 + static_cast<int>(rng.below(3));
    Batch batch = guarded_random_batch(rng, n, k, spec);
    BatchLossResult result = composite_loss(spec, batch);
    auto fd = oracle::fd_logit_gradient(spec, batch.logits, batch.labels);
    CHECK(oracle::relative_gap(flatten(result.grad_logits), flatten(fd)) <
          1e-5);
  }
}

TEST_CASE("entropy and smoothing gradients match finite differences") {
  Rng rng(73);
  for (LossSpec spec : {LossSpec{LossKind::EntropyPenalty, 0.7},
                        LossSpec{LossKind::LabelSmoothing, 0.0, 0.15}}) {
    for (int trial = 0; trial < 15; ++trial) {
      const std::size_t n = 1 + rng.below(12);
      const int k = 2 + static_cast<int>(rng.below(4));
      Batch batch = guarded_random_batch(rng, n, k, spec);
      BatchLossResult result = composite_loss(spec, batch);
      auto fd = oracle::fd_logit_gradient(spec, batch.logits, batch.labels);
      CHECK(oracle::relative_gap(flatten(result.grad_logits), flatten(fd)) <
            1e-5);
    }
  }
}

TEST_CASE("zero weight reduces every kind to plain cross entropy") {
  Rng rng(79);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    const int k = 2 + static_cast<int>(rng.below(4));
    Batch batch;
    for (std::size_t i = 0; i < n; ++i) {
      LogitVector z(static_cast<std::size_t>(k));
      for (double& v : z) v = rng.uniform(-3.0, 3.0);
      batch.logits.push_back(z);
      batch.labels.push_back(1 + static_cast<int>(rng.below(k)));
    }
    const BatchLossResult ce =
        composite_loss(LossSpec{LossKind::CrossEntropy}, batch);
    for (LossKind kind : {LossKind::Dca, LossKind::EntropyPenalty,
                          LossKind::Mmce, LossKind::LabelSmoothing}) {
      LossSpec spec;
      spec.kind = kind;
      const BatchLossResult result = composite_loss(spec, batch);
      CHECK(result.total == ce.total);
      CHECK(result.grad_logits == ce.grad_logits);
    }
  }
}

TEST_CASE("composite loss values are finite and auxiliaries non-negative") {
  Rng rng(83);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(16);
    const int k = 2 + static_cast<int>(rng.below(4));
    Batch batch;
    for (std::size_t i = 0; i < n; ++i) {
      LogitVector z(static_cast<std::size_t>(k));
      for (double& v : z) v = rng.uniform(-6.0, 6.0);
      batch.logits.push_back(z);
      batch.labels.push_back(1 + static_cast<int>(rng.below(k)));
    }
    for (LossSpec spec : {LossSpec{LossKind::CrossEntropy},
                          LossSpec{LossKind::Dca, 10.0},
                          LossSpec{LossKind::EntropyPenalty, 2.0},
                          LossSpec{LossKind::LabelSmoothing, 0.0, 0.2},
                          LossSpec{LossKind::Mmce, 2.0}}) {
      const BatchLossResult result = composite_loss(spec, batch);
      CHECK(std::isfinite(result.total));
      CHECK(result.ce_part >= 0.0);
      if (spec.kind != LossKind::LabelSmoothing)
        CHECK(result.aux_part >= 0.0);
      for (const auto& g : result.grad_logits)
        for (double v : g) CHECK(std::isfinite(v));

      // total = ce_part + weighted aux_part, sign per kind
      switch (spec.kind) {
        case LossKind::CrossEntropy:
          CHECK(result.total == result.ce_part);
          break;
        case LossKind::Dca:
        case LossKind::Mmce:
          if (!result.mmce_fallback)
            CHECK(result.total == Catch::Approx(result.ce_part +
                                                spec.beta * result.aux_part)
                                      .margin(1e-12));
          break;
        case LossKind::EntropyPenalty:
          CHECK(result.total == Catch::Approx(result.ce_part -
                                              spec.beta * result.aux_part)
                                    .margin(1e-12));
          break;
        case LossKind::LabelSmoothing:
          CHECK(result.total ==
                Catch::Approx(result.ce_part + result.aux_part).margin(1e-12));
          break;
      }
    }
  }
}

TEST_CASE("mmce composite falls back to cross entropy on degenerate batches") {
  Batch batch;
  batch.logits = {{3.0, 0.0}, {2.5, 0.0}};
  batch.labels = {1, 1};  // both correct
  const BatchLossResult result =
      composite_loss(LossSpec{LossKind::Mmce, 2.0}, batch);
  const BatchLossResult ce =
      composite_loss(LossSpec{LossKind::CrossEntropy}, batch);
  CHECK(result.mmce_fallback);
  CHECK(result.total == ce.total);
  CHECK(result.grad_logits == ce.grad_logits);
}

TEST_CASE("dca composite on the matched example equals plain cross entropy") {
  // Confidences {0.9, 0.8, 0.6, 0.7} with correctness {1, 1, 0, 1}.
  Batch batch;
  for (double conf : {0.9, 0.8, 0.6, 0.7})
    batch.logits.push_back({std::log(conf), std::log(1.0 - conf)});
  batch.labels = {1, 1, 2, 1};
  const BatchLossResult dca10 =
      composite_loss(LossSpec{LossKind::Dca, 10.0}, batch);
  const BatchLossResult ce =
      composite_loss(LossSpec{LossKind::CrossEntropy}, batch);
  CHECK(dca10.aux_part == Catch::Approx(0.0).margin(1e-12));
  CHECK(dca10.total == Catch::Approx(ce.total).margin(1e-10));
}

TEST_CASE("entropy penalty sign flag flips the auxiliary direction") {
  Batch batch;
  batch.logits = {{1.0, -1.0}, {0.5, 0.2}};
  batch.labels = {1, 2};
  LossSpec penalty{LossKind::EntropyPenalty, 3.0};
  LossSpec reward = penalty;
  reward.entropy_reward = true;
  const BatchLossResult a = composite_loss(penalty, batch);
  const BatchLossResult b = composite_loss(reward, batch);
  CHECK(a.aux_part == Catch::Approx(b.aux_part));
  CHECK(a.total == Catch::Approx(a.ce_part - 3.0 * a.aux_part));
  CHECK(b.total == Catch::Approx(b.ce_part + 3.0 * b.aux_part));
}
