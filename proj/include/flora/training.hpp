// SPDX-License-Identifier: Apache-2.0
//
// Local fine-tuning on a toy frozen-base linear model y = (W + B A) x.
// Only the adapter is trained; gradients are derived by hand through the
// factorization and plain mini-batch SGD updates A and B together.

#pragma once

#include <cstdint>
#include <span>

#include "flora/data.hpp"
#include "flora/lora.hpp"

namespace flora {

enum class LossKind { SquaredError, SoftmaxCrossEntropy };

const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct ToyModel {
  BaseWeights base;
  LoraAdapter adapter;
};

struct TrainConfig {
  double learning_rate = 0.0003;
  int batch_size = 16;
  int local_epochs = 1;
  LossKind loss = LossKind::SquaredError;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Column-per-sample batch. `labels` is only read by the classification loss.
struct Batch {
  Matrix inputs;   // n x B
  Matrix targets;  // m x B
  std::vector<int> labels;

  Index size() const { return inputs.cols(); }
};

Batch make_batch(std::span<const Sample> samples);
Batch make_batch(std::span<const Sample* const> samples);

struct Gradients {
  double loss = 0.0;
  Matrix d_a;  // r x n
  Matrix d_b;  // m x r
};

/// W x + b (a x), without forming b a.
Vector forward(const ToyModel& model, const Vector& x);

/// Batch-mean loss with the residual g = dloss/dy per sample:
///   dB = mean g (a x)^T,   dA = mean b^T g x^T.
/// Squared error is 0.5 * ||y - t||^2.
Gradients loss_and_grads(const ToyModel& model, const Batch& batch, LossKind kind);

/// Batch-mean loss of the effective dense model W (no adapter).
double evaluate_loss(const Matrix& w, const Batch& batch, LossKind kind);

/// One SGD step on (a, b) from the same gradient evaluation.
LoraAdapter sgd_step(const LoraAdapter& adapter, const Gradients& grads, double learning_rate);

/// Residual of the one-step identity
///   B'A' - BA = -lr (dB A + B dA) + lr^2 dB dA
/// relative to the largest entry of the same expression taken over absolute
/// values, and the size of the lr^2 term
/// (the gap between adapter-space SGD and a dense gradient step).
struct StepIdentity {
  double residual = 0.0;
  double second_order_norm = 0.0;
};
StepIdentity check_step_identity(const LoraAdapter& before, const Gradients& grads,
                                 double learning_rate);

/// E epochs of seeded mini-batch SGD over the shard. The batch order in epoch
/// e is a Fisher-Yates shuffle seeded by derive_seed(cfg.seed, {e}); a batch
/// size above the shard size is clamped to the shard size.
LoraAdapter local_train(const ToyModel& model, const ClientShard& shard, const TrainConfig& cfg);

}  // namespace flora
