// SPDX-License-Identifier: Apache-2.0

#include "flora/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "flora/random.hpp"

namespace flora {

namespace {

// Per-sample loss and residual dloss/dy for output column y.
double sample_loss(const Vector& y, const Batch& batch, Index col, LossKind kind,
                   Eigen::Ref<Vector> residual) {
  if (kind == LossKind::SquaredError) {
    residual = y - batch.targets.col(col);
    return 0.5 * residual.squaredNorm();
  }
  const int label = batch.labels.at(static_cast<std::size_t>(col));
  if (label < 0 || label >= y.size()) {
    throw std::invalid_argument("loss: class index out of range");
  }
  const double top = y.maxCoeff();
  residual = (y.array() - top).exp().matrix();
  const double z = residual.sum();
  residual /= z;
  const double loss = -(y(label) - top - std::log(z));
  residual(label) -= 1.0;
  return loss;
}

}  // namespace

const char* to_string(LossKind kind) {
  return kind == LossKind::SquaredError ? "squared-error" : "softmax-cross-entropy";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "squared-error") return LossKind::SquaredError;
  if (name == "softmax-cross-entropy") return LossKind::SoftmaxCrossEntropy;
  throw std::invalid_argument("unknown loss '" + name +
                              "' (expected squared-error or softmax-cross-entropy)");
}

Batch make_batch(std::span<const Sample> samples) {
  std::vector<const Sample*> refs;
  refs.reserve(samples.size());
  for (const auto& s : samples) refs.push_back(&s);
  return make_batch(std::span<const Sample* const>(refs));
}

Batch make_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Index n = samples.front()->x.size();
  const Index m = samples.front()->y.size();
  const auto count = static_cast<Index>(samples.size());
  Batch batch{Matrix(n, count), Matrix(m, count), std::vector<int>(samples.size())};
  for (Index i = 0; i < count; ++i) {
    const Sample& s = *samples[static_cast<std::size_t>(i)];
    if (s.x.size() != n || s.y.size() != m) {
      throw std::invalid_argument("make_batch: samples disagree on dimensions");
    }
    batch.inputs.col(i) = s.x;
    batch.targets.col(i) = s.y;
    batch.labels[static_cast<std::size_t>(i)] = s.label;
  }
  return batch;
}

Vector forward(const ToyModel& model, const Vector& x) {
  if (x.size() != model.base.dim().n || !(model.adapter.dim() == model.base.dim())) {
    throw std::invalid_argument("forward: dimension mismatch");
  }
  return model.base.w() * x + model.adapter.b() * (model.adapter.a() * x);
}

Gradients loss_and_grads(const ToyModel& model, const Batch& batch, LossKind kind) {
  if (batch.size() < 1) throw std::invalid_argument("loss_and_grads: empty batch");
  const Dim dim = model.base.dim();
  if (batch.inputs.rows() != dim.n || batch.targets.rows() != dim.m ||
      !(model.adapter.dim() == dim)) {
    throw std::invalid_argument("loss_and_grads: dimension mismatch");
  }
  const Matrix& a = model.adapter.a();
  const Matrix& b = model.adapter.b();
  const Matrix projected = a * batch.inputs;  // r x B
  const Matrix outputs = model.base.w() * batch.inputs + b * projected;

  Matrix residuals(dim.m, batch.size());
  double total = 0.0;
  for (Index i = 0; i < batch.size(); ++i) {
    total += sample_loss(outputs.col(i), batch, i, kind, residuals.col(i));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Gradients g;
  g.loss = total * inv;
  g.d_b = (residuals * projected.transpose()) * inv;
  g.d_a = (b.transpose() * residuals * batch.inputs.transpose()) * inv;
  return g;
}

double evaluate_loss(const Matrix& w, const Batch& batch, LossKind kind) {
  if (batch.size() < 1) throw std::invalid_argument("evaluate_loss: empty batch");
  const Matrix outputs = w * batch.inputs;
  Vector residual(w.rows());
  double total = 0.0;
  for (Index i = 0; i < batch.size(); ++i) {
    total += sample_loss(outputs.col(i), batch, i, kind, residual);
  }
  return total / static_cast<double>(batch.size());
}

LoraAdapter sgd_step(const LoraAdapter& adapter, const Gradients& grads, double learning_rate) {
  return LoraAdapter(adapter.a() - learning_rate * grads.d_a,
                     adapter.b() - learning_rate * grads.d_b);
}

StepIdentity check_step_identity(const LoraAdapter& before, const Gradients& grads,
                                 double learning_rate) {
  const LoraAdapter after = sgd_step(before, grads, learning_rate);
  const Matrix lhs = adapter_delta(after) - adapter_delta(before);
  const Matrix first = -learning_rate * (grads.d_b * before.a() + before.b() * grads.d_a);
  const Matrix second = (learning_rate * learning_rate) * (grads.d_b * grads.d_a);
  // Rounding of every product above is bounded relative to the products of
  // absolute values, which do not cancel.
  const Matrix magnitude =
      after.b().cwiseAbs() * after.a().cwiseAbs() + before.b().cwiseAbs() * before.a().cwiseAbs() +
      learning_rate * (grads.d_b.cwiseAbs() * before.a().cwiseAbs() +
                       before.b().cwiseAbs() * grads.d_a.cwiseAbs()) +
      (learning_rate * learning_rate) * (grads.d_b.cwiseAbs() * grads.d_a.cwiseAbs());
  const double scale = std::max(magnitude.maxCoeff(), std::numeric_limits<double>::min());
  StepIdentity out;
  out.residual = (lhs - first - second).cwiseAbs().maxCoeff() / scale;
  out.second_order_norm = second.norm();
  return out;
}

LoraAdapter local_train(const ToyModel& model, const ClientShard& shard, const TrainConfig& cfg) {
  if (shard.size() < 1) throw std::invalid_argument("local_train: empty shard");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw std::invalid_argument("local_train: learning rate must be finite and >= 0");
  }
  if (cfg.batch_size < 1 || cfg.local_epochs < 0) {
    throw std::invalid_argument("local_train: batch size and epochs must be positive");
  }
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                       shard.size());
  ToyModel current = model;
  std::vector<std::size_t> order(shard.size());
  std::vector<const Sample*> picked;
  picked.reserve(batch_size);
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      picked.clear();
      for (std::size_t i = start; i < end; ++i) picked.push_back(&shard.samples[order[i]]);
      const Batch batch = make_batch(std::span<const Sample* const>(picked));
      const Gradients g = loss_and_grads(current, batch, cfg.loss);
      current.adapter = sgd_step(current.adapter, g, cfg.learning_rate);
    }
  }
  return current.adapter;
}

}  // namespace flora
