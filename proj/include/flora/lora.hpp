// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters: an update dW = B * A with A (r x n) and B (m x r).
// All values are immutable after construction and every operation is a pure
// function, so adapters can be shared freely across threads.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace flora {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Shape of a frozen weight matrix: m outputs, n inputs.
struct Dim {
  Index m = 0;
  Index n = 0;

  Dim() = default;
  Dim(Index m_, Index n_);

  friend bool operator==(const Dim&, const Dim&) = default;
};

class LoraAdapter {
 public:
  /// Takes ownership of the factors. a must be r x n, b must be m x r, r >= 1.
  LoraAdapter(Matrix a, Matrix b);

  const Matrix& a() const { return a_; }
  const Matrix& b() const { return b_; }
  Index rank() const { return a_.rows(); }
  Dim dim() const { return Dim(b_.rows(), a_.cols()); }

  friend bool operator==(const LoraAdapter& x, const LoraAdapter& y) {
    return x.a_ == y.a_ && x.b_ == y.b_;
  }

 private:
  Matrix a_;
  Matrix b_;
};

/// Frozen dense weights W (m x n); entries must be finite.
class BaseWeights {
 public:
  explicit BaseWeights(Matrix w);

  const Matrix& w() const { return w_; }
  Dim dim() const { return Dim(w_.rows(), w_.cols()); }

  friend bool operator==(const BaseWeights&, const BaseWeights&) = default;

 private:
  Matrix w_;
};

enum class InitKind { ZeroDeltaGaussian, ZeroDeltaUniform };

/// How fresh adapters are drawn. b is always zero, so the initial update is
/// exactly zero; a is Gaussian(0, scale) or Uniform(-scale, scale).
struct InitPolicy {
  InitKind kind = InitKind::ZeroDeltaGaussian;
  double scale = 0.01;
  std::uint64_t seed = 0;
};

LoraAdapter init_adapter(Dim dim, Index rank, const InitPolicy& policy);

/// b * a.
Matrix adapter_delta(const LoraAdapter& adapter);

/// W + b * a. Throws std::invalid_argument on shape mismatch.
BaseWeights merge_into_base(const BaseWeights& base, const LoraAdapter& adapter);

/// Same as merge_into_base but with a precomputed dense update.
BaseWeights merge_delta(const BaseWeights& base, const Matrix& delta);

/// Stacks adapters in list order: a's vertically (each below the previous),
/// b's horizontally (each right of the previous). The stacked product equals
/// the sum of the individual products.
LoraAdapter stack_adapters(std::span<const LoraAdapter> adapters);

/// Multiplies the a factor by p, leaving b untouched, so the update scales by
/// exactly p (not p^2). p must be finite and nonnegative.
LoraAdapter scale_adapter(const LoraAdapter& adapter, double p);

/// Splits a rank-r adapter into r rank-1 adapters (row i of a, column i of b).
std::vector<LoraAdapter> split_rank1(const LoraAdapter& adapter);

/// r * (m + n) / (m * n): adapter parameters relative to the dense matrix.
double trainable_fraction(Dim dim, Index rank);

/// FNV-1a over the raw bytes of a matrix; used for bitwise equality checks.
std::uint64_t fingerprint(const Matrix& m);

}  // namespace flora
