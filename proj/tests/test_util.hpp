// SPDX-License-Identifier: Apache-2.0
//
// Generators and naive reference routines shared by the unit tests.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "flora/aggregation.hpp"
#include "flora/lora.hpp"
#include "flora/random.hpp"

namespace flora::testing {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

inline Matrix mat(Index rows, Index cols, std::initializer_list<double> row_major) {
  Matrix m(rows, cols);
  auto it = row_major.begin();
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = *it++;
  return m;
}

inline Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline LoraAdapter random_adapter(Rng& rng, Dim dim, Index rank) {
  Matrix a = random_matrix(rng, rank, dim.n);
  Matrix b = random_matrix(rng, dim.m, rank);
  return LoraAdapter(std::move(a), std::move(b));
}

// Triple loop product, no Eigen kernels.
inline Matrix naive_product(const Matrix& x, const Matrix& y) {
  Matrix out = Matrix::Zero(x.rows(), y.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j) {
      double s = 0.0;
      for (Index k = 0; k < x.cols(); ++k) s += x(i, k) * y(k, j);
      out(i, j) = s;
    }
  return out;
}

// Sum of |x||y| products; bounds the rounding error of a computed product.
inline Matrix abs_product(const Matrix& x, const Matrix& y) {
  return naive_product(x.cwiseAbs(), y.cwiseAbs());
}

struct Instance {
  Dim dim;
  std::vector<WeightedUpdate> updates;
};

inline Instance random_instance(std::uint64_t seed, bool homogeneous, int max_k = 6,
                                Index max_rank = 6, Index max_dim = 12) {
  Rng rng(seed);
  Instance inst;
  inst.dim = Dim(2 + static_cast<Index>(rng.below(max_dim - 1)),
                 2 + static_cast<Index>(rng.below(max_dim - 1)));
  const int k = 1 + static_cast<int>(rng.below(max_k));
  const Index shared = 1 + static_cast<Index>(rng.below(max_rank));
  std::vector<double> raw(k);
  double total = 0.0;
  for (auto& w : raw) total += (w = 0.05 + rng.uniform());
  for (int i = 0; i < k; ++i) {
    const Index r = homogeneous ? shared : 1 + static_cast<Index>(rng.below(max_rank));
    inst.updates.push_back({random_adapter(rng, inst.dim, r), raw[i] / total});
  }
  return inst;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace flora::testing
