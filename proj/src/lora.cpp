// SPDX-License-Identifier: Apache-2.0

#include "flora/lora.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "flora/random.hpp"

namespace flora {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Dim::Dim(Index m_, Index n_) : m(m_), n(n_) {
  if (m < 1 || n < 1) {
    throw std::invalid_argument("Dim: dimensions must be positive, got " +
                                std::to_string(m) + "x" + std::to_string(n));
  }
}

LoraAdapter::LoraAdapter(Matrix a, Matrix b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() < 1) throw std::invalid_argument("LoraAdapter: rank must be >= 1");
  if (b_.cols() != a_.rows()) {
    throw std::invalid_argument("LoraAdapter: a is " + shape(a_) + " but b is " +
                                shape(b_) + " (inner ranks differ)");
  }
  if (a_.cols() < 1 || b_.rows() < 1) {
    throw std::invalid_argument("LoraAdapter: empty outer dimension");
  }
}

BaseWeights::BaseWeights(Matrix w) : w_(std::move(w)) {
  if (w_.rows() < 1 || w_.cols() < 1) {
    throw std::invalid_argument("BaseWeights: empty matrix");
  }
  if (!w_.allFinite()) throw std::invalid_argument("BaseWeights: non-finite entry");
}

LoraAdapter init_adapter(Dim dim, Index rank, const InitPolicy& policy) {
  if (rank < 1) throw std::invalid_argument("init_adapter: rank must be >= 1");
  if (dim.m < 1 || dim.n < 1) {
    throw std::invalid_argument("init_adapter: dimensions must be positive");
  }
  if (!(policy.scale >= 0.0) || !std::isfinite(policy.scale)) {
    throw std::invalid_argument("init_adapter: scale must be finite and >= 0");
  }
  Rng rng(policy.seed);
  Matrix a(rank, dim.n);
  // Row-major fill order so the draw sequence does not depend on storage order.
  for (Index i = 0; i < rank; ++i) {
    for (Index j = 0; j < dim.n; ++j) {
      a(i, j) = policy.kind == InitKind::ZeroDeltaGaussian
                    ? rng.normal(0.0, policy.scale)
                    : rng.uniform(-policy.scale, policy.scale);
    }
  }
  return LoraAdapter(std::move(a), Matrix::Zero(dim.m, rank));
}

Matrix adapter_delta(const LoraAdapter& adapter) { return adapter.b() * adapter.a(); }

BaseWeights merge_into_base(const BaseWeights& base, const LoraAdapter& adapter) {
  if (!(base.dim() == adapter.dim())) {
    throw std::invalid_argument("merge_into_base: base is " + shape(base.w()) +
                                " but adapter update is " +
                                std::to_string(adapter.dim().m) + "x" +
                                std::to_string(adapter.dim().n));
  }
  return merge_delta(base, adapter_delta(adapter));
}

BaseWeights merge_delta(const BaseWeights& base, const Matrix& delta) {
  if (base.w().rows() != delta.rows() || base.w().cols() != delta.cols()) {
    throw std::invalid_argument("merge_delta: base is " + shape(base.w()) +
                                " but update is " + shape(delta));
  }
  return BaseWeights(base.w() + delta);
}

LoraAdapter stack_adapters(std::span<const LoraAdapter> adapters) {
  if (adapters.empty()) throw std::invalid_argument("stack_adapters: empty list");
  const Dim dim = adapters.front().dim();
  Index total = 0;
  for (const auto& ad : adapters) {
    if (!(ad.dim() == dim)) {
      throw std::invalid_argument("stack_adapters: adapters disagree on (m, n)");
    }
    total += ad.rank();
  }
  Matrix a(total, dim.n);
  Matrix b(dim.m, total);
  Index offset = 0;
  for (const auto& ad : adapters) {
    a.middleRows(offset, ad.rank()) = ad.a();
    b.middleCols(offset, ad.rank()) = ad.b();
    offset += ad.rank();
  }
  return LoraAdapter(std::move(a), std::move(b));
}

LoraAdapter scale_adapter(const LoraAdapter& adapter, double p) {
  if (!std::isfinite(p) || p < 0.0) {
    throw std::invalid_argument("scale_adapter: factor must be finite and >= 0, got " +
                                std::to_string(p));
  }
  return LoraAdapter(adapter.a() * p, adapter.b());
}

std::vector<LoraAdapter> split_rank1(const LoraAdapter& adapter) {
  std::vector<LoraAdapter> parts;
  parts.reserve(static_cast<std::size_t>(adapter.rank()));
  for (Index i = 0; i < adapter.rank(); ++i) {
    parts.emplace_back(Matrix(adapter.a().row(i)), Matrix(adapter.b().col(i)));
  }
  return parts;
}

double trainable_fraction(Dim dim, Index rank) {
  if (rank < 1) throw std::invalid_argument("trainable_fraction: rank must be >= 1");
  return static_cast<double>(rank) * static_cast<double>(dim.m + dim.n) /
         (static_cast<double>(dim.m) * static_cast<double>(dim.n));
}

std::uint64_t fingerprint(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t rows = m.rows();
  const std::int64_t cols = m.cols();
  feed(&rows, sizeof rows);
  feed(&cols, sizeof cols);
  feed(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return h;
}

}  // namespace flora
