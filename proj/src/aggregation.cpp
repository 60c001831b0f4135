// SPDX-License-Identifier: Apache-2.0

#include "flora/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flora/random.hpp"

namespace flora {

namespace {

void check_common(std::span<const WeightedUpdate> updates, const char* who) {
  if (updates.empty()) {
    throw std::invalid_argument(std::string(who) + ": no updates to aggregate");
  }
  const Dim dim = updates.front().adapter.dim();
  for (const auto& u : updates) {
    if (!(u.adapter.dim() == dim)) {
      throw std::invalid_argument(std::string(who) + ": adapters disagree on (m, n)");
    }
    if (!std::isfinite(u.weight) || u.weight < 0.0 || u.weight > 1.0) {
      throw std::invalid_argument(std::string(who) + ": weight " +
                                  std::to_string(u.weight) + " outside [0, 1]");
    }
  }
}

std::vector<LoraAdapter> scaled(std::span<const WeightedUpdate> updates) {
  std::vector<LoraAdapter> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(scale_adapter(u.adapter, u.weight));
  return out;
}

// Weighted averages of a and b, accumulated in list order.
LoraAdapter average_factors(std::span<const WeightedUpdate> updates) {
  const auto& first = updates.front().adapter;
  Matrix a = Matrix::Zero(first.a().rows(), first.a().cols());
  Matrix b = Matrix::Zero(first.b().rows(), first.b().cols());
  for (const auto& u : updates) {
    a += u.weight * u.adapter.a();
    b += u.weight * u.adapter.b();
  }
  return LoraAdapter(std::move(a), std::move(b));
}

}  // namespace

bool homogeneous_ranks(std::span<const WeightedUpdate> updates) {
  return std::all_of(updates.begin(), updates.end(), [&](const WeightedUpdate& u) {
    return u.adapter.rank() == updates.front().adapter.rank();
  });
}

LoraAdapter aggregate_flora(std::span<const WeightedUpdate> updates) {
  check_common(updates, "aggregate_flora");
  const auto parts = scaled(updates);
  return stack_adapters(parts);
}

LoraAdapter aggregate_fedit(std::span<const WeightedUpdate> updates) {
  check_common(updates, "aggregate_fedit");
  if (!homogeneous_ranks(updates)) {
    throw UnsupportedRanksError(
        "aggregate_fedit: independent averaging of A and B needs identical ranks");
  }
  return average_factors(updates);
}

LoraAdapter pad_to_rank(const LoraAdapter& adapter, Index rank) {
  if (rank < adapter.rank()) {
    throw std::invalid_argument("pad_to_rank: target rank below adapter rank");
  }
  if (rank == adapter.rank()) return adapter;
  Matrix a = Matrix::Zero(rank, adapter.a().cols());
  Matrix b = Matrix::Zero(adapter.b().rows(), rank);
  a.topRows(adapter.rank()) = adapter.a();
  b.leftCols(adapter.rank()) = adapter.b();
  return LoraAdapter(std::move(a), std::move(b));
}

LoraAdapter aggregate_zero_padding(std::span<const WeightedUpdate> updates) {
  check_common(updates, "aggregate_zero_padding");
  Index max_rank = 0;
  for (const auto& u : updates) max_rank = std::max(max_rank, u.adapter.rank());
  std::vector<WeightedUpdate> padded;
  padded.reserve(updates.size());
  for (const auto& u : updates) padded.push_back({pad_to_rank(u.adapter, max_rank), u.weight});
  return average_factors(padded);
}

Matrix oracle_delta(std::span<const WeightedUpdate> updates) {
  check_common(updates, "oracle_delta");
  const Dim dim = updates.front().adapter.dim();
  Matrix sum = Matrix::Zero(dim.m, dim.n);
  for (const auto& u : updates) sum += u.weight * adapter_delta(u.adapter);
  return sum;
}

NoiseReport fedit_noise(std::span<const WeightedUpdate> updates) {
  const Matrix averaged = adapter_delta(aggregate_fedit(updates));
  const Dim dim = updates.front().adapter.dim();

  NoiseReport report;
  report.signal = Matrix::Zero(dim.m, dim.n);
  for (const auto& u : updates) {
    report.signal += (u.weight * u.weight) * adapter_delta(u.adapter);
  }
  report.cross = averaged - report.signal;

  const double eps = std::numeric_limits<double>::epsilon();
  const double scale =
      std::max({1.0, averaged.cwiseAbs().maxCoeff(), report.signal.cwiseAbs().maxCoeff()});
  const double tol = 8.0 * static_cast<double>(updates.size()) * eps * scale;
  const double gap = (report.signal + report.cross - averaged).cwiseAbs().maxCoeff();
  if (gap > tol) {
    throw std::logic_error("fedit_noise: signal + cross does not reassemble the average");
  }

  const double target = oracle_delta(updates).norm();
  const double noise = report.cross.norm();
  report.relative_noise = target == 0.0 ? (noise == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                                        : noise / target;
  return report;
}

LoraAdapter shuffled_stack(std::span<const WeightedUpdate> updates, std::uint64_t seed) {
  check_common(updates, "shuffled_stack");
  std::vector<LoraAdapter> pieces;
  for (const auto& ad : scaled(updates)) {
    auto parts = split_rank1(ad);
    pieces.insert(pieces.end(), std::make_move_iterator(parts.begin()),
                  std::make_move_iterator(parts.end()));
  }
  const auto perm = random_permutation(pieces.size(), seed);
  std::vector<LoraAdapter> ordered;
  ordered.reserve(pieces.size());
  for (auto idx : perm) ordered.push_back(pieces[idx]);
  return stack_adapters(ordered);
}

}  // namespace flora
