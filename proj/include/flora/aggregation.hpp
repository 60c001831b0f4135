// SPDX-License-Identifier: Apache-2.0
//
// Server-side aggregation of client adapters.
//
//   aggregate_flora         stack p_k * A_k and B_k; exact sum of p_k B_k A_k
//   aggregate_fedit         average A's and B's independently (homogeneous only)
//   aggregate_zero_padding  pad every client to the max rank, then average
//   oracle_delta            dense sum of p_k B_k A_k, the reference result
//
// Weights are used as given and never renormalized, so a constant override
// (e.g. 0.01 for every client) is honored even though it does not sum to 1.

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "flora/lora.hpp"

namespace flora {

struct WeightedUpdate {
  LoraAdapter adapter;
  double weight = 1.0;  // p_k in [0, 1]
};

/// Raised when an averaging strategy is handed adapters of different ranks.
class UnsupportedRanksError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Decomposition of the averaged update B_avg * A_avg.
struct NoiseReport {
  Matrix signal;  // sum_k p_k^2 B_k A_k
  Matrix cross;   // sum_{i != j} p_i p_j B_i A_j
  double relative_noise = 0.0;  // ||cross||_F / ||oracle_delta||_F, 0/0 := 0
};

LoraAdapter aggregate_flora(std::span<const WeightedUpdate> updates);
LoraAdapter aggregate_fedit(std::span<const WeightedUpdate> updates);
LoraAdapter aggregate_zero_padding(std::span<const WeightedUpdate> updates);
Matrix oracle_delta(std::span<const WeightedUpdate> updates);

/// Computes cross as (dense averaged update) - signal and checks that the two
/// parts reassemble the averaged update before returning.
NoiseReport fedit_noise(std::span<const WeightedUpdate> updates);

/// Scales, splits every adapter into rank-1 pieces, applies a seeded uniform
/// permutation (see random_permutation) and stacks the result. The update is
/// identical to aggregate_flora; only the row/column order differs, so the
/// contiguous block of any one client is broken up. The multiset of ranks is
/// still visible from the global rank.
LoraAdapter shuffled_stack(std::span<const WeightedUpdate> updates, std::uint64_t seed);

/// Adapter extended to `rank` with zero rows in a and zero columns in b.
LoraAdapter pad_to_rank(const LoraAdapter& adapter, Index rank);

/// True when every adapter has the same rank.
bool homogeneous_ranks(std::span<const WeightedUpdate> updates);

}  // namespace flora
