// SPDX-License-Identifier: Apache-2.0
//
// Synthetic federated regression/classification tasks and non-IID
// partitioning. The teacher W* differs from the shared starting point W by a
// low-rank perturbation, so an adapter of rank >= teacher_rank can represent
// the optimal update exactly.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flora/lora.hpp"

namespace flora {

/// One labelled example. label is argmax(y), used by the classification loss.
struct Sample {
  Vector x;
  Vector y;
  int label = 0;
  std::size_t source_index = 0;  // position in the task's sample list
};

struct GlobalTask {
  Matrix teacher;  // W*
  BaseWeights base{Matrix::Zero(1, 1)};
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  Dim dim() const { return base.dim(); }
};

struct ClientShard {
  int client_id = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

enum class SkewKind { Iid, FeatureShift, SizeSkew, LabelSkew };

/// Strengths for each kind of heterogeneity; the kinds compose. All zeros is
/// the IID split.
///   feature_shift  per-client input mean offset, offset ~ strength * N(0, I)
///   size_skew      shard sizes proportional to rank^-strength (Zipf)
///   label_skew     client k prefers class k mod m with odds exp(strength)
struct SkewSpec {
  double feature_shift = 0.0;
  double size_skew = 0.0;
  double label_skew = 0.0;
  std::uint64_t seed = 0;

  static SkewSpec of(SkewKind kind, double strength, std::uint64_t seed = 0);
  bool iid() const { return feature_shift == 0.0 && size_skew == 0.0 && label_skew == 0.0; }

  friend bool operator==(const SkewSpec&, const SkewSpec&) = default;
};

const char* to_string(SkewKind kind);
SkewKind parse_skew_kind(const std::string& name);

struct TaskOptions {
  Index perturbation_rank = 4;
  double teacher_scale = 1.0;
};

/// Deterministic task: inputs x ~ N(0, I_n), y = W* x + N(0, noise_std^2).
GlobalTask gen_task(Dim dim, std::size_t samples_total, double noise_std, std::uint64_t seed,
                    const TaskOptions& options = {});

/// Splits off the trailing `fraction` of samples for evaluation. The returned
/// task keeps the leading samples; source indices are preserved.
std::pair<GlobalTask, std::vector<Sample>> split_holdout(const GlobalTask& task,
                                                         double fraction);

/// Disjoint cover of the task's samples across k_clients shards.
std::vector<ClientShard> partition(const GlobalTask& task, int k_clients, const SkewSpec& spec);

/// p_k = |D_k| / sum_j |D_j|.
std::vector<double> scaling_factors(std::span<const ClientShard> shards);

/// FNV-1a over every shard's sample bytes, in order.
std::uint64_t fingerprint(std::span<const ClientShard> shards);

/// Columnar text export: a "# flora-shards v1 m=<m> n=<n>" header, then one
/// sample per line as client_id,x_1..x_n,y_1..y_m with 17 significant digits.
void write_shards(std::span<const ClientShard> shards, const std::filesystem::path& path);
std::vector<ClientShard> read_shards(const std::filesystem::path& path);

}  // namespace flora
