// SPDX-License-Identifier: Apache-2.0
//
// Federated round protocol over simulated clients:
//   1. every client draws a fresh adapter (b = 0) and trains it locally
//   2. the server aggregates the uploads with the chosen strategy
//   3. the aggregate update is merged into the global W
//   4. every client's local base is synchronized to the new global W
// Redistribution is simulated by synchronizing W directly; the ledger still
// charges the size of the modules a real server would send.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "flora/aggregation.hpp"
#include "flora/comm.hpp"
#include "flora/config.hpp"
#include "flora/data.hpp"
#include "flora/training.hpp"

namespace flora {

Protocol protocol_for(Strategy s);

struct ServerState {
  BaseWeights base;
  int round = 0;
  CommLedger ledger;
};

struct ClientRuntime {
  int client_id = 0;
  ClientShard shard;
  Index rank = 1;
  BaseWeights local_base;
  std::uint64_t seed = 0;  // per-round seeds are derive_seed(seed, {round, ...})
};

struct RoundOptions {
  Batch eval;  // held-out global evaluation set
  std::optional<double> scaling_override;
  InitKind init_kind = InitKind::ZeroDeltaGaussian;
  double init_scale = 0.01;
  int threads = 0;
};

struct RoundMetrics {
  int round = 0;  // 0 is the pre-training baseline; t + 1 follows protocol round t
  Strategy strategy = Strategy::Flora;
  double global_eval_loss = 0.0;
  std::vector<double> per_client_eval_loss;  // each client's model on its own shard
  std::optional<double> fedit_relative_noise;
  std::int64_t params_up = 0;
  std::int64_t params_down = 0;

  double mean_client_loss() const;
};

/// Dense update the server applies for `strategy`. For the averaging
/// strategies `noise` receives the relative aggregation noise when non-null.
Matrix aggregate_update(Strategy strategy, std::span<const WeightedUpdate> updates,
                        std::optional<double>* noise = nullptr);

/// Throws ConfigError when the strategy cannot handle the clients' ranks.
void check_strategy(Strategy strategy, std::span<const ClientRuntime> clients);

/// One full round; advances server.round. Not valid for Strategy::Centralized.
/// When `uploads` is non-null it receives the weighted client adapters the
/// server aggregated.
RoundMetrics run_round(ServerState& server, std::vector<ClientRuntime>& clients, Strategy strategy,
                       const TrainConfig& train, const RoundOptions& options,
                       std::vector<WeightedUpdate>* uploads = nullptr);

struct ExperimentReport {
  Strategy strategy = Strategy::Flora;
  std::uint64_t seed = 0;
  std::string description;  // describe_config() of the generating config
  std::vector<RoundMetrics> rounds;
  std::optional<CommSummary> comm;
  std::uint64_t shard_fingerprint = 0;
  Matrix final_base;

  double final_global_loss() const { return rounds.back().global_eval_loss; }
};

struct ComparisonReport {
  std::vector<ExperimentReport> runs;
};

/// Runs config.strategies.front().
ExperimentReport run_experiment(const ExperimentConfig& config);
ExperimentReport run_experiment(const ExperimentConfig& config, Strategy strategy);

/// One run per strategy on the identical task, partition and seeds.
ComparisonReport compare_strategies(const ExperimentConfig& config, std::span<const Strategy> strategies);

}  // namespace flora
