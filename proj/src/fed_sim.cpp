// SPDX-License-Identifier: Apache-2.0

#include "flora/fed_sim.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <thread>

#include "flora/random.hpp"

namespace flora {

namespace {

constexpr std::uint64_t kTagTask = 0x7461736b;
constexpr std::uint64_t kTagPartition = 0x70617274;
constexpr std::uint64_t kTagClient = 0x636c6e74;
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagTrain = 2;
constexpr double kEvalFraction = 0.2;

// Runs fn(i) for i in [0, count), optionally across worker threads. Each index
// writes only its own slot, so results do not depend on scheduling.
template <typename Fn>
void for_each_client(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(threads, 1));
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < count; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double shard_loss(const Matrix& w, const ClientShard& shard, LossKind kind) {
  return evaluate_loss(w, make_batch(std::span<const Sample>(shard.samples)), kind);
}

}  // namespace

Protocol protocol_for(Strategy s) {
  switch (s) {
    case Strategy::Flora: return Protocol::Flora;
    case Strategy::FedIt: return Protocol::FedIt;
    case Strategy::ZeroPadding: return Protocol::ZeroPadding;
    case Strategy::Standalone: return Protocol::Standalone;
    case Strategy::Centralized: return Protocol::Centralized;
  }
  return Protocol::Flora;
}

double RoundMetrics::mean_client_loss() const {
  if (per_client_eval_loss.empty()) return 0.0;
  return std::accumulate(per_client_eval_loss.begin(), per_client_eval_loss.end(), 0.0) /
         static_cast<double>(per_client_eval_loss.size());
}

Matrix aggregate_update(Strategy strategy, std::span<const WeightedUpdate> updates,
                        std::optional<double>* noise) {
  switch (strategy) {
    case Strategy::Flora:
      return adapter_delta(aggregate_flora(updates));
    case Strategy::FedIt: {
      const LoraAdapter global = aggregate_fedit(updates);
      if (noise) *noise = fedit_noise(updates).relative_noise;
      return adapter_delta(global);
    }
    case Strategy::ZeroPadding: {
      const LoraAdapter global = aggregate_zero_padding(updates);
      if (noise) {
        Index widest = 0;
        for (const auto& u : updates) widest = std::max(widest, u.adapter.rank());
        std::vector<WeightedUpdate> padded;
        for (const auto& u : updates) padded.push_back({pad_to_rank(u.adapter, widest), u.weight});
        *noise = fedit_noise(padded).relative_noise;
      }
      return adapter_delta(global);
    }
    case Strategy::Standalone:
    case Strategy::Centralized:
      break;
  }
  throw std::invalid_argument(std::string("aggregate_update: ") + to_string(strategy) +
                              " has no server aggregation");
}

void check_strategy(Strategy strategy, std::span<const ClientRuntime> clients) {
  std::vector<std::string> diags;
  if (clients.empty()) diags.push_back("clients: at least one client required");
  if (strategy == Strategy::Centralized) {
    diags.push_back("strategy: centralized training has no federated rounds");
  }
  for (const auto& c : clients) {
    if (!(c.local_base.dim() == clients.front().local_base.dim())) {
      diags.push_back("clients: local bases disagree on shape");
      break;
    }
  }
  if (strategy == Strategy::FedIt) {
    for (const auto& c : clients) {
      if (c.rank != clients.front().rank) {
        diags.push_back("strategy: fedit requires identical ranks across clients");
        break;
      }
    }
  }
  if (!diags.empty()) throw ConfigError(std::move(diags));
}

RoundMetrics run_round(ServerState& server, std::vector<ClientRuntime>& clients, Strategy strategy,
                       const TrainConfig& train, const RoundOptions& options,
                       std::vector<WeightedUpdate>* uploads) {
  check_strategy(strategy, clients);
  const Dim dim = server.base.dim();
  const auto round = static_cast<std::uint64_t>(server.round);

  std::vector<std::optional<LoraAdapter>> trained(clients.size());
  for_each_client(clients.size(), options.threads, [&](std::size_t i) {
    const ClientRuntime& c = clients[i];
    const InitPolicy init{options.init_kind, options.init_scale,
                          derive_seed(c.seed, {round, kTagInit})};
    TrainConfig cfg = train;
    cfg.seed = derive_seed(c.seed, {round, kTagTrain});
    const ToyModel model{c.local_base, init_adapter(dim, c.rank, init)};
    trained[i] = local_train(model, c.shard, cfg);
  });

  std::vector<ClientShard> shards;
  std::vector<Index> ranks;
  for (const auto& c : clients) {
    shards.push_back(c.shard);
    ranks.push_back(c.rank);
  }
  std::vector<double> weights = scaling_factors(shards);
  if (options.scaling_override) std::fill(weights.begin(), weights.end(), *options.scaling_override);

  RoundMetrics metrics;
  metrics.strategy = strategy;
  metrics.round = server.round + 1;

  if (uploads) {
    uploads->clear();
    for (std::size_t i = 0; i < clients.size(); ++i) uploads->push_back({*trained[i], weights[i]});
  }

  if (strategy == Strategy::Standalone) {
    double global = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      clients[i].local_base = merge_into_base(clients[i].local_base, *trained[i]);
      global += evaluate_loss(clients[i].local_base.w(), options.eval, train.loss);
    }
    metrics.global_eval_loss = global / static_cast<double>(clients.size());
  } else {
    std::vector<WeightedUpdate> updates;
    updates.reserve(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) updates.push_back({*trained[i], weights[i]});
    const Matrix delta = aggregate_update(strategy, updates, &metrics.fedit_relative_noise);
    server.base = merge_delta(server.base, delta);
    for (auto& c : clients) c.local_base = server.base;
    metrics.global_eval_loss = evaluate_loss(server.base.w(), options.eval, train.loss);
  }
  for (const auto& c : clients) {
    metrics.per_client_eval_loss.push_back(shard_loss(c.local_base.w(), c.shard, train.loss));
  }

  charge_round(server.ledger, protocol_for(strategy), dim, ranks, static_cast<int>(clients.size()),
               server.round);
  metrics.params_up = server.ledger.total(server.round, Direction::Up);
  metrics.params_down = server.ledger.total(server.round, Direction::Down);
  ++server.round;
  return metrics;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  validate(config);
  return run_experiment(config, config.strategies.front());
}

ExperimentReport run_experiment(const ExperimentConfig& config, Strategy strategy) {
  validate(config);
  if (strategy == Strategy::FedIt &&
      !std::all_of(config.ranks.begin(), config.ranks.end(),
                   [&](Index r) { return r == config.ranks.front(); })) {
    throw ConfigError({"strategies: fedit averages A and B independently and requires identical ranks"});
  }

  TaskOptions task_opts;
  task_opts.perturbation_rank = config.teacher_rank;
  const GlobalTask task = gen_task(config.dim, config.samples_total, config.noise_std,
                                   derive_seed(config.seed, {kTagTask}), task_opts);
  auto [train_task, eval_samples] = split_holdout(task, kEvalFraction);
  SkewSpec skew = config.skew;
  skew.seed = derive_seed(config.seed, {kTagPartition});
  const std::vector<ClientShard> shards = partition(train_task, config.k_clients, skew);

  ExperimentReport report;
  report.strategy = strategy;
  report.seed = config.seed;
  report.description = describe_config(config);
  report.shard_fingerprint = fingerprint(shards);

  RoundOptions options;
  options.eval = make_batch(std::span<const Sample>(eval_samples));
  options.scaling_override = config.scaling_override;
  options.init_kind = config.init_kind;
  options.init_scale = config.init_scale;
  options.threads = config.threads;
  const LossKind loss = config.train.loss;

  RoundMetrics baseline;
  baseline.round = 0;
  baseline.strategy = strategy;
  baseline.global_eval_loss = evaluate_loss(task.base.w(), options.eval, loss);
  for (const auto& s : shards) baseline.per_client_eval_loss.push_back(shard_loss(task.base.w(), s, loss));
  report.rounds.push_back(baseline);

  if (strategy == Strategy::Centralized) {
    // One adapter on the pooled data, evaluated after every E epochs.
    ClientShard pooled{0, {}};
    for (const auto& s : shards) pooled.samples.insert(pooled.samples.end(), s.samples.begin(), s.samples.end());
    const Index rank = *std::max_element(config.ranks.begin(), config.ranks.end());
    const std::uint64_t seed = derive_seed(config.seed, {kTagClient, 0});
    ToyModel model{task.base, init_adapter(config.dim, rank,
                                           {config.init_kind, config.init_scale,
                                            derive_seed(seed, {0, kTagInit})})};
    for (int t = 0; t < config.rounds; ++t) {
      TrainConfig cfg = config.train;
      cfg.seed = derive_seed(seed, {static_cast<std::uint64_t>(t), kTagTrain});
      model.adapter = local_train(model, pooled, cfg);
      const Matrix merged = merge_into_base(model.base, model.adapter).w();
      RoundMetrics m;
      m.round = t + 1;
      m.strategy = strategy;
      m.global_eval_loss = evaluate_loss(merged, options.eval, loss);
      for (const auto& s : shards) m.per_client_eval_loss.push_back(shard_loss(merged, s, loss));
      report.rounds.push_back(std::move(m));
    }
    report.final_base = merge_into_base(model.base, model.adapter).w();
    return report;
  }

  ServerState server{task.base, 0, {}};
  std::vector<ClientRuntime> clients;
  clients.reserve(shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    clients.push_back({static_cast<int>(k), shards[k], config.ranks[k], task.base,
                       derive_seed(config.seed, {kTagClient, k})});
  }
  check_strategy(strategy, clients);

  for (int t = 0; t < config.rounds; ++t) {
    report.rounds.push_back(run_round(server, clients, strategy, config.train, options));
  }
  if (config.rounds == 0) {
    charge_broadcast(server.ledger, protocol_for(strategy), config.dim, config.k_clients);
  }
  if (!server.ledger.empty()) report.comm = summarize(server.ledger, config.rounds);
  report.final_base = server.base.w();
  return report;
}

ComparisonReport compare_strategies(const ExperimentConfig& config, std::span<const Strategy> strategies) {
  validate(config);
  if (strategies.empty()) throw ConfigError({"strategies: at least one strategy required"});
  const bool homogeneous = std::all_of(config.ranks.begin(), config.ranks.end(),
                                       [&](Index r) { return r == config.ranks.front(); });
  for (auto s : strategies) {
    if (s == Strategy::FedIt && !homogeneous) {
      throw ConfigError({"strategies: fedit averages A and B independently and requires identical ranks"});
    }
  }
  ComparisonReport out;
  for (auto s : strategies) out.runs.push_back(run_experiment(config, s));
  return out;
}

}  // namespace flora
