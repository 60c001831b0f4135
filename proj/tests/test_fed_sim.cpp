// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "flora/fed_sim.hpp"
#include "flora/report.hpp"
#include "test_util.hpp"

using namespace flora;
using namespace flora::testing;

namespace {

struct Setup {
  ServerState server;
  std::vector<ClientRuntime> clients;
  RoundOptions options;
  TrainConfig train;
};

Setup make_setup(int k, std::vector<Index> ranks, std::uint64_t seed = 1, double lr = 0.01) {
  const Dim d(6, 5);
  const auto task = gen_task(d, 400, 0.1, seed);
  auto [train_task, held] = split_holdout(task, 0.2);
  const auto shards = partition(train_task, k, SkewSpec{1.0, 1.0, 0.0, seed});
  Setup s{ServerState{task.base, 0, {}}, {}, {}, {}};
  for (int c = 0; c < k; ++c) {
    s.clients.push_back({c, shards[static_cast<std::size_t>(c)], ranks[static_cast<std::size_t>(c)],
                         task.base, derive_seed(seed, {static_cast<std::uint64_t>(c)})});
  }
  s.options.eval = make_batch(std::span<const Sample>(held));
  s.train.learning_rate = lr;
  s.train.batch_size = 8;
  return s;
}

ExperimentConfig small_config() {
  auto cfg = build_config({{"m", "6"}, {"n", "5"}, {"clients", "4"}, {"ranks", "3"},
                           {"samples", "400"}, {"rounds", "3"}, {"lr", "0.01"}});
  return cfg;
}

}  // namespace

TEST_CASE("aggregate_update flora fixture moves W by the weighted sum") {
  const BaseWeights prev(mat(2, 2, {0.5, -1, 2, 0}));
  const std::vector<WeightedUpdate> ups{{LoraAdapter(mat(1, 2, {2, 0}), mat(2, 1, {1, 0})), 0.5},
                                        {LoraAdapter(mat(1, 2, {0, 4}), mat(2, 1, {0, 1})), 0.5}};
  const auto next = merge_delta(prev, aggregate_update(Strategy::Flora, ups));
  CHECK(next.w() == prev.w() + mat(2, 2, {1, 0, 0, 2}));
  CHECK_THROWS_AS(aggregate_update(Strategy::Standalone, ups), std::invalid_argument);
}

TEST_CASE("a flora round adds exactly the weighted client updates") {
  auto s = make_setup(4, {1, 2, 3, 4});
  const Matrix before = s.server.base.w();
  std::vector<WeightedUpdate> uploads;
  run_round(s.server, s.clients, Strategy::Flora, s.train, s.options, &uploads);
  REQUIRE(uploads.size() == 4);
  const Matrix want = before + oracle_delta(uploads);
  Matrix mag = before.cwiseAbs();
  for (const auto& u : uploads) mag += u.weight * abs_product(u.adapter.b(), u.adapter.a());
  CHECK(((s.server.base.w() - want).cwiseAbs().array() <= 64 * kEps * mag.array()).all());
}

TEST_CASE("a fedit round adds the signal plus the cross terms") {
  auto s = make_setup(3, {2, 2, 2});
  const Matrix before = s.server.base.w();
  std::vector<WeightedUpdate> uploads;
  const auto m = run_round(s.server, s.clients, Strategy::FedIt, s.train, s.options, &uploads);
  const auto nr = fedit_noise(uploads);
  CHECK(max_abs(s.server.base.w() - (before + nr.signal + nr.cross)) <= 1e-13 * std::max(1.0, max_abs(before)));
  REQUIRE(m.fedit_relative_noise.has_value());
  CHECK(*m.fedit_relative_noise == nr.relative_noise);
}

TEST_CASE("one client makes every aggregation strategy agree") {
  std::vector<Matrix> results;
  for (auto strat : {Strategy::Flora, Strategy::FedIt, Strategy::ZeroPadding}) {
    auto s = make_setup(1, {3});
    run_round(s.server, s.clients, strat, s.train, s.options);
    results.push_back(s.server.base.w());
  }
  const double tol = 8 * kEps * std::max(1.0, max_abs(results[0]));
  CHECK(max_abs(results[1] - results[0]) <= tol);
  CHECK(max_abs(results[2] - results[0]) <= tol);
}

TEST_CASE("zero learning rate leaves W unchanged") {
  for (auto strat : {Strategy::Flora, Strategy::FedIt, Strategy::ZeroPadding, Strategy::Standalone}) {
    auto s = make_setup(3, {2, 2, 2}, 2, 0.0);
    const auto before = s.server.base;
    run_round(s.server, s.clients, strat, s.train, s.options);
    CHECK(s.server.base == before);
    for (const auto& c : s.clients) CHECK(c.local_base == before);
  }
}

TEST_CASE("clients are synchronized to the server after a round") {
  for (auto strat : {Strategy::Flora, Strategy::ZeroPadding}) {
    auto s = make_setup(4, {4, 1, 2, 2}, 3);
    for (int t = 0; t < 2; ++t) {
      run_round(s.server, s.clients, strat, s.train, s.options);
      for (const auto& c : s.clients) CHECK(fingerprint(c.local_base.w()) == fingerprint(s.server.base.w()));
    }
  }
}

TEST_CASE("standalone clients keep their own models") {
  auto s = make_setup(3, {2, 2, 2}, 4);
  const auto before = s.server.base;
  run_round(s.server, s.clients, Strategy::Standalone, s.train, s.options);
  CHECK(s.server.base == before);
  CHECK_FALSE(s.clients[0].local_base == s.clients[1].local_base);
}

TEST_CASE("round metrics and ledger") {
  auto s = make_setup(3, {2, 3, 1}, 5);
  const auto m0 = run_round(s.server, s.clients, Strategy::Flora, s.train, s.options);
  const auto m1 = run_round(s.server, s.clients, Strategy::Flora, s.train, s.options);
  CHECK(m0.round == 1);
  CHECK(m1.round == 2);
  CHECK(s.server.round == 2);
  CHECK(m0.per_client_eval_loss.size() == 3);
  CHECK(m1.params_up == 6 * 11);
  CHECK(m1.params_down == 3 * 6 * 11);
  CHECK(m0.params_down == 3 * 30 + 3 * 6 * 11);
  CHECK_FALSE(m0.fedit_relative_noise.has_value());
}

TEST_CASE("run_round rejects fedit with mixed ranks before training") {
  auto s = make_setup(2, {2, 1});
  const auto before = s.server.base;
  CHECK_THROWS_AS(run_round(s.server, s.clients, Strategy::FedIt, s.train, s.options), ConfigError);
  CHECK_THROWS_AS(run_round(s.server, s.clients, Strategy::Centralized, s.train, s.options), ConfigError);
  CHECK(s.server.base == before);
  CHECK(s.server.ledger.empty());
}

TEST_CASE("runs are reproducible and thread-count independent") {
  auto cfg = small_config();
  cfg.strategies = {Strategy::Flora, Strategy::ZeroPadding};
  const auto a = compare_strategies(cfg, cfg.strategies);
  const auto b = compare_strategies(cfg, cfg.strategies);
  cfg.threads = 3;
  const auto c = compare_strategies(cfg, cfg.strategies);
  CHECK(render_report(to_table(a)) == render_report(to_table(b)));
  CHECK(render_report(to_table(a)) == render_report(to_table(c)));
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    CHECK(fingerprint(a.runs[i].final_base) == fingerprint(c.runs[i].final_base));
  }
}

TEST_CASE("strategies in a comparison share the same shards") {
  auto cfg = small_config();
  const std::vector<Strategy> all{Strategy::Flora, Strategy::FedIt, Strategy::ZeroPadding,
                                  Strategy::Standalone, Strategy::Centralized};
  const auto r = compare_strategies(cfg, all);
  REQUIRE(r.runs.size() == 5);
  for (const auto& run : r.runs) {
    CHECK(run.shard_fingerprint == r.runs[0].shard_fingerprint);
    CHECK(run.rounds.size() == 4);
    CHECK(run.rounds[0].global_eval_loss == r.runs[0].rounds[0].global_eval_loss);
    CHECK(std::isfinite(run.final_global_loss()));
  }
  CHECK_FALSE(r.runs[4].comm.has_value());
  CHECK(r.runs[4].final_global_loss() < r.runs[4].rounds[0].global_eval_loss);
}

TEST_CASE("zero rounds yields only the baseline") {
  auto cfg = small_config();
  cfg.rounds = 0;
  const auto r = run_experiment(cfg);
  CHECK(r.rounds.size() == 1);
  REQUIRE(r.comm.has_value());
  CHECK(r.comm->ratio_to_full_ft == 1.0);
}

TEST_CASE("fedit on heterogeneous ranks is rejected by the experiment driver") {
  auto cfg = build_config({{"preset", "hetero"}});
  CHECK_THROWS_AS(run_experiment(cfg, Strategy::FedIt), ConfigError);
  const std::vector<Strategy> s{Strategy::Flora, Strategy::FedIt};
  CHECK_THROWS_AS(compare_strategies(cfg, s), ConfigError);
}

TEST_CASE("stacking beats averaging under feature shift") {
  auto cfg = build_config({{"preset", "homo16"}, {"rounds", "10"}});
  const std::vector<Strategy> s{Strategy::Flora, Strategy::FedIt};
  const auto r = compare_strategies(cfg, s);
  CHECK(r.runs[0].final_global_loss() < r.runs[1].final_global_loss());
}
