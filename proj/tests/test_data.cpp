// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

#include "flora/data.hpp"
#include "test_util.hpp"

using namespace flora;
using namespace flora::testing;

namespace {

std::vector<std::size_t> sizes(const std::vector<ClientShard>& shards) {
  std::vector<std::size_t> out;
  for (const auto& s : shards) out.push_back(s.size());
  return out;
}

std::vector<ClientShard> shards_of(std::initializer_list<std::size_t> counts) {
  std::vector<ClientShard> out;
  int id = 0;
  for (auto c : counts) {
    ClientShard s{id++, {}};
    s.samples.resize(c);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("noise-free targets come from the teacher") {
  const auto task = gen_task(Dim(4, 3), 50, 0.0, 1);
  for (const auto& s : task.samples) {
    const Vector y = task.teacher * s.x;
    CHECK(max_abs(s.y - y) <= 1e-14);
    Index arg = 0;
    s.y.maxCoeff(&arg);
    CHECK(s.label == arg);
  }
}

TEST_CASE("gen_task is deterministic") {
  const auto a = gen_task(Dim(5, 6), 30, 0.1, 7);
  const auto b = gen_task(Dim(5, 6), 30, 0.1, 7);
  CHECK(a.teacher == b.teacher);
  CHECK(a.base == b.base);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].x == b.samples[i].x);
    CHECK(a.samples[i].y == b.samples[i].y);
  }
  CHECK_FALSE(gen_task(Dim(5, 6), 30, 0.1, 8).teacher == a.teacher);
}

TEST_CASE("teacher and base differ by a rank-4 perturbation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto task = gen_task(Dim(16, 12), 10, 0.1, seed);
    const Eigen::JacobiSVD<Matrix> svd(task.teacher - task.base.w());
    const auto& sv = svd.singularValues();
    const auto rank = (sv.array() > 1e-9 * sv(0)).count();
    CHECK(rank == 4);
  }
  TaskOptions opts;
  opts.perturbation_rank = 2;
  const auto task = gen_task(Dim(8, 8), 10, 0.1, 3, opts);
  const Eigen::JacobiSVD<Matrix> svd(task.teacher - task.base.w());
  CHECK((svd.singularValues().array() > 1e-9 * svd.singularValues()(0)).count() == 2);
}

TEST_CASE("gen_task rejects bad arguments") {
  CHECK_THROWS_AS(gen_task(Dim(2, 2), 0, 0.1, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_task(Dim(2, 2), 5, -1.0, 1), std::invalid_argument);
}

TEST_CASE("split_holdout keeps the trailing fraction") {
  const auto task = gen_task(Dim(3, 3), 100, 0.1, 2);
  const auto [train, held] = split_holdout(task, 0.2);
  CHECK(train.samples.size() == 80);
  CHECK(held.size() == 20);
  CHECK(held.front().x == task.samples[80].x);
  CHECK_THROWS_AS(split_holdout(task, 1.0), std::invalid_argument);
}

TEST_CASE("iid partition is an equal-size disjoint cover") {
  const auto task = gen_task(Dim(4, 4), 103, 0.1, 3);
  const auto shards = partition(task, 10, SkewSpec{});
  const auto sz = sizes(shards);
  CHECK(*std::max_element(sz.begin(), sz.end()) - *std::min_element(sz.begin(), sz.end()) <= 1);
  std::set<std::size_t> seen;
  for (const auto& s : shards)
    for (const auto& x : s.samples) CHECK(seen.insert(x.source_index).second);
  CHECK(seen.size() == 103);
}

TEST_CASE("every skew covers the data exactly once") {
  const auto task = gen_task(Dim(4, 4), 400, 0.1, 4);
  for (auto kind : {SkewKind::FeatureShift, SkewKind::SizeSkew, SkewKind::LabelSkew}) {
    const auto shards = partition(task, 7, SkewSpec::of(kind, 1.5, 9));
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& s : shards) {
      CHECK(s.size() >= 1);
      total += s.size();
      for (const auto& x : s.samples) seen.insert(x.source_index);
    }
    CHECK(total == 400);
    CHECK(seen.size() == 400);
  }
}

TEST_CASE("size skew produces unequal shards") {
  const auto task = gen_task(Dim(4, 4), 1000, 0.1, 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto sz = sizes(partition(task, 10, SkewSpec::of(SkewKind::SizeSkew, 1.5, seed)));
    const double ratio = static_cast<double>(*std::max_element(sz.begin(), sz.end())) /
                         static_cast<double>(*std::min_element(sz.begin(), sz.end()));
    CHECK(ratio > 3.0);
  }
}

TEST_CASE("zero strength equals the iid split") {
  const auto task = gen_task(Dim(4, 4), 120, 0.1, 6);
  SkewSpec iid;
  iid.seed = 3;
  const auto a = partition(task, 5, iid);
  for (auto kind : {SkewKind::FeatureShift, SkewKind::SizeSkew, SkewKind::LabelSkew}) {
    CHECK(fingerprint(partition(task, 5, SkewSpec::of(kind, 0.0, 3))) == fingerprint(a));
  }
}

TEST_CASE("label skew concentrates each client's preferred class") {
  const auto task = gen_task(Dim(4, 6), 2000, 0.1, 7);
  const auto shards = partition(task, 4, SkewSpec::of(SkewKind::LabelSkew, 3.0, 1));
  std::vector<double> global(4, 0.0);
  for (const auto& s : task.samples) global[static_cast<std::size_t>(s.label)] += 1.0 / 2000;
  for (const auto& shard : shards) {
    const int preferred = shard.client_id % 4;
    double frac = 0.0;
    for (const auto& s : shard.samples) frac += s.label == preferred ? 1.0 : 0.0;
    frac /= static_cast<double>(shard.size());
    CHECK(frac > global[static_cast<std::size_t>(preferred)]);
  }
}

TEST_CASE("feature shift moves client input means apart") {
  const auto task = gen_task(Dim(4, 4), 800, 0.0, 8);
  const auto plain = partition(task, 4, SkewSpec{});
  const auto shifted = partition(task, 4, SkewSpec::of(SkewKind::FeatureShift, 2.0));
  auto spread = [](const std::vector<ClientShard>& shards) {
    std::vector<Vector> means;
    for (const auto& s : shards) {
      Vector mu = Vector::Zero(4);
      for (const auto& x : s.samples) mu += x.x;
      means.push_back(mu / static_cast<double>(s.size()));
    }
    double d = 0.0;
    for (std::size_t i = 1; i < means.size(); ++i) d += (means[i] - means[0]).norm();
    return d;
  };
  CHECK(spread(shifted) > 4 * spread(plain));
  // Shifted samples stay consistent with the teacher.
  for (const auto& s : shifted)
    for (const auto& x : s.samples) CHECK(max_abs(x.y - task.teacher * x.x) <= 1e-12);
}

TEST_CASE("partition failures") {
  const auto task = gen_task(Dim(2, 2), 5, 0.1, 9);
  CHECK_THROWS_AS(partition(task, 6, SkewSpec{}), std::invalid_argument);
  CHECK_THROWS_AS(partition(task, 0, SkewSpec{}), std::invalid_argument);
  CHECK_THROWS_AS(partition(task, 2, SkewSpec::of(SkewKind::SizeSkew, -1.0)), std::invalid_argument);
}

TEST_CASE("partition is deterministic") {
  const auto task = gen_task(Dim(3, 5), 300, 0.1, 10);
  const SkewSpec spec{1.0, 1.0, 0.5, 77};
  CHECK(fingerprint(partition(task, 6, spec)) == fingerprint(partition(task, 6, spec)));
  SkewSpec other = spec;
  other.seed = 78;
  CHECK(fingerprint(partition(task, 6, other)) != fingerprint(partition(task, 6, spec)));
}

TEST_CASE("scaling factors") {
  const auto f = scaling_factors(shards_of({15, 35, 50}));
  CHECK(f[0] == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(f[1] == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(f[2] == doctest::Approx(0.5).epsilon(1e-15));
  for (double p : scaling_factors(shards_of({7, 7, 7, 7, 7, 7, 7, 7, 7, 7}))) CHECK(p == 0.1);
  CHECK(scaling_factors(shards_of({13})) == std::vector<double>{1.0});
  CHECK_THROWS_AS(scaling_factors(std::vector<ClientShard>{}), std::invalid_argument);
  CHECK_THROWS_AS(scaling_factors(shards_of({3, 0})), std::invalid_argument);
}

TEST_CASE("scaling factors sum to one and follow their shards") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClientShard> shards;
    for (std::uint64_t k = 0, count = 1 + rng.below(12); k < count; ++k) {
      ClientShard s{static_cast<int>(k), {}};
      s.samples.resize(1 + rng.below(500));
      shards.push_back(std::move(s));
    }
    const auto f = scaling_factors(shards);
    CHECK(std::accumulate(f.begin(), f.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<ClientShard> reversed(shards.rbegin(), shards.rend());
    auto g = scaling_factors(reversed);
    std::reverse(g.begin(), g.end());
    CHECK(f == g);
  }
}

TEST_CASE("shard export round-trip") {
  const auto task = gen_task(Dim(3, 4), 90, 0.1, 12);
  const auto shards = partition(task, 4, SkewSpec{1.0, 1.0, 0.0, 5});
  const auto path = std::filesystem::temp_directory_path() / "flora_shards_roundtrip.csv";
  write_shards(shards, path);
  const auto back = read_shards(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    CHECK(back[k].client_id == shards[k].client_id);
    REQUIRE(back[k].size() == shards[k].size());
    for (std::size_t i = 0; i < shards[k].size(); ++i) {
      CHECK(back[k].samples[i].x == shards[k].samples[i].x);
      CHECK(back[k].samples[i].y == shards[k].samples[i].y);
      CHECK(back[k].samples[i].label == shards[k].samples[i].label);
    }
  }
  CHECK_THROWS_AS(read_shards(path), std::runtime_error);
}

TEST_CASE("skew names") {
  for (auto k : {SkewKind::Iid, SkewKind::FeatureShift, SkewKind::SizeSkew, SkewKind::LabelSkew}) {
    CHECK(parse_skew_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_skew_kind("dirichlet"), std::invalid_argument);
}
