// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "flora/aggregation.hpp"
#include "test_util.hpp"

using namespace flora;
using namespace flora::testing;

namespace {

std::vector<WeightedUpdate> two_client_fixture() {
  return {{LoraAdapter(mat(1, 2, {2, 0}), mat(2, 1, {1, 0})), 0.5},
          {LoraAdapter(mat(1, 2, {0, 4}), mat(2, 1, {0, 1})), 0.5}};
}

// sum_k p_k B_k A_k by explicit loops over every entry and rank index.
Matrix elementwise_oracle(const Instance& inst) {
  Matrix out = Matrix::Zero(inst.dim.m, inst.dim.n);
  for (const auto& u : inst.updates)
    for (Index i = 0; i < inst.dim.m; ++i)
      for (Index j = 0; j < inst.dim.n; ++j)
        for (Index q = 0; q < u.adapter.rank(); ++q)
          out(i, j) += u.weight * u.adapter.b()(i, q) * u.adapter.a()(q, j);
  return out;
}

Matrix magnitude(const Instance& inst) {
  Matrix out = Matrix::Zero(inst.dim.m, inst.dim.n);
  for (const auto& u : inst.updates) out += u.weight * abs_product(u.adapter.b(), u.adapter.a());
  return out;
}

Index total_rank(const Instance& inst) {
  Index r = 0;
  for (const auto& u : inst.updates) r += u.adapter.rank();
  return r;
}

// sum over ordered pairs i != j of p_i p_j B_i A_j.
Matrix cross_double_sum(std::span<const WeightedUpdate> ups) {
  const Dim d = ups.front().adapter.dim();
  Matrix out = Matrix::Zero(d.m, d.n);
  for (std::size_t i = 0; i < ups.size(); ++i)
    for (std::size_t j = 0; j < ups.size(); ++j)
      if (i != j)
        out += ups[i].weight * ups[j].weight * naive_product(ups[i].adapter.b(), ups[j].adapter.a());
  return out;
}

}  // namespace

TEST_CASE("flora fixture") {
  const auto ups = two_client_fixture();
  const auto g = aggregate_flora(ups);
  CHECK(g.rank() == 2);
  CHECK(adapter_delta(g) == mat(2, 2, {1, 0, 0, 2}));
  CHECK(oracle_delta(ups) == mat(2, 2, {1, 0, 0, 2}));
}

TEST_CASE("flora with one client at p = 1 returns the client") {
  Rng rng(1);
  const auto ad = random_adapter(rng, Dim(5, 3), 4);
  const std::vector<WeightedUpdate> ups{{ad, 1.0}};
  CHECK(aggregate_flora(ups) == ad);
  CHECK(aggregate_fedit(ups) == ad);
  CHECK(aggregate_zero_padding(ups) == ad);
}

TEST_CASE("flora global rank is the sum of client ranks") {
  const std::vector<Index> ranks{64, 32, 16, 16, 8, 8, 4, 4, 4, 4};
  Rng rng(2);
  std::vector<WeightedUpdate> ups;
  for (auto r : ranks) ups.push_back({random_adapter(rng, Dim(6, 5), r), 0.1});
  CHECK(aggregate_flora(ups).rank() == 160);
}

TEST_CASE("flora equals the weighted sum of client updates") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = random_instance(seed, seed % 2 == 0);
    const Matrix got = adapter_delta(aggregate_flora(inst.updates));
    const Matrix want = elementwise_oracle(inst);
    const Matrix tol = magnitude(inst) * (8.0 * total_rank(inst) * kEps);
    CHECK(((got - want).cwiseAbs().array() <= tol.array()).all());
  }
}

TEST_CASE("fedit fixture") {
  const auto ups = two_client_fixture();
  const auto g = aggregate_fedit(ups);
  CHECK(g.a() == mat(1, 2, {1, 2}));
  CHECK(g.b() == mat(2, 1, {0.5, 0.5}));
  CHECK(adapter_delta(g) == mat(2, 2, {0.5, 1, 0.5, 1}));
}

TEST_CASE("fedit with identical clients and weights summing to one") {
  Rng rng(4);
  const auto ad = random_adapter(rng, Dim(4, 4), 2);
  const std::vector<WeightedUpdate> ups{{ad, 0.25}, {ad, 0.25}, {ad, 0.5}};
  const Matrix got = adapter_delta(aggregate_fedit(ups));
  CHECK((got - adapter_delta(ad)).cwiseAbs().maxCoeff() <=
        abs_product(ad.b(), ad.a()).maxCoeff() * 16 * kEps);
}

TEST_CASE("fedit rejects heterogeneous ranks") {
  Rng rng(5);
  const std::vector<WeightedUpdate> ups{{random_adapter(rng, Dim(3, 3), 2), 0.5},
                                        {random_adapter(rng, Dim(3, 3), 1), 0.5}};
  CHECK_FALSE(homogeneous_ranks(ups));
  CHECK_THROWS_AS(aggregate_fedit(ups), UnsupportedRanksError);
  CHECK_THROWS_AS(fedit_noise(ups), UnsupportedRanksError);
}

TEST_CASE("aggregation input validation") {
  CHECK_THROWS_AS(aggregate_flora(std::vector<WeightedUpdate>{}), std::invalid_argument);
  Rng rng(6);
  const std::vector<WeightedUpdate> negative{{random_adapter(rng, Dim(2, 2), 1), -0.5}};
  CHECK_THROWS_AS(aggregate_flora(negative), std::invalid_argument);
  const std::vector<WeightedUpdate> mixed{{random_adapter(rng, Dim(2, 2), 1), 0.5},
                                          {random_adapter(rng, Dim(2, 3), 1), 0.5}};
  CHECK_THROWS_AS(aggregate_flora(mixed), std::invalid_argument);
}

TEST_CASE("fedit deviates from the true sum on generic inputs") {
  int deviating = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = random_instance(seed, true);
    if (inst.updates.size() < 2) continue;
    const Matrix diff = adapter_delta(aggregate_fedit(inst.updates)) - oracle_delta(inst.updates);
    if (diff.norm() > 1e-6 * oracle_delta(inst.updates).norm()) ++deviating;
  }
  CHECK(deviating > 0);
}

TEST_CASE("fedit noise fixture") {
  const auto ups = two_client_fixture();
  const auto nr = fedit_noise(ups);
  CHECK(nr.signal == mat(2, 2, {0.5, 0, 0, 1}));
  CHECK(nr.cross == mat(2, 2, {0, 1, 0.5, 0}));
  CHECK(nr.relative_noise == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("fedit noise decomposition against the double sum") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = random_instance(300 + seed, true);
    const auto nr = fedit_noise(inst.updates);
    const Matrix want = cross_double_sum(inst.updates);
    const double k = static_cast<double>(inst.updates.size());
    Matrix mag = Matrix::Zero(inst.dim.m, inst.dim.n);
    for (const auto& x : inst.updates)
      for (const auto& y : inst.updates)
        mag += x.weight * y.weight * abs_product(x.adapter.b(), y.adapter.a());
    const double tol = 16.0 * k * k * total_rank(inst) * kEps * std::max(1.0, max_abs(mag));
    CHECK(max_abs(nr.cross - want) <= tol);
    const Matrix averaged = adapter_delta(aggregate_fedit(inst.updates));
    CHECK(max_abs(nr.signal + nr.cross - averaged) <= tol);
  }
}

TEST_CASE("fedit noise with one client is zero") {
  Rng rng(8);
  const auto ad = random_adapter(rng, Dim(3, 4), 2);
  const std::vector<WeightedUpdate> ups{{ad, 1.0}};
  const auto nr = fedit_noise(ups);
  CHECK(nr.cross.isZero(0.0));
  CHECK(nr.signal == adapter_delta(ad));
  CHECK(nr.relative_noise == 0.0);
}

TEST_CASE("fedit noise for K identical adapters at p = 1/K") {
  Rng rng(9);
  const auto ad = random_adapter(rng, Dim(5, 5), 3);
  const Matrix ba = naive_product(ad.b(), ad.a());
  for (int k : {2, 3, 5, 10}) {
    const double p = 1.0 / k;
    std::vector<WeightedUpdate> ups(k, WeightedUpdate{ad, p});
    const auto nr = fedit_noise(ups);
    const double tol = 64.0 * k * kEps * std::max(1.0, max_abs(ba));
    CHECK(max_abs(nr.cross - (1.0 - p) * ba) <= tol);
    CHECK(max_abs(nr.signal - p * ba) <= tol);
  }
}

TEST_CASE("relative noise of all-zero updates is zero") {
  const LoraAdapter zero(Matrix::Zero(1, 2), Matrix::Zero(2, 1));
  const std::vector<WeightedUpdate> ups{{zero, 0.5}, {zero, 0.5}};
  CHECK(fedit_noise(ups).relative_noise == 0.0);
}

TEST_CASE("zero padding equals fedit bit for bit on homogeneous ranks") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_instance(500 + seed, true);
    CHECK(aggregate_zero_padding(inst.updates) == aggregate_fedit(inst.updates));
  }
}

TEST_CASE("zero padding hand example with ranks 1 and 2") {
  const std::vector<WeightedUpdate> ups{
      {LoraAdapter(mat(1, 2, {2, 0}), mat(2, 1, {1, 0})), 0.5},
      {LoraAdapter(mat(2, 2, {0, 4, 1, 0}), mat(2, 2, {0, 1, 1, 0})), 0.5}};
  const auto g = aggregate_zero_padding(ups);
  CHECK(g.rank() == 2);
  CHECK(g.a() == mat(2, 2, {1, 2, 0.5, 0}));
  CHECK(g.b() == mat(2, 2, {0.5, 0.5, 0.5, 0}));
  CHECK(adapter_delta(g) == mat(2, 2, {0.75, 1, 0.5, 1}));
}

TEST_CASE("pad_to_rank") {
  const LoraAdapter ad(mat(1, 2, {1, 2}), mat(2, 1, {3, 4}));
  const auto p = pad_to_rank(ad, 3);
  CHECK(p.rank() == 3);
  CHECK(adapter_delta(p) == adapter_delta(ad));
  CHECK(pad_to_rank(ad, 1) == ad);
  CHECK_THROWS_AS(pad_to_rank(p, 1), std::invalid_argument);
}

TEST_CASE("oracle_delta edge cases") {
  Rng rng(10);
  const auto ad = random_adapter(rng, Dim(3, 3), 2);
  CHECK(oracle_delta(std::vector<WeightedUpdate>{{ad, 0.0}, {ad, 0.0}}).isZero(0.0));
  CHECK(oracle_delta(std::vector<WeightedUpdate>{{ad, 1.0}}) == adapter_delta(ad));
}

TEST_CASE("shuffled stack equals the plain stack's product") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_instance(700 + seed, false);
    const Matrix plain = adapter_delta(aggregate_flora(inst.updates));
    const auto shuffled = shuffled_stack(inst.updates, seed);
    CHECK(shuffled.rank() == total_rank(inst));
    const Matrix tol = magnitude(inst) * (8.0 * total_rank(inst) * kEps);
    CHECK(((adapter_delta(shuffled) - plain).cwiseAbs().array() <= tol.array() + 1e-12).all());
  }
}

TEST_CASE("shuffled stack of a single rank-1 piece is the plain stack") {
  const std::vector<WeightedUpdate> ups{{LoraAdapter(mat(1, 2, {1, 2}), mat(2, 1, {3, 4})), 0.5}};
  CHECK(shuffled_stack(ups, 17) == aggregate_flora(ups));
}

TEST_CASE("shuffled stack interleaves clients") {
  // Ranks (2, 1, 1): every rank-1 piece carries a distinct marker in A, so the
  // output row order reveals the owning client.
  const std::vector<WeightedUpdate> ups{
      {LoraAdapter(mat(2, 1, {1, 2}), mat(1, 2, {1, 1})), 1.0},
      {LoraAdapter(mat(1, 1, {3}), mat(1, 1, {1})), 1.0},
      {LoraAdapter(mat(1, 1, {4}), mat(1, 1, {1})), 1.0}};
  const auto owner = [](double marker) { return marker < 2.5 ? 0 : static_cast<int>(marker) - 2; };
  bool separated = false;
  std::set<std::vector<double>> orders;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = shuffled_stack(ups, seed);
    REQUIRE(s.rank() == 4);
    std::vector<double> order;
    bool adjacent = false;
    for (Index i = 0; i < 4; ++i) {
      order.push_back(s.a()(i, 0));
      if (i > 0 && owner(s.a()(i, 0)) == owner(s.a()(i - 1, 0))) adjacent = true;
    }
    orders.insert(order);
    separated = separated || !adjacent;
  }
  CHECK(separated);
  CHECK(orders.size() > 1);
}
