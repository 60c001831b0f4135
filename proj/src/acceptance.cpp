// SPDX-License-Identifier: Apache-2.0

#include "flora/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "flora/aggregation.hpp"
#include "flora/comm.hpp"
#include "flora/config.hpp"
#include "flora/fed_sim.hpp"
#include "flora/lora.hpp"
#include "flora/random.hpp"
#include "flora/report.hpp"
#include "flora/training.hpp"

namespace flora::acceptance {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

Matrix gaussian(Rng& rng, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = rng.normal();
  return out;
}

// Random aggregation instance: K in [2, 10], ranks in [1, 8], m, n in
// [2, 32], Gaussian factors and Dirichlet(1) weights.
std::vector<WeightedUpdate> random_instance(std::uint64_t seed, bool homogeneous) {
  Rng rng(seed);
  const auto k = static_cast<std::size_t>(2 + rng.below(9));
  const Index m = 2 + static_cast<Index>(rng.below(31));
  const Index n = 2 + static_cast<Index>(rng.below(31));
  const Index shared_rank = 1 + static_cast<Index>(rng.below(8));
  std::vector<double> w(k);
  double total = 0.0;
  for (auto& x : w) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  std::vector<WeightedUpdate> out;
  for (std::size_t i = 0; i < k; ++i) {
    const Index r = homogeneous ? shared_rank : 1 + static_cast<Index>(rng.below(8));
    Matrix a = gaussian(rng, r, n);
    Matrix b = gaussian(rng, m, r);
    out.push_back({LoraAdapter(std::move(a), std::move(b)), w[i] / total});
  }
  return out;
}

// sum_k p_k sum_i b_k[x][i] a_k[i][y], entry by entry.
Matrix oracle_elementwise(const std::vector<WeightedUpdate>& updates) {
  const Dim dim = updates.front().adapter.dim();
  Matrix out = Matrix::Zero(dim.m, dim.n);
  for (const auto& u : updates) {
    const auto& a = u.adapter.a();
    const auto& b = u.adapter.b();
    for (Index x = 0; x < dim.m; ++x) {
      for (Index y = 0; y < dim.n; ++y) {
        double acc = 0.0;
        for (Index i = 0; i < u.adapter.rank(); ++i) acc += b(x, i) * a(i, y);
        out(x, y) += u.weight * acc;
      }
    }
  }
  return out;
}

// sum_{i != j} p_i p_j B_i A_j.
Matrix cross_double_sum(const std::vector<WeightedUpdate>& updates) {
  const Dim dim = updates.front().adapter.dim();
  Matrix out = Matrix::Zero(dim.m, dim.n);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    for (std::size_t j = 0; j < updates.size(); ++j) {
      if (i == j) continue;
      out += updates[i].weight * updates[j].weight * (updates[i].adapter.b() * updates[j].adapter.a());
    }
  }
  return out;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

CriterionResult make(int id, const std::string& name) { return {id, name, false, "", 0.0}; }

// 1 -------------------------------------------------------------------------
CriterionResult stacking_exactness(const Options&) {
  auto r = make(1, "stacking exactness");
  const auto start = Clock::now();
  double worst = 0.0, worst_lib = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto updates = random_instance(1000 + i, false);
    const Matrix got = adapter_delta(aggregate_flora(updates));
    worst = std::max(worst, max_abs(got - oracle_elementwise(updates)));
    worst_lib = std::max(worst_lib, max_abs(got - oracle_delta(updates)));
  }
  r.seconds = seconds_since(start);
  r.passed = worst <= 1e-10 && worst_lib <= 1e-10 && r.seconds < 1.0;
  r.detail = "100 heterogeneous instances, max |flora - oracle| = " + fmt("%.3g", std::max(worst, worst_lib)) +
             " (tol 1e-10), runtime " + fmt("%.3f", r.seconds) + " s (limit 1 s)";
  return r;
}

// 2 -------------------------------------------------------------------------
CriterionResult noise_decomposition(const Options&) {
  auto r = make(2, "noise decomposition");
  const auto start = Clock::now();
  bool ok = true;
  double worst_ratio = 0.0, worst_cross = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto updates = random_instance(2000 + i, true);
    const NoiseReport noise = fedit_noise(updates);
    const Matrix averaged = adapter_delta(aggregate_fedit(updates));
    const double k = static_cast<double>(updates.size());
    const double scale = std::max(1.0, max_abs(averaged));
    const double gap = max_abs(noise.signal + noise.cross - averaged);
    worst_ratio = std::max(worst_ratio, gap / (kEps * scale));
    ok = ok && gap <= 8.0 * k * kEps * scale;
    // Independent double-sum oracle for the cross term.
    const Matrix expected = cross_double_sum(updates);
    worst_cross = std::max(worst_cross, max_abs(noise.cross - expected) / std::max(1.0, max_abs(expected)));
  }
  ok = ok && worst_cross <= 1e-12;

  const std::vector<WeightedUpdate> fixture = {
      {LoraAdapter(Matrix{{2.0, 0.0}}, Matrix{{1.0}, {0.0}}), 0.5},
      {LoraAdapter(Matrix{{0.0, 4.0}}, Matrix{{0.0}, {1.0}}), 0.5},
  };
  const Matrix expected_cross{{0.0, 1.0}, {0.5, 0.0}};
  const bool fixture_ok = fedit_noise(fixture).cross == expected_cross;
  r.seconds = seconds_since(start);
  r.passed = ok && fixture_ok;
  r.detail = "max |signal + cross - fedit| = " + fmt("%.2f", worst_ratio) +
             " eps*scale (limit 8K), cross vs double sum rel " + fmt("%.2g", worst_cross) +
             ", hand fixture cross [[0,1],[0.5,0]] " + (fixture_ok ? "exact" : "MISMATCH");
  return r;
}

// 3 -------------------------------------------------------------------------
CriterionResult fedit_bias(const Options&) {
  auto r = make(3, "FedIT bias is strict");
  const auto start = Clock::now();
  double smallest = std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto updates = random_instance(2000 + i, true);
    const double bias = (adapter_delta(aggregate_fedit(updates)) - oracle_elementwise(updates)).norm();
    smallest = std::min(smallest, bias);
  }
  r.seconds = seconds_since(start);
  r.passed = smallest > 1e-12;
  r.detail = "100 homogeneous instances (K >= 2), min ||fedit - oracle||_F = " + fmt("%.3g", smallest) +
             " (must exceed 1e-12)";
  return r;
}

// 4 -------------------------------------------------------------------------
CriterionResult zero_padding_collapse(const Options&) {
  auto r = make(4, "zero-padding collapse");
  const auto start = Clock::now();
  int identical = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto updates = random_instance(4000 + i, true);
    const LoraAdapter zp = aggregate_zero_padding(updates);
    const LoraAdapter fi = aggregate_fedit(updates);
    if (fingerprint(zp.a()) == fingerprint(fi.a()) && fingerprint(zp.b()) == fingerprint(fi.b())) ++identical;
  }
  r.seconds = seconds_since(start);
  r.passed = identical == 50;
  r.detail = std::to_string(identical) + "/50 homogeneous instances bit-identical to FedIT";
  return r;
}

// 5 -------------------------------------------------------------------------
CriterionResult privacy_shuffle(const Options&) {
  auto r = make(5, "privacy shuffle");
  const auto start = Clock::now();
  std::vector<std::vector<WeightedUpdate>> instances;
  for (std::uint64_t i = 0; i < 19; ++i) instances.push_back(random_instance(5000 + i, false));
  {
    // Ten-client heterogeneous profile, equal weights.
    const std::vector<Index> profile = {64, 32, 16, 16, 8, 8, 4, 4, 4, 4};
    Rng rng(5999);
    std::vector<WeightedUpdate> hetero;
    for (auto rank : profile) hetero.push_back({LoraAdapter(gaussian(rng, rank, 24), gaussian(rng, 20, rank)), 0.1});
    instances.push_back(std::move(hetero));
  }
  double worst = 0.0;
  Index hetero_rank = 0;
  for (const auto& updates : instances) {
    const Matrix reference = adapter_delta(aggregate_flora(updates));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const LoraAdapter shuffled = shuffled_stack(updates, seed);
      worst = std::max(worst, max_abs(adapter_delta(shuffled) - reference));
      if (&updates == &instances.back()) hetero_rank = shuffled.rank();
    }
  }
  r.seconds = seconds_since(start);
  r.passed = worst <= 1e-10 && hetero_rank == 160;
  r.detail = "20 seeds x 20 instances, max |shuffled - flora| = " + fmt("%.3g", worst) +
             " (tol 1e-10); profile [64,32,16,16,8,8,4,4,4,4] global rank " + std::to_string(hetero_rank) +
             " (expected 160)";
  return r;
}

// 6 -------------------------------------------------------------------------
double batch_loss(const Matrix& w, const Matrix& a, const Matrix& b, const Batch& batch, LossKind kind) {
  return loss_and_grads(ToyModel{BaseWeights(w), LoraAdapter(a, b)}, batch, kind).loss;
}

CriterionResult gradient_correctness(const Options&) {
  auto r = make(6, "gradient correctness");
  const auto start = Clock::now();
  constexpr double h = 1e-6;
  double worst_rel = 0.0, worst_identity = 0.0;
  bool ok = true;
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng(6000 + i);
    const Index m = 1 + static_cast<Index>(rng.below(8));
    const Index n = 1 + static_cast<Index>(rng.below(8));
    const Index rank = 1 + static_cast<Index>(rng.below(3));
    const auto count = static_cast<std::size_t>(1 + rng.below(6));
    const LossKind kind = i % 2 == 0 ? LossKind::SquaredError : LossKind::SoftmaxCrossEntropy;
    const Matrix w = gaussian(rng, m, n);
    Matrix a = gaussian(rng, rank, n);
    Matrix b = gaussian(rng, m, rank);
    std::vector<Sample> samples(count);
    for (auto& s : samples) {
      s.x = gaussian(rng, n, 1);
      s.y = gaussian(rng, m, 1);
      s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    }
    const Batch batch = make_batch(std::span<const Sample>(samples));
    const ToyModel model{BaseWeights(w), LoraAdapter(a, b)};
    const Gradients g = loss_and_grads(model, batch, kind);

    auto check = [&](Matrix& param, const Matrix& analytic) {
      for (Index x = 0; x < param.rows(); ++x) {
        for (Index y = 0; y < param.cols(); ++y) {
          const double saved = param(x, y);
          param(x, y) = saved + h;
          const double up = batch_loss(w, a, b, batch, kind);
          param(x, y) = saved - h;
          const double down = batch_loss(w, a, b, batch, kind);
          param(x, y) = saved;
          const double fd = (up - down) / (2.0 * h);
          const double err = std::abs(fd - analytic(x, y));
          const double mag = std::max(std::abs(fd), std::abs(analytic(x, y)));
          if (err > 1e-8) {
            worst_rel = std::max(worst_rel, err / mag);
            ok = ok && err <= 1e-5 * mag;
          }
        }
      }
    };
    check(a, g.d_a);
    check(b, g.d_b);

    const double lr = 0.05 * static_cast<double>(1 + rng.below(10));
    const StepIdentity id = check_step_identity(model.adapter, g, lr);
    worst_identity = std::max(worst_identity, id.residual / kEps);
    ok = ok && id.residual <= 8.0 * kEps;
  }
  r.seconds = seconds_since(start);
  r.passed = ok;
  r.detail = "50 instances, worst FD relative error " + fmt("%.3g", worst_rel) +
             " (tol 1e-5), one-step identity residual " + fmt("%.2f", worst_identity) + " eps (limit 8)";
  return r;
}

// 7 -------------------------------------------------------------------------
ExperimentConfig desk_config(std::uint64_t seed, std::vector<Index> ranks) {
  ExperimentConfig cfg;
  cfg.dim = Dim(16, 16);
  cfg.k_clients = 10;
  cfg.ranks = std::move(ranks);
  cfg.rounds = 10;
  cfg.train.local_epochs = 1;
  cfg.train.learning_rate = 0.0003;
  cfg.teacher_rank = 4;
  cfg.skew.feature_shift = 1.0;
  cfg.skew.size_skew = 1.0;
  cfg.seed = seed;
  return cfg;
}

CriterionResult stacking_beats_averaging(const Options&) {
  auto r = make(7, "desk-scale strategy ranking");
  const auto start = Clock::now();
  int homo_wins = 0, hetero_wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto homo = desk_config(seed, std::vector<Index>(10, 16));
    const Strategy homo_pair[] = {Strategy::Flora, Strategy::FedIt};
    const auto h = compare_strategies(homo, homo_pair);
    if (h.runs[0].final_global_loss() < h.runs[1].final_global_loss()) ++homo_wins;

    const auto het = desk_config(seed, {64, 32, 16, 16, 8, 8, 4, 4, 4, 4});
    const Strategy het_pair[] = {Strategy::Flora, Strategy::ZeroPadding};
    const auto z = compare_strategies(het, het_pair);
    if (z.runs[0].final_global_loss() < z.runs[1].final_global_loss()) ++hetero_wins;
  }
  r.seconds = seconds_since(start);
  r.passed = homo_wins >= 18 && hetero_wins >= 18 && r.seconds < 60.0;
  r.detail = "FLoRA < FedIT in " + std::to_string(homo_wins) + "/20 seeds, FLoRA < zero-padding in " +
             std::to_string(hetero_wins) + "/20 seeds (need >= 18 each), runtime " + fmt("%.1f", r.seconds) +
             " s (limit 60 s)";
  return r;
}

// 8 -------------------------------------------------------------------------
CriterionResult noise_growth(const Options&) {
  auto r = make(8, "noise growth with K");
  const auto start = Clock::now();
  std::vector<double> medians;
  for (int k : {2, 5, 10}) {
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(derive_seed(8000 + seed, {static_cast<std::uint64_t>(k)}));
      std::vector<WeightedUpdate> updates;
      for (int c = 0; c < k; ++c) {
        updates.push_back({LoraAdapter(gaussian(rng, 4, 16), gaussian(rng, 16, 4)), 1.0 / k});
      }
      values.push_back(fedit_noise(updates).relative_noise);
    }
    std::sort(values.begin(), values.end());
    medians.push_back(0.5 * (values[9] + values[10]));
  }
  r.seconds = seconds_since(start);
  r.passed = medians[0] < medians[1] && medians[1] < medians[2];
  r.detail = "median relative noise K=2: " + fmt("%.4f", medians[0]) + ", K=5: " + fmt("%.4f", medians[1]) +
             ", K=10: " + fmt("%.4f", medians[2]) + " (must strictly increase)";
  return r;
}

// 9 -------------------------------------------------------------------------
CriterionResult communication(const Options&) {
  auto r = make(9, "communication accounting");
  const auto start = Clock::now();
  const std::int64_t m = 4096, n = 4096, rank = 16, k = 10, rounds = 3;
  const Dim dim(m, n);
  const bool fraction_ok = trainable_fraction(dim, rank) == 0.0078125;

  const std::vector<Index> ranks(static_cast<std::size_t>(k), rank);
  auto per_client_total = [&](Protocol p) {
    CommLedger ledger;
    for (int t = 0; t < rounds; ++t) charge_round(ledger, p, dim, ranks, static_cast<int>(k), t);
    std::vector<std::int64_t> per(static_cast<std::size_t>(k), 0);
    for (const auto& e : ledger.events()) per[static_cast<std::size_t>(e.party)] += e.param_count;
    bool equal = std::all_of(per.begin(), per.end(), [&](std::int64_t v) { return v == per.front(); });
    return std::pair{per.front(), equal};
  };
  const auto [flora_total, flora_even] = per_client_total(Protocol::Flora);
  const auto [fedit_total, fedit_even] = per_client_total(Protocol::FedIt);
  const std::int64_t broadcast = m * n;
  const std::int64_t flora_closed = broadcast + rounds * (rank + k * rank) * (m + n);
  const std::int64_t fedit_closed = broadcast + rounds * 2 * rank * (m + n);
  const std::int64_t adapter_only = rounds * 2 * rank * (m + n);
  const bool closed_ok = flora_even && fedit_even && flora_total == flora_closed && fedit_total == fedit_closed;
  const bool order_ok = flora_total > fedit_total && fedit_total > adapter_only;
  const double flora_ratio = static_cast<double>(flora_total) / static_cast<double>(broadcast);
  const double fedit_ratio = static_cast<double>(fedit_total) / static_cast<double>(broadcast);
  const bool bound_ok = flora_ratio < 1.1 && fedit_ratio < 1.1;
  r.seconds = seconds_since(start);
  r.passed = fraction_ok && closed_ok && order_ok && bound_ok;
  r.detail = std::string("fraction(4096,4096,16) ") + (fraction_ok ? "= 0.0078125" : "WRONG") +
             "; closed forms " + (closed_ok ? "exact" : "MISMATCH") + " (FLoRA " + std::to_string(flora_total) +
             ", FedIT " + std::to_string(fedit_total) + " per client); ordering " + (order_ok ? "ok" : "WRONG") +
             "; vs broadcast: FLoRA " + fmt("%.4f", flora_ratio) + "x, FedIT " + fmt("%.4f", fedit_ratio) +
             "x (limit 1.1x)";
  return r;
}

// 10 ------------------------------------------------------------------------
std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CriterionResult determinism(const Options& options) {
  auto r = make(10, "determinism");
  const auto start = Clock::now();
  Settings settings{{"preset", "homo16"}, {"seed", "42"}};
  const ExperimentConfig cfg = build_config(settings);
  std::filesystem::create_directories(options.scratch_dir);
  const auto first = options.scratch_dir / "flora_acceptance_run1.csv";
  const auto second = options.scratch_dir / "flora_acceptance_run2.csv";
  emit_report(to_table(compare_strategies(cfg, cfg.strategies)), first);
  emit_report(to_table(compare_strategies(cfg, cfg.strategies)), second);
  const std::string a = slurp(first);
  const std::string b = slurp(second);
  std::filesystem::remove(first);
  std::filesystem::remove(second);
  r.seconds = seconds_since(start);
  r.passed = !a.empty() && a == b;
  r.detail = "two `compare --preset homo16 --seed 42` reports (" + std::to_string(a.size()) + " bytes) " +
             (a == b ? "byte-identical" : "DIFFER");
  return r;
}

}  // namespace

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "stacking exactness", stacking_exactness},
      {2, "noise decomposition", noise_decomposition},
      {3, "FedIT bias is strict", fedit_bias},
      {4, "zero-padding collapse", zero_padding_collapse},
      {5, "privacy shuffle", privacy_shuffle},
      {6, "gradient correctness", gradient_correctness},
      {7, "desk-scale strategy ranking", stacking_beats_averaging},
      {8, "noise growth with K", noise_growth},
      {9, "communication accounting", communication},
      {10, "determinism", determinism},
  };
  return all;
}

std::vector<CriterionResult> run_all(const Options& options) {
  std::vector<CriterionResult> results;
  for (const auto& c : criteria()) {
    try {
      results.push_back(c.run(options));
    } catch (const std::exception& e) {
      results.push_back({c.id, c.name, false, std::string("threw: ") + e.what(), 0.0});
    }
  }
  return results;
}

std::string format_line(const CriterionResult& r) {
  return std::string(r.passed ? "[PASS]" : "[FAIL]") + " AC" + std::to_string(r.id) + " " + r.name + ": " +
         r.detail + " (" + fmt("%.2f", r.seconds) + " s)";
}

}  // namespace flora::acceptance
