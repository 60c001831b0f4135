// SPDX-License-Identifier: Apache-2.0

#include "flora/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flora/random.hpp"

namespace flora {

namespace {

constexpr std::uint64_t kTagSizes = 1;
constexpr std::uint64_t kTagAssign = 2;
constexpr std::uint64_t kTagShift = 3;

int argmax(const Vector& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

Matrix gaussian(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = rng.normal(0.0, stddev);
  return out;
}

// At least one sample per shard, the rest by largest remainder. Ties go to
// the lower client index.
std::vector<std::size_t> allocate_sizes(std::size_t total, const std::vector<double>& weights) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> sizes(k, 1);
  const std::size_t spare = total - k;
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> remainder(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(spare) * weights[i] / wsum;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    sizes[i] += whole;
    used += whole;
    remainder[i] = exact - static_cast<double>(whole);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return remainder[x] > remainder[y]; });
  for (std::size_t i = 0; used < spare; ++i, ++used) sizes[order[i % k]] += 1;
  return sizes;
}

std::vector<std::size_t> shard_sizes(std::size_t total, int k, const SkewSpec& spec) {
  const auto count = static_cast<std::size_t>(k);
  if (spec.size_skew == 0.0) {
    std::vector<std::size_t> sizes(count, total / count);
    for (std::size_t i = 0; i < total % count; ++i) sizes[i] += 1;
    return sizes;
  }
  // Zipf over a seeded ranking, so the largest shard is not always client 0.
  const auto ranking = random_permutation(count, derive_seed(spec.seed, {kTagSizes}));
  std::vector<double> weights(count);
  for (std::size_t i = 0; i < count; ++i) {
    weights[i] = std::pow(static_cast<double>(ranking[i] + 1), -spec.size_skew);
  }
  return allocate_sizes(total, weights);
}

}  // namespace

SkewSpec SkewSpec::of(SkewKind kind, double strength, std::uint64_t seed) {
  SkewSpec s;
  s.seed = seed;
  switch (kind) {
    case SkewKind::Iid: break;
    case SkewKind::FeatureShift: s.feature_shift = strength; break;
    case SkewKind::SizeSkew: s.size_skew = strength; break;
    case SkewKind::LabelSkew: s.label_skew = strength; break;
  }
  return s;
}

const char* to_string(SkewKind kind) {
  switch (kind) {
    case SkewKind::Iid: return "iid";
    case SkewKind::FeatureShift: return "feature-shift";
    case SkewKind::SizeSkew: return "size-skew";
    case SkewKind::LabelSkew: return "label-skew";
  }
  return "?";
}

SkewKind parse_skew_kind(const std::string& name) {
  for (auto k : {SkewKind::Iid, SkewKind::FeatureShift, SkewKind::SizeSkew, SkewKind::LabelSkew}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown skew kind '" + name +
                              "' (expected iid, feature-shift, size-skew or label-skew)");
}

GlobalTask gen_task(Dim dim, std::size_t samples_total, double noise_std, std::uint64_t seed,
                    const TaskOptions& options) {
  if (samples_total < 1) throw std::invalid_argument("gen_task: need at least one sample");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw std::invalid_argument("gen_task: noise_std must be finite and >= 0");
  }
  if (options.perturbation_rank < 1) {
    throw std::invalid_argument("gen_task: perturbation rank must be >= 1");
  }
  Rng rng(seed);
  const double n = static_cast<double>(dim.n);
  const Index r = options.perturbation_rank;
  Matrix teacher = gaussian(rng, dim.m, dim.n, options.teacher_scale / std::sqrt(n));
  const Matrix u = gaussian(rng, dim.m, r, 1.0);
  const Matrix v = gaussian(rng, r, dim.n, 1.0);
  // Entries of the perturbation have the same variance as the teacher's.
  const Matrix perturbation = (u * v) * (options.teacher_scale / std::sqrt(n * static_cast<double>(r)));

  GlobalTask task;
  task.base = BaseWeights(teacher - perturbation);
  task.teacher = std::move(teacher);
  task.noise_std = noise_std;
  task.seed = seed;
  task.samples.reserve(samples_total);
  for (std::size_t i = 0; i < samples_total; ++i) {
    Sample s;
    s.x = gaussian(rng, dim.n, 1, 1.0);
    s.y = task.teacher * s.x;
    if (noise_std > 0.0) {
      for (Index j = 0; j < dim.m; ++j) s.y(j) += rng.normal(0.0, noise_std);
    }
    s.label = argmax(s.y);
    s.source_index = i;
    task.samples.push_back(std::move(s));
  }
  return task;
}

std::pair<GlobalTask, std::vector<Sample>> split_holdout(const GlobalTask& task, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_holdout: fraction must be in [0, 1)");
  }
  const std::size_t total = task.samples.size();
  const auto held = static_cast<std::size_t>(std::floor(static_cast<double>(total) * fraction));
  GlobalTask train = task;
  std::vector<Sample> eval(task.samples.end() - static_cast<std::ptrdiff_t>(held), task.samples.end());
  train.samples.resize(total - held);
  return {std::move(train), std::move(eval)};
}

std::vector<ClientShard> partition(const GlobalTask& task, int k_clients, const SkewSpec& spec) {
  if (k_clients < 1) throw std::invalid_argument("partition: need at least one client");
  const std::size_t total = task.samples.size();
  if (total < static_cast<std::size_t>(k_clients)) {
    throw std::invalid_argument("partition: " + std::to_string(total) + " samples cannot cover " +
                                std::to_string(k_clients) + " clients");
  }
  for (double s : {spec.feature_shift, spec.size_skew, spec.label_skew}) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("partition: skew strengths must be finite and >= 0");
    }
  }
  const auto k = static_cast<std::size_t>(k_clients);
  const auto sizes = shard_sizes(total, k_clients, spec);

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, {kTagAssign}));
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> members(k);
  if (spec.label_skew > 0.0) {
    // Each client fills its quota by weighted draws without replacement,
    // favouring its preferred class.
    const auto classes = static_cast<int>(task.dim().m);
    const double favour = std::exp(spec.label_skew);
    std::vector<std::size_t> pool = order;
    for (std::size_t c = 0; c < k; ++c) {
      const int preferred = static_cast<int>(c) % classes;
      for (std::size_t drawn = 0; drawn < sizes[c]; ++drawn) {
        double mass = 0.0;
        for (auto idx : pool) mass += task.samples[idx].label == preferred ? favour : 1.0;
        double target = rng.uniform() * mass;
        std::size_t pick = pool.size() - 1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
          target -= task.samples[pool[i]].label == preferred ? favour : 1.0;
          if (target < 0.0) {
            pick = i;
            break;
          }
        }
        members[c].push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
  } else {
    std::size_t cursor = 0;
    for (std::size_t c = 0; c < k; ++c) {
      members[c].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                        order.begin() + static_cast<std::ptrdiff_t>(cursor + sizes[c]));
      cursor += sizes[c];
    }
  }

  std::vector<ClientShard> shards(k);
  for (std::size_t c = 0; c < k; ++c) {
    shards[c].client_id = static_cast<int>(c);
    Vector offset = Vector::Zero(task.dim().n);
    if (spec.feature_shift > 0.0) {
      Rng shift_rng(derive_seed(spec.seed, {kTagShift, c}));
      for (Index j = 0; j < offset.size(); ++j) offset(j) = spec.feature_shift * shift_rng.normal();
    }
    const Vector y_offset = task.teacher * offset;
    std::sort(members[c].begin(), members[c].end());
    for (auto idx : members[c]) {
      Sample s = task.samples[idx];
      if (spec.feature_shift > 0.0) {
        s.x += offset;
        s.y += y_offset;
        s.label = argmax(s.y);
      }
      shards[c].samples.push_back(std::move(s));
    }
  }
  return shards;
}

std::vector<double> scaling_factors(std::span<const ClientShard> shards) {
  if (shards.empty()) throw std::invalid_argument("scaling_factors: no shards");
  std::size_t total = 0;
  for (const auto& s : shards) {
    if (s.size() < 1) throw std::invalid_argument("scaling_factors: empty shard");
    total += s.size();
  }
  std::vector<double> p;
  p.reserve(shards.size());
  for (const auto& s : shards) {
    p.push_back(static_cast<double>(s.size()) / static_cast<double>(total));
  }
  return p;
}

std::uint64_t fingerprint(std::span<const ClientShard> shards) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
  for (const auto& shard : shards) {
    feed(static_cast<std::uint64_t>(shard.client_id));
    for (const auto& s : shard.samples) {
      feed(fingerprint(Matrix(s.x)));
      feed(fingerprint(Matrix(s.y)));
      feed(static_cast<std::uint64_t>(s.label));
    }
  }
  return h;
}

void write_shards(std::span<const ClientShard> shards, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_shards: cannot open " + path.string());
  Index m = 0, n = 0;
  for (const auto& sh : shards) {
    if (!sh.samples.empty()) {
      m = sh.samples.front().y.size();
      n = sh.samples.front().x.size();
      break;
    }
  }
  out << "# flora-shards v1 m=" << m << " n=" << n << "\n";
  char buf[32];
  for (const auto& sh : shards) {
    for (const auto& s : sh.samples) {
      out << sh.client_id;
      for (Index j = 0; j < s.x.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", s.x(j));
        out << ',' << buf;
      }
      for (Index j = 0; j < s.y.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", s.y(j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_shards: write failed for " + path.string());
}

std::vector<ClientShard> read_shards(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_shards: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_shards: empty file " + path.string());
  long long m = 0, n = 0;
  if (std::sscanf(line.c_str(), "# flora-shards v1 m=%lld n=%lld", &m, &n) != 2) {
    throw std::runtime_error("read_shards: bad header in " + path.string());
  }
  std::vector<ClientShard> shards;
  std::size_t lineno = 1, index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != static_cast<std::size_t>(1 + n + m)) {
      throw std::runtime_error("read_shards: " + path.string() + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(1 + n + m) + " fields");
    }
    const int client = std::stoi(fields[0]);
    if (client < 0) throw std::runtime_error("read_shards: negative client id");
    while (shards.size() <= static_cast<std::size_t>(client)) {
      shards.push_back(ClientShard{static_cast<int>(shards.size()), {}});
    }
    Sample s;
    s.x.resize(n);
    s.y.resize(m);
    for (long long j = 0; j < n; ++j) s.x(j) = std::stod(fields[1 + j]);
    for (long long j = 0; j < m; ++j) s.y(j) = std::stod(fields[1 + n + j]);
    s.label = argmax(s.y);
    s.source_index = index++;
    shards[static_cast<std::size_t>(client)].samples.push_back(std::move(s));
  }
  return shards;
}

}  // namespace flora
