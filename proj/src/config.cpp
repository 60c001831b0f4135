// SPDX-License-Identifier: Apache-2.0

#include "flora/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace flora {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

// Field-level parsers append a diagnostic and leave the target untouched on
// failure, so every bad field is reported in one pass.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& diags) : diags_(diags) {}

  template <typename Int>
  void integer(const std::string& key, const std::string& text, Int& target) {
    Int value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
      diags_.push_back(key + ": expected an integer, got '" + text + "'");
      return;
    }
    target = value;
  }

  void real(const std::string& key, const std::string& text, double& target) {
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(value)) {
      diags_.push_back(key + ": expected a finite real number, got '" + text + "'");
      return;
    }
    target = value;
  }

  template <typename T, typename Fn>
  void parsed(const std::string& key, const std::string& text, T& target, Fn&& fn) {
    try {
      target = fn(text);
    } catch (const std::exception& e) {
      diags_.push_back(key + ": " + e.what());
    }
  }

  std::vector<std::string>& diags() { return diags_; }

 private:
  std::vector<std::string>& diags_;
};

void apply_preset(const std::string& name, ExperimentConfig& cfg, std::vector<std::string>& diags) {
  if (name.empty()) return;
  cfg.preset = name;
  cfg.k_clients = 10;
  cfg.rounds = 3;
  cfg.train.local_epochs = 1;
  cfg.skew = SkewSpec{};
  cfg.skew.feature_shift = 1.0;
  cfg.skew.size_skew = 1.0;
  if (name == "homo16") {
    cfg.ranks.assign(10, 16);
    cfg.strategies = {Strategy::Flora, Strategy::FedIt};
  } else if (name == "hetero") {
    cfg.ranks = {64, 32, 16, 16, 8, 8, 4, 4, 4, 4};
    cfg.strategies = {Strategy::Flora, Strategy::ZeroPadding};
  } else {
    diags.push_back("preset: unknown preset '" + name + "' (expected homo16 or hetero)");
  }
}

void apply_skew(const Settings& settings, ExperimentConfig& cfg, std::vector<std::string>& diags) {
  const auto kinds_it = settings.find("skew");
  const auto strength_it = settings.find("skew_strength");
  if (kinds_it == settings.end() && strength_it == settings.end()) return;

  std::vector<SkewKind> kinds;
  if (kinds_it != settings.end()) {
    for (const auto& name : split_list(kinds_it->second)) {
      try {
        kinds.push_back(parse_skew_kind(name));
      } catch (const std::exception& e) {
        diags.push_back(std::string("skew: ") + e.what());
        return;
      }
    }
  } else {
    // Strength alone rescales whichever kinds are already active.
    if (cfg.skew.feature_shift > 0) kinds.push_back(SkewKind::FeatureShift);
    if (cfg.skew.size_skew > 0) kinds.push_back(SkewKind::SizeSkew);
    if (cfg.skew.label_skew > 0) kinds.push_back(SkewKind::LabelSkew);
  }

  std::vector<double> strengths(kinds.size(), 1.0);
  if (strength_it != settings.end()) {
    const auto parts = split_list(strength_it->second);
    Reader reader(diags);
    if (parts.size() == 1) {
      double s = 1.0;
      reader.real("skew_strength", parts[0], s);
      std::fill(strengths.begin(), strengths.end(), s);
    } else if (parts.size() == kinds.size()) {
      for (std::size_t i = 0; i < parts.size(); ++i) reader.real("skew_strength", parts[i], strengths[i]);
    } else {
      diags.push_back("skew_strength: expected one value or one per skew kind (" +
                      std::to_string(kinds.size()) + "), got " + std::to_string(parts.size()));
      return;
    }
  } else if (kinds_it != settings.end()) {
    // Kinds without an explicit strength keep the strength they had, else 1.
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      const double prev = kinds[i] == SkewKind::FeatureShift ? cfg.skew.feature_shift
                          : kinds[i] == SkewKind::SizeSkew   ? cfg.skew.size_skew
                          : kinds[i] == SkewKind::LabelSkew  ? cfg.skew.label_skew
                                                             : 0.0;
      strengths[i] = prev > 0 ? prev : 1.0;
    }
  }

  SkewSpec spec;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    switch (kinds[i]) {
      case SkewKind::Iid: break;
      case SkewKind::FeatureShift: spec.feature_shift = strengths[i]; break;
      case SkewKind::SizeSkew: spec.size_skew = strengths[i]; break;
      case SkewKind::LabelSkew: spec.label_skew = strengths[i]; break;
    }
  }
  cfg.skew = spec;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Flora: return "flora";
    case Strategy::FedIt: return "fedit";
    case Strategy::ZeroPadding: return "zero_padding";
    case Strategy::Standalone: return "standalone";
    case Strategy::Centralized: return "centralized";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::Flora, Strategy::FedIt, Strategy::ZeroPadding, Strategy::Standalone,
                 Strategy::Centralized}) {
    if (name == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected flora, fedit, zero_padding, standalone or centralized)");
}

namespace {

std::string join_diagnostics(const std::vector<std::string>& diags) {
  std::string msg = "invalid configuration:";
  for (const auto& d : diags) msg += "\n  " + d;
  return msg;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::invalid_argument(join_diagnostics(diagnostics)), diagnostics_(std::move(diagnostics)) {}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "preset",        "m",           "n",          "clients",    "ranks",      "strategies",
      "rounds",        "epochs",      "lr",         "batch_size", "loss",       "skew",
      "skew_strength", "scaling_override", "seed",  "out",        "samples",    "noise_std",
      "teacher_rank",  "init",        "init_scale", "threads"};
  return keys;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"homo16", "hetero"};
  return names;
}

Settings parse_settings(const std::string& text) {
  Settings settings;
  std::vector<std::string> diags;
  std::stringstream ss(text);
  std::size_t lineno = 0;
  const auto& keys = config_keys();
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      diags.push_back("line " + std::to_string(lineno) + ": expected key=value, got '" + body + "'");
      continue;
    }
    std::string key = trim(body.substr(0, eq));
    if (key == "strategy") key = "strategies";
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      diags.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      continue;
    }
    settings[key] = trim(body.substr(eq + 1));
  }
  if (!diags.empty()) throw ConfigError(std::move(diags));
  return settings;
}

ExperimentConfig build_config(const Settings& settings) {
  ExperimentConfig cfg;
  std::vector<std::string> diags;
  Reader reader(diags);
  const auto& keys = config_keys();
  for (const auto& [key, value] : settings) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      diags.push_back("unknown key '" + key + "'");
    }
  }
  auto get = [&](const char* key) -> const std::string* {
    const auto it = settings.find(key);
    return it == settings.end() ? nullptr : &it->second;
  };

  if (const auto* v = get("preset")) apply_preset(*v, cfg, diags);

  const int preset_clients = cfg.k_clients;
  if (const auto* v = get("m")) reader.integer("m", *v, cfg.dim.m);
  if (const auto* v = get("n")) reader.integer("n", *v, cfg.dim.n);
  if (const auto* v = get("clients")) reader.integer("clients", *v, cfg.k_clients);
  if (const auto* v = get("ranks")) {
    std::vector<Index> ranks;
    bool ok = true;
    for (const auto& part : split_list(*v)) {
      Index r = 0;
      const std::size_t before = diags.size();
      reader.integer("ranks", part, r);
      ok = ok && diags.size() == before;
      ranks.push_back(r);
    }
    if (ok && ranks.size() == 1 && cfg.k_clients > 1) {
      ranks.assign(static_cast<std::size_t>(cfg.k_clients), ranks.front());
    }
    if (ok) cfg.ranks = std::move(ranks);
  } else if (cfg.k_clients != preset_clients && cfg.k_clients > 0 && !cfg.ranks.empty() &&
             std::all_of(cfg.ranks.begin(), cfg.ranks.end(),
                         [&](Index r) { return r == cfg.ranks.front(); })) {
    // A homogeneous profile follows the client count when ranks are not given.
    cfg.ranks.assign(static_cast<std::size_t>(cfg.k_clients), cfg.ranks.front());
  }
  if (const auto* v = get("strategies")) {
    std::vector<Strategy> list;
    for (const auto& part : split_list(*v)) {
      Strategy s{};
      const std::size_t before = diags.size();
      reader.parsed("strategies", part, s, parse_strategy);
      if (diags.size() == before) list.push_back(s);
    }
    cfg.strategies = std::move(list);
  }
  if (const auto* v = get("rounds")) reader.integer("rounds", *v, cfg.rounds);
  if (const auto* v = get("epochs")) reader.integer("epochs", *v, cfg.train.local_epochs);
  if (const auto* v = get("lr")) reader.real("lr", *v, cfg.train.learning_rate);
  if (const auto* v = get("batch_size")) reader.integer("batch_size", *v, cfg.train.batch_size);
  if (const auto* v = get("loss")) reader.parsed("loss", *v, cfg.train.loss, parse_loss_kind);
  apply_skew(settings, cfg, diags);
  if (const auto* v = get("scaling_override")) {
    if (*v == "none" || v->empty()) {
      cfg.scaling_override.reset();
    } else {
      double p = 0.0;
      const std::size_t before = diags.size();
      reader.real("scaling_override", *v, p);
      if (diags.size() == before) cfg.scaling_override = p;
    }
  }
  if (const auto* v = get("seed")) reader.integer("seed", *v, cfg.seed);
  if (const auto* v = get("out")) cfg.out = *v;
  if (const auto* v = get("samples")) reader.integer("samples", *v, cfg.samples_total);
  if (const auto* v = get("noise_std")) reader.real("noise_std", *v, cfg.noise_std);
  if (const auto* v = get("teacher_rank")) reader.integer("teacher_rank", *v, cfg.teacher_rank);
  if (const auto* v = get("init")) {
    if (*v == "gaussian") {
      cfg.init_kind = InitKind::ZeroDeltaGaussian;
    } else if (*v == "uniform") {
      cfg.init_kind = InitKind::ZeroDeltaUniform;
    } else {
      diags.push_back("init: expected gaussian or uniform, got '" + *v + "'");
    }
  }
  if (const auto* v = get("init_scale")) reader.real("init_scale", *v, cfg.init_scale);
  if (const auto* v = get("threads")) reader.integer("threads", *v, cfg.threads);

  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    diags.insert(diags.end(), e.diagnostics().begin(), e.diagnostics().end());
  }
  if (!diags.empty()) throw ConfigError(std::move(diags));
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  std::vector<std::string> diags;
  if (cfg.dim.m < 1) diags.push_back("m: must be >= 1");
  if (cfg.dim.n < 1) diags.push_back("n: must be >= 1");
  if (cfg.k_clients < 1) diags.push_back("clients: must be >= 1");
  if (cfg.ranks.size() != static_cast<std::size_t>(std::max(cfg.k_clients, 0))) {
    diags.push_back("ranks: expected " + std::to_string(cfg.k_clients) +
                    " entries (one per client), got " + std::to_string(cfg.ranks.size()));
  }
  if (std::any_of(cfg.ranks.begin(), cfg.ranks.end(), [](Index r) { return r < 1; })) {
    diags.push_back("ranks: every rank must be >= 1");
  }
  if (cfg.strategies.empty()) diags.push_back("strategies: at least one strategy required");
  const bool homogeneous = std::all_of(cfg.ranks.begin(), cfg.ranks.end(), [&](Index r) {
    return r == cfg.ranks.front();
  });
  if (!homogeneous &&
      std::find(cfg.strategies.begin(), cfg.strategies.end(), Strategy::FedIt) != cfg.strategies.end()) {
    diags.push_back("strategies: fedit averages A and B independently and requires identical ranks");
  }
  if (cfg.rounds < 0) diags.push_back("rounds: must be >= 0");
  if (cfg.train.local_epochs < 1) diags.push_back("epochs: must be >= 1");
  if (!(cfg.train.learning_rate > 0.0) || !std::isfinite(cfg.train.learning_rate)) {
    diags.push_back("lr: must be a finite positive real");
  }
  if (cfg.train.batch_size < 1) diags.push_back("batch_size: must be >= 1");
  if (cfg.skew.feature_shift < 0 || cfg.skew.size_skew < 0 || cfg.skew.label_skew < 0) {
    diags.push_back("skew_strength: must be >= 0");
  }
  if (cfg.scaling_override && !(*cfg.scaling_override > 0.0 && *cfg.scaling_override <= 1.0)) {
    diags.push_back("scaling_override: must be in (0, 1]");
  }
  const std::size_t eval = cfg.samples_total / 5;
  if (eval < 1 || cfg.samples_total - eval < static_cast<std::size_t>(std::max(cfg.k_clients, 1))) {
    diags.push_back("samples: need at least one evaluation sample (20%) and one training sample per client");
  }
  if (!(cfg.noise_std >= 0.0) || !std::isfinite(cfg.noise_std)) diags.push_back("noise_std: must be >= 0");
  if (cfg.teacher_rank < 1) diags.push_back("teacher_rank: must be >= 1");
  if (!(cfg.init_scale >= 0.0) || !std::isfinite(cfg.init_scale)) diags.push_back("init_scale: must be >= 0");
  if (cfg.threads < 0) diags.push_back("threads: must be >= 0");
  if (!diags.empty()) throw ConfigError(std::move(diags));
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::vector<std::pair<std::string, std::string>> canonical(const ExperimentConfig& cfg) {
  std::vector<std::string> ranks, strategies, kinds, strengths;
  for (auto r : cfg.ranks) ranks.push_back(std::to_string(r));
  for (auto s : cfg.strategies) strategies.push_back(to_string(s));
  const std::pair<SkewKind, double> skews[] = {{SkewKind::FeatureShift, cfg.skew.feature_shift},
                                               {SkewKind::SizeSkew, cfg.skew.size_skew},
                                               {SkewKind::LabelSkew, cfg.skew.label_skew}};
  for (const auto& [kind, strength] : skews) {
    if (strength > 0) {
      kinds.push_back(to_string(kind));
      strengths.push_back(format_real(strength));
    }
  }
  if (kinds.empty()) {
    kinds.push_back("iid");
    strengths.push_back("0");
  }
  return {
      {"preset", cfg.preset},
      {"m", std::to_string(cfg.dim.m)},
      {"n", std::to_string(cfg.dim.n)},
      {"clients", std::to_string(cfg.k_clients)},
      {"ranks", join(ranks)},
      {"strategies", join(strategies)},
      {"rounds", std::to_string(cfg.rounds)},
      {"epochs", std::to_string(cfg.train.local_epochs)},
      {"lr", format_real(cfg.train.learning_rate)},
      {"batch_size", std::to_string(cfg.train.batch_size)},
      {"loss", to_string(cfg.train.loss)},
      {"skew", join(kinds)},
      {"skew_strength", join(strengths)},
      {"scaling_override", cfg.scaling_override ? format_real(*cfg.scaling_override) : "none"},
      {"seed", std::to_string(cfg.seed)},
      {"samples", std::to_string(cfg.samples_total)},
      {"noise_std", format_real(cfg.noise_std)},
      {"teacher_rank", std::to_string(cfg.teacher_rank)},
      {"init", cfg.init_kind == InitKind::ZeroDeltaGaussian ? "gaussian" : "uniform"},
      {"init_scale", format_real(cfg.init_scale)},
      {"threads", std::to_string(cfg.threads)},
      {"out", cfg.out},
  };
}

}  // namespace

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : canonical(cfg)) {
    // An empty preset would re-expand nothing; leave it out.
    if (key == "preset" && value.empty()) continue;
    out += key + "=" + value + "\n";
  }
  return out;
}

std::string describe_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : canonical(cfg)) {
    if (key == "out" || key == "threads") continue;
    if (key == "preset" && value.empty()) continue;
    out += (out.empty() ? "" : " ") + key + "=" + value;
  }
  return out;
}

}  // namespace flora
