// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. The file format is flat key=value text:
//
//   file    := { line "\n" }
//   line    := blank | "#" comment | key "=" value
//   key     := one of the names listed by config_keys()
//   value   := text up to end of line, surrounding whitespace trimmed
//
// Lists (ranks, strategies, skew, skew_strength) are comma separated. A
// preset is expanded first; every other key then overrides it, and command
// line flags override the file.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flora/data.hpp"
#include "flora/lora.hpp"
#include "flora/training.hpp"

namespace flora {

enum class Strategy { Flora, FedIt, ZeroPadding, Standalone, Centralized };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Validation failure carrying one diagnostic per offending field.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

struct ExperimentConfig {
  std::string preset;
  Dim dim{16, 16};
  int k_clients = 10;
  std::vector<Index> ranks = std::vector<Index>(10, 16);
  std::vector<Strategy> strategies{Strategy::Flora};
  int rounds = 3;
  TrainConfig train;  // train.seed is ignored; per-client seeds are derived
  SkewSpec skew;      // skew.seed is ignored; derived from seed
  std::optional<double> scaling_override;
  std::uint64_t seed = 42;
  std::string out = "report.csv";
  std::size_t samples_total = 2000;
  double noise_std = 0.1;
  Index teacher_rank = 4;
  InitKind init_kind = InitKind::ZeroDeltaGaussian;
  double init_scale = 0.01;
  int threads = 0;  // 0 or 1 = serial

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Raw key/value pairs; later insertions override earlier ones.
using Settings = std::map<std::string, std::string>;

const std::vector<std::string>& config_keys();

/// Names accepted by preset=.
const std::vector<std::string>& preset_names();

/// Reads key=value text. Unknown keys and malformed lines are reported
/// together as a ConfigError.
Settings parse_settings(const std::string& text);

/// Builds a validated config: defaults, then the preset, then the settings.
ExperimentConfig build_config(const Settings& settings);

/// Throws ConfigError listing every invalid field.
void validate(const ExperimentConfig& cfg);

/// Canonical key=value form; build_config(parse_settings(serialize_config(c))) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Single-line form used in report headers. Omits the output path so reports
/// written to different files stay byte-identical.
std::string describe_config(const ExperimentConfig& cfg);

std::string format_real(double v);

}  // namespace flora
