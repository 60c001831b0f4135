// SPDX-License-Identifier: Apache-2.0
//
// Report files. Layout (UTF-8, '\n' line endings):
//
//   # flora_sim report schema=1 seed=<seed>
//   # config <describe_config() output>
//   round,strategy,global_loss,mean_client_loss,relative_noise,params_up_total,params_down_total
//   <one row per (round, strategy), round-major, strategies in run order>
//
// Reals use 17 significant digits; an absent relative_noise is an empty field.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flora/fed_sim.hpp"

namespace flora {

inline constexpr int kReportSchema = 1;
inline constexpr const char* kReportColumns =
    "round,strategy,global_loss,mean_client_loss,relative_noise,params_up_total,params_down_total";

struct ReportRow {
  int round = 0;
  std::string strategy;
  double global_loss = 0.0;
  double mean_client_loss = 0.0;
  std::optional<double> relative_noise;
  std::int64_t params_up_total = 0;
  std::int64_t params_down_total = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct ReportTable {
  std::uint64_t seed = 0;
  std::string description;
  std::vector<ReportRow> rows;

  friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

ReportTable to_table(const ExperimentReport& report);
ReportTable to_table(const ComparisonReport& report);

std::string render_report(const ReportTable& table);
void emit_report(const ReportTable& table, const std::filesystem::path& path);
inline void emit_report(const ExperimentReport& report, const std::filesystem::path& path) {
  emit_report(to_table(report), path);
}

ReportTable parse_report_text(const std::string& text);
ReportTable parse_report(const std::filesystem::path& path);

}  // namespace flora
