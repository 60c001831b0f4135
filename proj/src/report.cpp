// SPDX-License-Identifier: Apache-2.0

#include "flora/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace flora {

namespace {

ReportRow row_of(const RoundMetrics& m) {
  return {m.round,           to_string(m.strategy), m.global_eval_loss, m.mean_client_loss(),
          m.fedit_relative_noise, m.params_up,       m.params_down};
}

}  // namespace

ReportTable to_table(const ExperimentReport& report) {
  ReportTable table{report.seed, report.description, {}};
  for (const auto& m : report.rounds) table.rows.push_back(row_of(m));
  return table;
}

ReportTable to_table(const ComparisonReport& report) {
  ReportTable table;
  if (report.runs.empty()) return table;
  table.seed = report.runs.front().seed;
  table.description = report.runs.front().description;
  std::size_t rounds = 0;
  for (const auto& run : report.runs) rounds = std::max(rounds, run.rounds.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    for (const auto& run : report.runs) {
      if (r < run.rounds.size()) table.rows.push_back(row_of(run.rounds[r]));
    }
  }
  return table;
}

std::string render_report(const ReportTable& table) {
  std::string out = "# flora_sim report schema=" + std::to_string(kReportSchema) +
                    " seed=" + std::to_string(table.seed) + "\n";
  out += "# config " + table.description + "\n";
  out += std::string(kReportColumns) + "\n";
  for (const auto& row : table.rows) {
    out += std::to_string(row.round) + "," + row.strategy + "," + format_real(row.global_loss) + "," +
           format_real(row.mean_client_loss) + "," +
           (row.relative_noise ? format_real(*row.relative_noise) : std::string()) + "," +
           std::to_string(row.params_up_total) + "," + std::to_string(row.params_down_total) + "\n";
  }
  return out;
}

void emit_report(const ReportTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("emit_report: cannot open " + path.string() + " for writing");
  out << render_report(table);
  out.flush();
  if (!out) throw std::runtime_error("emit_report: write failed for " + path.string());
}

ReportTable parse_report_text(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  ReportTable table;
  unsigned long long seed = 0;
  int schema = 0;
  if (!std::getline(ss, line) ||
      std::sscanf(line.c_str(), "# flora_sim report schema=%d seed=%llu", &schema, &seed) != 2) {
    throw std::runtime_error("parse_report: missing report header");
  }
  if (schema != kReportSchema) {
    throw std::runtime_error("parse_report: unsupported schema " + std::to_string(schema));
  }
  table.seed = seed;
  if (!std::getline(ss, line) || line.rfind("# config ", 0) != 0) {
    throw std::runtime_error("parse_report: missing config line");
  }
  table.description = line.substr(9);
  if (!std::getline(ss, line) || line != kReportColumns) {
    throw std::runtime_error("parse_report: unexpected column header");
  }
  std::size_t lineno = 3;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 7) {
      throw std::runtime_error("parse_report: line " + std::to_string(lineno) + " has " +
                               std::to_string(f.size()) + " fields, expected 7");
    }
    ReportRow row;
    row.round = std::stoi(f[0]);
    row.strategy = f[1];
    row.global_loss = std::stod(f[2]);
    row.mean_client_loss = std::stod(f[3]);
    if (!f[4].empty()) row.relative_noise = std::stod(f[4]);
    row.params_up_total = std::stoll(f[5]);
    row.params_down_total = std::stoll(f[6]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

ReportTable parse_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("parse_report: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_report_text(buf.str());
}

}  // namespace flora
