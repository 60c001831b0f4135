// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Each criterion compares the library against
// an oracle written here independently (element-wise loops, double sums,
// finite differences, closed-form counts) and reports pass/fail with the
// measured values. Shared by the acceptance test binary and `flora_sim verify`.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace flora::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
};

struct Criterion {
  int id;
  std::string name;
  std::function<CriterionResult(const Options&)> run;
};

const std::vector<Criterion>& criteria();

/// Runs every criterion; a criterion that throws is reported as failed.
std::vector<CriterionResult> run_all(const Options& options = {});

/// "[PASS] AC1 <name>: <detail> (0.01 s)"
std::string format_line(const CriterionResult& r);

}  // namespace flora::acceptance
