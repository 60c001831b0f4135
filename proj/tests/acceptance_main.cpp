// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <iostream>

#include "flora/acceptance.hpp"

int main(int argc, char** argv) {
  flora::acceptance::Options options;
  if (argc > 1) options.scratch_dir = argv[1];
  int failed = 0;
  for (const auto& r : flora::acceptance::run_all(options)) {
    std::cout << flora::acceptance::format_line(r) << std::endl;
    if (!r.passed) ++failed;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
