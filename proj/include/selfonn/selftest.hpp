#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selfonn {

struct SelftestOptions {
  bool quick = false;
  std::uint64_t seed = 1;
  /// Deliberate corruption for exercising the failure path: "" or "weight-shape".
  std::string inject_fault;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// Largest observed deviation (suite-specific units).
  double max_deviation = 0.0;
  std::string detail;
};

/// Runs every self-verification suite; never throws for a failing check.
std::vector<SuiteResult> run_selftest(const SelftestOptions& opts);

}  // namespace selfonn
