#pragma once

// The identity suite: every mathematical invariant the estimators rest on,
// checked against enumeration oracles, randomized instances and frozen
// worked examples.  One CheckResult per invariant; the CLI renders them as a
// table and an optional JSON summary.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vopd::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  double observed = 0.0;   // worst residual (or key statistic) seen
  double threshold = 0.0;  // what `observed` was held against
  std::string note;        // instance counts, direction of the comparison
};

struct Options {
  uint64_t seed = 0;
  // Negative control: re-attach the baseline's gradient pathway inside the
  // estimator and confirm the detach-structure check is the one that trips.
  bool corrupt_detach = false;
};

std::vector<CheckResult> run_identity_suite(const Options& opts);

bool all_passed(std::span<const CheckResult> results);
void print_table(std::ostream& out, std::span<const CheckResult> results);
std::string to_json(const Options& opts, std::span<const CheckResult> results);

}  // namespace vopd::verify
