#pragma once

// The five experiment entry points behind the CLI, plus the reusable pieces
// (benchmark cells, truncation-error curves) the acceptance tests drive
// directly.  Commands return process exit codes: 0 success, 1 failed
// check/runtime error, 2 usage or config error (mapped by the caller's
// exception handler for thrown errors).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vopd/config.hpp"
#include "vopd/estimators.hpp"

namespace vopd {

enum class PlotKind {
  reward_advantage_hist,
  reward_advantage_scatter,
  mse_vs_k,
  grad_norm_curve,
  step_time_bars,
  logprob_scatter,
};

const char* to_string(PlotKind kind);
std::optional<PlotKind> plot_kind_from_string(std::string_view name);

// --- benchmark -------------------------------------------------------------

struct BenchCell {
  int64_t vocab_size = 0;
  EstimatorKind kind = EstimatorKind::opd;
  int32_t k = 0;  // support size, top-k kinds only
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  int32_t reps = 0;
};

// Time batch_gradient per estimator on a fixed synthetic batch at each
// vocabulary size: `reps` timed repetitions after `warmups` discarded ones,
// diagnostics off so each kind pays only its intrinsic cost.
std::vector<BenchCell> run_bench(std::span<const int64_t> vocab_sizes,
                                 uint64_t seed, int32_t tokens, int32_t reps,
                                 int32_t warmups);

// --- truncation error curve (k sweep support) --------------------------------

struct ContextSnapshot {
  std::vector<double> p, q;
};

// Run the reference training (full-vocabulary baselined kind) and collect at
// least `target_count` (student, teacher) distribution snapshots spread
// evenly across all visited tokens of the whole run.
std::vector<ContextSnapshot> collect_reference_snapshots(
    const TrainConfig& base, int64_t target_count);

// Mean squared error of the truncated divergence against the full one over
// the snapshot population.
double truncation_mse(std::span<const ContextSnapshot> snapshots, int32_t k);

// Mean squared full divergence: the error of using no baseline at all.
double plain_mse(std::span<const ContextSnapshot> snapshots);

// --- subcommands -------------------------------------------------------------

int cmd_train(const std::string& config_path, std::ostream& out);

struct VerifyArgs {
  uint64_t seed = 0;
  bool corrupt_detach = false;
  std::string json_path;  // empty = no JSON artifact
};
int cmd_verify(const VerifyArgs& args, std::ostream& out);

int cmd_sweep_k(const std::string& config_path, std::ostream& out);
int cmd_bench(const std::string& config_path, std::ostream& out);
int cmd_plot(const std::string& data_path, const std::string& kind_name,
             const std::string& out_path, std::ostream& out);

}  // namespace vopd
