#pragma once

// The training loop: distill a frozen teacher into a trainable student by
// stochastic ascent on E[log teacher - log student] under the student's own
// samples, using one of the gradient estimators.
//
// Determinism contract: every random draw comes from a stream derived from
// (seed, purpose tag, step, slot), so a (config, seed) pair fixes the entire
// run bit-for-bit regardless of worker count.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vopd/estimators.hpp"
#include "vopd/policy.hpp"

namespace vopd {

enum class OptimizerKind { sgd, adaptive_moments };

const char* to_string(OptimizerKind kind);
std::optional<OptimizerKind> optimizer_kind_from_string(std::string_view name);

struct TrainConfig {
  int32_t vocab_size = 64;
  int32_t context_order = 1;
  int32_t prompt_count = 32;
  int32_t max_len = 16;
  int32_t batch_size = 64;        // trajectories per step
  int32_t steps = 2000;
  // Tabular softmax rows with token-mean batch normalization need a large
  // step: each visited row receives ~(visits/batch tokens) of its expected
  // gradient per step, so the per-row effective rate is this divided by the
  // context population (~2e3 at the defaults).
  double learning_rate = 128.0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  EstimatorSpec estimator{};
  double rollout_temperature = 1.0;
  uint64_t seed = 0;
  int32_t variance_probe_every = 50;
  int32_t variance_probe_samples = 256;
  InitMode init_mode = InitMode::mismatch;
  std::string teacher_file;  // custom_file init only
  std::string student_file;  // custom_file init only

  // Keep the per-token diagnostic records in the result (they are large:
  // steps * batch * max_len entries).
  bool keep_records = true;

  // Read-only observation hook: every `context_sink_stride`-th token visit
  // reports (student dist, teacher dist) as seen at gradient time.  Used by
  // the k-sweep to collect a context population spread over a whole run.
  std::function<void(std::span<const double>, std::span<const double>)>
      context_sink;
  int64_t context_sink_stride = 0;  // 0 disables the sink

  void validate() const;  // throws std::invalid_argument naming the field
};

// Moment accumulators for the adaptive optimizer, keyed like the gradient.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  std::map<uint64_t, std::vector<double>> first_moment;
  std::map<uint64_t, std::vector<double>> second_moment;
  int64_t step_count = 0;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
};

// Ascent update on the rows the gradient names; clamps logits and bumps the
// policy version (so pre-update trajectories become stale, as they must).
void optimizer_step(OptimizerState& state, PolicyTable& params,
                    const GradientEstimate& grad, double learning_rate);

struct EvalResult {
  double mean_reverse_kl = 0.0;   // mean KL(student || teacher) over visits
  double greedy_agreement = 0.0;  // fraction of visits with matching argmax
};

// Deterministic greedy evaluation: roll each prompt out greedily under the
// student and average the divergence/agreement over every visited context.
EvalResult evaluate(PolicyTable& student, PolicyTable& teacher,
                    int32_t prompt_count, int32_t max_len);

// One metrics CSV row.
struct MetricsRecord {
  int64_t step = 0;
  double grad_l2_norm = 0.0;
  double mean_reward = 0.0;
  double mean_advantage = 0.0;
  double mean_full_kl = 0.0;
  double eval_reverse_kl = 0.0;
  double greedy_agreement = 0.0;
  std::optional<double> empirical_grad_variance;  // probe steps only
  double wall_clock_ms = 0.0;
};

struct TrainResult {
  PolicyTable teacher;
  PolicyTable student;
  std::vector<MetricsRecord> metrics;  // row 0 = pre-training eval
  std::vector<TokenRecord> records;    // empty unless cfg.keep_records
};

TrainResult train(const TrainConfig& cfg);

}  // namespace vopd
