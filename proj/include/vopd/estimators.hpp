#pragma once

// Per-token gradient estimators and their batch reduction.
//
// Every estimator produces, for one visited context, a dense row that is an
// ascent direction on the student's logits for the objective
// E[log teacher - log student] (equivalently, minimizing the reverse KL).
// The five kinds differ in what they do with the sampled token:
//
//   plain          reward(sampled) * score(sampled)          : unbiased, noisy
//   full_vocab     exact expectation of the plain row        : zero variance
//   truncated      exact gradient of the renormalized top-k objective
//   baselined      (reward - baseline) * score(sampled), baseline = -KL
//   baselined_topk same, baseline = -truncated KL on the student's top-k
//
// The baseline is a control variate: a constant w.r.t. the sampled token, so
// subtracting it leaves the expectation untouched while cancelling variance.
// No gradient flows through the baseline itself — the estimator treats it as
// a detached scalar, and the verify suite checks that structure explicitly.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "vopd/divergence.hpp"
#include "vopd/policy.hpp"

namespace vopd {

enum class EstimatorKind {
  opd,          // single-sample score estimator
  opd_full_v,   // exact full-vocabulary expectation
  opd_top_k,    // exact gradient of the truncated (top-k, renormalized) objective
  vopd_full_v,  // single-sample with full-vocabulary value baseline
  vopd_top_k,   // single-sample with top-k value baseline
};

const char* to_string(EstimatorKind kind);
std::optional<EstimatorKind> estimator_kind_from_string(std::string_view name);

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::opd;
  int32_t k = 20;  // support size for the top-k kinds
};

// Diagnostics row logged for every processed token.
struct TokenRecord {
  int64_t step = 0;
  double reward = 0.0;            // log q(y) - log p(y) at the sampled token
  double baseline = 0.0;          // value baseline (0 for unbaselined kinds)
  double advantage = 0.0;         // reward - baseline
  double full_kl = 0.0;           // KL(p || q) at the context (diagnostic)
  double student_logprob = 0.0;
  double teacher_logprob = 0.0;
};

struct ContributionOptions {
  double temperature = 1.0;
  // When false, skip diagnostics the kind doesn't intrinsically need (the
  // full KL for the plain/truncated kinds).  The trainer always wants them;
  // the benchmark must not pay for them.
  bool diagnostics = true;
  // Negative-control hook for the verify suite: re-attach the baseline's
  // gradient pathway (adds -log p(y) * d(baseline)/d(logits) to the row),
  // which a correctly detached estimator must not contain.
  bool corrupt_baseline_detach = false;
};

struct TokenContribution {
  std::vector<double> row;  // dense, length V, ascent direction
  TokenRecord record;       // step left 0; caller stamps it
};

// The estimator core: one context's contribution given the student dist p,
// teacher dist q and the sampled token.  Pure function of its arguments.
TokenContribution per_token_contribution(const EstimatorSpec& spec,
                                         std::span<const double> p,
                                         std::span<const double> q,
                                         TokenId sampled,
                                         const ContributionOptions& opts = {});

// Sparse accumulated gradient: canonical context key -> dense row.  An
// ordered map so that every reduction and iteration order is deterministic.
struct GradientEstimate {
  std::map<uint64_t, std::vector<double>> rows;
  int64_t token_count = 0;
  double l2_norm = 0.0;  // sqrt(sum of squares over all row entries)

  double recompute_l2() const;
};

struct BatchOptions {
  int64_t step = 0;       // stamped into each record
  bool diagnostics = true;
  bool keep_records = true;
};

struct BatchResult {
  GradientEstimate grad;
  std::vector<TokenRecord> records;  // generation order; empty if not kept
};

// Reduce a batch of on-policy trajectories into one gradient estimate.
// Token-mean normalization: the sum of contributions is divided by the total
// token count, so batches of different shapes are comparable.  Trajectories
// must carry the student's current version stamp (on-policy freshness);
// stale input is a contract violation, not a soft warning.
BatchResult batch_gradient(const EstimatorSpec& spec, PolicyTable& student,
                           PolicyTable& teacher,
                           std::span<const Trajectory> trajectories,
                           const BatchOptions& opts = {});

}  // namespace vopd
