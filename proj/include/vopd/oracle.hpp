#pragma once

// Enumeration oracles: exact expectations and variances over the sampled
// token, computed by brute force, independent of the estimator shortcuts.
//
// For a context with student dist p and teacher dist q, the sampling
// distribution of a single-sample estimator is fully enumerable: token v
// occurs with probability p_v and contributes a known row.  Everything here
// is a direct sum over that distribution — slow and obviously correct, which
// is the point: these are the functions the fast paths are tested against.

#include <cstdint>
#include <span>
#include <vector>

#include "vopd/estimators.hpp"
#include "vopd/policy.hpp"
#include "vopd/rng.hpp"

namespace vopd::oracle {

// Enumeration is O(V^2); past this it stops being a desk-scale oracle.
inline constexpr int32_t kMaxEnumerableVocab = 100000;

// E over the sampled token of the estimator's row (temperature 1).
std::vector<double> exact_expected_gradient(const EstimatorSpec& spec,
                                            std::span<const double> p,
                                            std::span<const double> q);

// Trace of the covariance of the estimator's row: sum_v p_v ||c(v) - E||^2.
double exact_variance_trace(const EstimatorSpec& spec,
                            std::span<const double> p,
                            std::span<const double> q);

// Same trace for the generic single-sample estimator (r - b) * score with an
// arbitrary constant baseline b.
double exact_variance_trace_at_baseline(std::span<const double> p,
                                        std::span<const double> q, double b);

// Exact variance removed by baseline b (positive = improvement):
//   trace Var[r s] - trace Var[(r-b) s] = 2 b E[r ||s||^2] - b^2 E[||s||^2].
double variance_gap_exact(std::span<const double> p, std::span<const double> q,
                          double b);

// Weak-correlation prediction of the gap at b = -KL(p||q):
//   KL^2 * E[||s||^2].  Exact when ||s(v)||^2 is constant in v (uniform p).
double variance_gap_predicted(std::span<const double> p,
                              std::span<const double> q);

// argmin_b of the variance: b* = E[r ||s||^2] / E[||s||^2].
double optimal_baseline(std::span<const double> p, std::span<const double> q);

// L-inf norm of E_p[score] = sum_v p_v (onehot(v) - p); identically zero in
// exact arithmetic.
double score_identity_residual(std::span<const double> p);

// L-inf norm of E[(r - b) s] - E[r s] with the actual value baseline
// b = -KL(p||q); zero in exact arithmetic since b is constant over tokens.
double baseline_cancellation_residual(std::span<const double> p,
                                      std::span<const double> q);

// L2 distance between the truncated estimator's expected row (top-k) and the
// full-vocabulary expected row: the truncation bias this k actually incurs.
double topk_bias(std::span<const double> p, std::span<const double> q,
                 int32_t k);

// Central-difference check of the policy's score gradient at one (context,
// token): max abs component error between (log_prob(z+h) - log_prob(z-h))/2h
// and score_gradient.  Restores the row exactly before returning.
double finite_difference_check(PolicyTable& policy, const Context& ctx,
                               TokenId tok, double h);

struct MonteCarloResult {
  std::vector<double> mean;       // sample mean of the estimator row
  std::vector<double> std_error;  // per-component standard error of the mean
  int64_t samples = 0;
};

// Resample the estimator n times at a fixed (p, q) and report the empirical
// mean with its standard error, for agreement tests against the exact row.
MonteCarloResult monte_carlo_check(const EstimatorSpec& spec,
                                   std::span<const double> p,
                                   std::span<const double> q,
                                   int64_t n_samples, uint64_t seed);

// Everything worth knowing about one context under one estimator.
struct ContextReport {
  std::vector<double> expected_gradient;
  double variance_trace = 0.0;
  double value_baseline = 0.0;   // the baseline this kind actually uses
  double optimal_baseline = 0.0; // the b that would minimize variance
  double gap_exact = 0.0;        // variance removed by value_baseline
  double gap_predicted = 0.0;    // weak-correlation prediction of the same
};

ContextReport context_report(const EstimatorSpec& spec,
                             std::span<const double> p,
                             std::span<const double> q);

// Uniform-on-the-simplex (Dirichlet(1)) random distribution with full
// support; the workhorse of the randomized identity sweeps.
std::vector<double> random_distribution(int32_t vocab_size, RandomStream& rng);

}  // namespace vopd::oracle
