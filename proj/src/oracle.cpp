#include "vopd/oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vopd/divergence.hpp"

namespace vopd::oracle {

namespace {

void check_enumerable(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("distribution size mismatch");
  if (p.size() > static_cast<size_t>(kMaxEnumerableVocab))
    throw std::invalid_argument("vocabulary too large to enumerate: " +
                                std::to_string(p.size()));
}

ContributionOptions oracle_opts() {
  ContributionOptions o;
  o.temperature = 1.0;
  o.diagnostics = false;  // expectations don't need the diagnostic KL
  return o;
}

// E_p[ r ||s||^2 ] and E_p[ ||s||^2 ] with s(v) = onehot(v) - p (temp 1).
// ||s(v)||^2 = sum_j p_j^2 - 2 p_v + 1, computed in closed form per v.
void score_moments(std::span<const double> p, std::span<const double> q,
                   double* e_r_s2, double* e_s2) {
  double psq = 0.0;
  for (double x : p) psq += x * x;
  double ers = 0.0, es = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    double s2 = psq - 2.0 * p[v] + 1.0;
    double rv = std::log(q[v]) - std::log(p[v]);
    ers += p[v] * rv * s2;
    es += p[v] * s2;
  }
  *e_r_s2 = ers;
  *e_s2 = es;
}

}  // namespace

std::vector<double> exact_expected_gradient(const EstimatorSpec& spec,
                                            std::span<const double> p,
                                            std::span<const double> q) {
  check_enumerable(p, q);
  ContributionOptions opts = oracle_opts();
  std::vector<double> expected(p.size(), 0.0);
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    TokenContribution c =
        per_token_contribution(spec, p, q, static_cast<TokenId>(v), opts);
    for (size_t j = 0; j < expected.size(); ++j)
      expected[j] += p[v] * c.row[j];
  }
  return expected;
}

double exact_variance_trace(const EstimatorSpec& spec,
                            std::span<const double> p,
                            std::span<const double> q) {
  check_enumerable(p, q);
  std::vector<double> mean = exact_expected_gradient(spec, p, q);
  ContributionOptions opts = oracle_opts();
  double trace = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    TokenContribution c =
        per_token_contribution(spec, p, q, static_cast<TokenId>(v), opts);
    double sq = 0.0;
    for (size_t j = 0; j < mean.size(); ++j) {
      double d = c.row[j] - mean[j];
      sq += d * d;
    }
    trace += p[v] * sq;
  }
  return trace;
}

double exact_variance_trace_at_baseline(std::span<const double> p,
                                        std::span<const double> q, double b) {
  check_enumerable(p, q);
  // Mean of (r - b) s equals mean of r s (score identity), so center on the
  // plain expectation computed by enumeration for consistency.
  std::vector<double> mean(p.size(), 0.0);
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    double a = std::log(q[v]) - std::log(p[v]) - b;
    for (size_t j = 0; j < p.size(); ++j) {
      double s = (j == v ? 1.0 : 0.0) - p[j];
      mean[j] += p[v] * a * s;
    }
  }
  double trace = 0.0;
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    double a = std::log(q[v]) - std::log(p[v]) - b;
    double sq = 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
      double s = (j == v ? 1.0 : 0.0) - p[j];
      double d = a * s - mean[j];
      sq += d * d;
    }
    trace += p[v] * sq;
  }
  return trace;
}

double variance_gap_exact(std::span<const double> p, std::span<const double> q,
                          double b) {
  check_enumerable(p, q);
  double ers = 0.0, es = 0.0;
  score_moments(p, q, &ers, &es);
  return 2.0 * b * ers - b * b * es;
}

double variance_gap_predicted(std::span<const double> p,
                              std::span<const double> q) {
  check_enumerable(p, q);
  double kl = reverse_kl(p, q);
  double ers = 0.0, es = 0.0;
  score_moments(p, q, &ers, &es);
  return kl * kl * es;
}

double optimal_baseline(std::span<const double> p, std::span<const double> q) {
  check_enumerable(p, q);
  double ers = 0.0, es = 0.0;
  score_moments(p, q, &ers, &es);
  if (!(es > 0.0))
    throw std::domain_error("degenerate score norm: no variance to trade");
  return ers / es;
}

double score_identity_residual(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("empty distribution");
  double total = 0.0;
  for (double x : p) total += x;
  double worst = 0.0;
  for (double pj : p) {
    // component j of sum_v p_v (onehot(v) - p) is p_j (1 - sum_v p_v)
    double r = std::abs(pj * (1.0 - total));
    worst = std::max(worst, r);
  }
  return worst;
}

double baseline_cancellation_residual(std::span<const double> p,
                                      std::span<const double> q) {
  check_enumerable(p, q);
  double b = -reverse_kl(p, q);
  std::vector<double> lhs(p.size(), 0.0), rhs(p.size(), 0.0);
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    double rv = std::log(q[v]) - std::log(p[v]);
    for (size_t j = 0; j < p.size(); ++j) {
      double s = (j == v ? 1.0 : 0.0) - p[j];
      lhs[j] += p[v] * (rv - b) * s;
      rhs[j] += p[v] * rv * s;
    }
  }
  double worst = 0.0;
  for (size_t j = 0; j < p.size(); ++j)
    worst = std::max(worst, std::abs(lhs[j] - rhs[j]));
  return worst;
}

double topk_bias(std::span<const double> p, std::span<const double> q,
                 int32_t k) {
  check_enumerable(p, q);
  EstimatorSpec truncated{EstimatorKind::opd_top_k, k};
  EstimatorSpec full{EstimatorKind::opd_full_v, k};
  std::vector<double> a = exact_expected_gradient(truncated, p, q);
  std::vector<double> b = exact_expected_gradient(full, p, q);
  double sq = 0.0;
  for (size_t j = 0; j < a.size(); ++j) {
    double d = a[j] - b[j];
    sq += d * d;
  }
  return std::sqrt(sq);
}

double finite_difference_check(PolicyTable& policy, const Context& ctx,
                               TokenId tok, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  std::vector<double> analytic = policy.score_gradient(ctx, tok);
  std::vector<double>& z = policy.logits_for_update(ctx.key);
  double worst = 0.0;
  for (size_t j = 0; j < z.size(); ++j) {
    double original = z[j];
    z[j] = original + h;
    double up = policy.log_prob(ctx, tok);
    z[j] = original - h;
    double down = policy.log_prob(ctx, tok);
    z[j] = original;
    double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic[j]));
  }
  return worst;
}

MonteCarloResult monte_carlo_check(const EstimatorSpec& spec,
                                   std::span<const double> p,
                                   std::span<const double> q,
                                   int64_t n_samples, uint64_t seed) {
  check_enumerable(p, q);
  if (n_samples < 2)
    throw std::invalid_argument("need at least two samples for a std error");
  ContributionOptions opts = oracle_opts();
  size_t dim = p.size();
  std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
  RandomStream rng = RandomStream::derive(seed, 0x6d63);  // its own stream
  for (int64_t i = 0; i < n_samples; ++i) {
    double u = rng.next_double();
    TokenId tok = static_cast<TokenId>(dim - 1);
    double cum = 0.0;
    for (size_t v = 0; v < dim; ++v) {
      cum += p[v];
      if (u < cum) {
        tok = static_cast<TokenId>(v);
        break;
      }
    }
    TokenContribution c = per_token_contribution(spec, p, q, tok, opts);
    for (size_t j = 0; j < dim; ++j) {
      sum[j] += c.row[j];
      sumsq[j] += c.row[j] * c.row[j];
    }
  }
  MonteCarloResult out;
  out.samples = n_samples;
  out.mean.resize(dim);
  out.std_error.resize(dim);
  double n = static_cast<double>(n_samples);
  for (size_t j = 0; j < dim; ++j) {
    out.mean[j] = sum[j] / n;
    double var = (sumsq[j] - n * out.mean[j] * out.mean[j]) / (n - 1.0);
    out.std_error[j] = std::sqrt(std::max(var, 0.0) / n);
  }
  return out;
}

ContextReport context_report(const EstimatorSpec& spec,
                             std::span<const double> p,
                             std::span<const double> q) {
  check_enumerable(p, q);
  ContextReport rep;
  rep.expected_gradient = exact_expected_gradient(spec, p, q);
  rep.variance_trace = exact_variance_trace(spec, p, q);
  switch (spec.kind) {
    case EstimatorKind::vopd_full_v:
      rep.value_baseline = value_baseline(p, q, BaselineMode::full_vocab());
      break;
    case EstimatorKind::vopd_top_k:
      rep.value_baseline = value_baseline(p, q, BaselineMode::top_k(spec.k));
      break;
    default:
      rep.value_baseline = 0.0;
  }
  rep.optimal_baseline = optimal_baseline(p, q);
  rep.gap_exact = variance_gap_exact(p, q, rep.value_baseline);
  rep.gap_predicted = variance_gap_predicted(p, q);
  return rep;
}

std::vector<double> random_distribution(int32_t vocab_size, RandomStream& rng) {
  if (vocab_size < 2) throw std::invalid_argument("vocab size must be >= 2");
  std::vector<double> p(vocab_size);
  double total = 0.0;
  for (double& x : p) {
    // Exponential(1) via inverse CDF; 1-u keeps the argument in (0, 1].
    x = -std::log(1.0 - rng.next_double());
    total += x;
  }
  for (double& x : p) x /= total;
  return p;
}

}  // namespace vopd::oracle
