#include "vopd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "vopd/divergence.hpp"
#include "vopd/estimators.hpp"
#include "vopd/oracle.hpp"
#include "vopd/policy.hpp"
#include "vopd/rng.hpp"

namespace vopd::verify {

namespace {

// Frozen expected values, computed once with an independent enumeration
// oracle and pinned here.  The recurring two-token instance is
// p = (0.75, 0.25) against q = (0.5, 0.5).
constexpr double kPinRewardTok0 = -0.4054651081081644;
constexpr double kPinRewardTok1 = 0.6931471805599453;
constexpr double kPinKl = 0.13081203594113697;
constexpr double kPinAdvTok0 = -0.2746530721670274;
constexpr double kPinAdvTok1 = 0.8239592165010823;
constexpr double kPinRowMag = 0.06866326804175685;  // |vopd row| at token 0
constexpr double kPinExpectedGrad = 0.20598980412527057;  // |E[row]|, either kind
constexpr double kPinTracePlain = 0.06567649453484373;
constexpr double kPinTraceBaselined = 0.11315146507617957;
constexpr double kPinGapAtValueBaseline = -0.04747497054133583;
constexpr double kPinOptimalBaseline = 0.4184941083929179;
// Uniform-student instance p = (0.5, 0.5), q = (0.8, 0.2): the
// weak-correlation prediction is exact.
constexpr double kUniformKl = 0.22314355131420976;
constexpr double kUniformGap = 0.02489652224655867;
// Truncation witness p = (0.5, 0.3, 0.2), q = (0.2, 0.3, 0.5), k = 2.
constexpr double kWitnessTruncKl = 0.10267807817561131;
constexpr double kWitnessBias = 0.29237181975852805;

const std::vector<double> kPinP = {0.75, 0.25};
const std::vector<double> kPinQ = {0.5, 0.5};
const std::vector<double> kUniP = {0.5, 0.5};
const std::vector<double> kUniQ = {0.8, 0.2};
const std::vector<double> kWitP = {0.5, 0.3, 0.2};
const std::vector<double> kWitQ = {0.2, 0.3, 0.5};

struct Worst {
  double value = 0.0;
  void feed(double x) { value = std::max(value, x); }
};

double linf_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Instance stream: cycles V through {2, 16, 64} and k through {1, 5, 20, V}
// (clamped), with fresh Dirichlet(1) draws for p and q.
struct Instances {
  RandomStream rng;
  int index = 0;

  explicit Instances(uint64_t seed, uint64_t salt)
      : rng(RandomStream::derive(seed, 0x1d5, salt)) {}

  struct Item {
    int32_t vocab;
    int32_t k;
    std::vector<double> p, q;
  };

  Item next() {
    static constexpr int32_t vs[] = {2, 16, 64};
    static constexpr int32_t ks[] = {1, 5, 20, 0};  // 0 means "V"
    Item it;
    it.vocab = vs[index % 3];
    int32_t k = ks[(index / 3) % 4];
    it.k = k == 0 ? it.vocab : std::min(k, it.vocab);
    it.p = oracle::random_distribution(it.vocab, rng);
    it.q = oracle::random_distribution(it.vocab, rng);
    ++index;
    return it;
  }
};

CheckResult frozen_worked_examples(const Options& opts) {
  (void)opts;
  Worst w;
  w.feed(std::abs(token_reward(kPinP, kPinQ, 0) - kPinRewardTok0));
  w.feed(std::abs(token_reward(kPinP, kPinQ, 1) - kPinRewardTok1));
  w.feed(std::abs(reverse_kl(kPinP, kPinQ) - kPinKl));
  w.feed(std::abs(value_baseline(kPinP, kPinQ, BaselineMode::full_vocab()) -
                  (-kPinKl)));

  EstimatorSpec vfull{EstimatorKind::vopd_full_v, 2};
  TokenContribution c0 = per_token_contribution(vfull, kPinP, kPinQ, 0);
  TokenContribution c1 = per_token_contribution(vfull, kPinP, kPinQ, 1);
  w.feed(std::abs(c0.record.advantage - kPinAdvTok0));
  w.feed(std::abs(c1.record.advantage - kPinAdvTok1));
  w.feed(std::abs(c0.row[0] - (-kPinRowMag)));
  w.feed(std::abs(c0.row[1] - kPinRowMag));

  EstimatorSpec plain{EstimatorKind::opd, 2};
  std::vector<double> eg = oracle::exact_expected_gradient(plain, kPinP, kPinQ);
  w.feed(std::abs(eg[0] - (-kPinExpectedGrad)));
  w.feed(std::abs(eg[1] - kPinExpectedGrad));
  w.feed(std::abs(oracle::exact_variance_trace(plain, kPinP, kPinQ) -
                  kPinTracePlain));
  w.feed(std::abs(oracle::exact_variance_trace(vfull, kPinP, kPinQ) -
                  kPinTraceBaselined));
  w.feed(std::abs(oracle::variance_gap_exact(kPinP, kPinQ, -kPinKl) -
                  kPinGapAtValueBaseline));
  w.feed(std::abs(oracle::optimal_baseline(kPinP, kPinQ) -
                  kPinOptimalBaseline));

  w.feed(std::abs(reverse_kl(kUniP, kUniQ) - kUniformKl));
  w.feed(std::abs(oracle::variance_gap_predicted(kUniP, kUniQ) - kUniformGap));
  w.feed(std::abs(oracle::variance_gap_exact(kUniP, kUniQ, -kUniformKl) -
                  kUniformGap));

  TruncatedSupport wit = top_k_support(kWitP, 2);
  w.feed(std::abs(truncated_reverse_kl(kWitP, kWitQ, wit) - kWitnessTruncKl));
  w.feed(std::abs(oracle::topk_bias(kWitP, kWitQ, 2) - kWitnessBias));

  return {"frozen_worked_examples", w.value <= 1e-12, w.value, 1e-12,
          "library vs pinned enumeration values"};
}

CheckResult unbiasedness(const Options& opts) {
  Instances gen(opts.seed, 1);
  Worst w;
  for (int i = 0; i < 200; ++i) {
    Instances::Item it = gen.next();
    EstimatorSpec plain{EstimatorKind::opd, it.k};
    EstimatorSpec full{EstimatorKind::opd_full_v, it.k};
    EstimatorSpec vfull{EstimatorKind::vopd_full_v, it.k};
    EstimatorSpec vtop{EstimatorKind::vopd_top_k, it.k};
    std::vector<double> a = oracle::exact_expected_gradient(plain, it.p, it.q);
    std::vector<double> b = oracle::exact_expected_gradient(full, it.p, it.q);
    std::vector<double> c = oracle::exact_expected_gradient(vfull, it.p, it.q);
    std::vector<double> d = oracle::exact_expected_gradient(vtop, it.p, it.q);
    w.feed(linf_diff(a, b));
    w.feed(linf_diff(a, c));
    w.feed(linf_diff(a, d));
    w.feed(linf_diff(b, c));
  }
  return {"unbiasedness", w.value <= 1e-10, w.value, 1e-10,
          "200 random instances, all unbiased kinds pairwise"};
}

CheckResult baseline_cancellation(const Options& opts) {
  Instances gen(opts.seed, 2);
  Worst w;
  for (int i = 0; i < 200; ++i) {
    Instances::Item it = gen.next();
    w.feed(oracle::baseline_cancellation_residual(it.p, it.q));
    // Same identity for an arbitrary constant baseline, enumerated directly.
    double b = -5.0 + 10.0 * gen.rng.next_double();
    std::vector<double> lhs(it.p.size(), 0.0), rhs(it.p.size(), 0.0);
    for (size_t v = 0; v < it.p.size(); ++v) {
      double rv = std::log(it.q[v]) - std::log(it.p[v]);
      for (size_t j = 0; j < it.p.size(); ++j) {
        double s = (j == v ? 1.0 : 0.0) - it.p[j];
        lhs[j] += it.p[v] * (rv - b) * s;
        rhs[j] += it.p[v] * rv * s;
      }
    }
    w.feed(linf_diff(lhs, rhs));
  }
  return {"baseline_cancellation", w.value <= 1e-11, w.value, 1e-11,
          "E[(r-b)s] vs E[rs], value and random constant baselines"};
}

CheckResult variance_gap_identity(const Options& opts) {
  Instances gen(opts.seed, 3);
  Worst w;
  for (int i = 0; i < 200; ++i) {
    Instances::Item it = gen.next();
    double b = -5.0 + 10.0 * gen.rng.next_double();
    double gap = oracle::variance_gap_exact(it.p, it.q, b);
    double t0 = oracle::exact_variance_trace_at_baseline(it.p, it.q, 0.0);
    double tb = oracle::exact_variance_trace_at_baseline(it.p, it.q, b);
    w.feed(std::abs(gap - (t0 - tb)));
  }
  double pinned = oracle::variance_gap_exact(kPinP, kPinQ, -kPinKl);
  bool pin_ok = std::abs(pinned - kPinGapAtValueBaseline) <= 1e-12;
  return {"variance_gap_identity", w.value <= 1e-9 && pin_ok, w.value, 1e-9,
          "closed form vs trace difference, plus pinned instance"};
}

CheckResult uniform_gap_exactness(const Options& opts) {
  Instances gen(opts.seed, 4);
  Worst w;
  for (int i = 0; i < 100; ++i) {
    Instances::Item it = gen.next();
    std::vector<double> p(it.vocab, 1.0 / it.vocab);
    double kl = reverse_kl(p, it.q);
    double exact = oracle::variance_gap_exact(p, it.q, -kl);
    double predicted = oracle::variance_gap_predicted(p, it.q);
    w.feed(std::abs(exact - predicted));
  }
  double pin = oracle::variance_gap_predicted(kUniP, kUniQ);
  bool pin_ok = std::abs(pin - kUniformGap) <= 1e-12;
  return {"uniform_gap_exactness", w.value <= 1e-9 && pin_ok, w.value, 1e-9,
          "prediction is exact for a uniform student"};
}

CheckResult optimal_baseline_optimality(const Options& opts) {
  Instances gen(opts.seed, 5);
  Worst violation;  // trace(b*) - trace(b), should never exceed ~0
  Worst quad;       // departure from the quadratic identity
  double base = -1.0;
  for (int i = 0; i < 100; ++i) {
    Instances::Item it = gen.next();
    double bstar = oracle::optimal_baseline(it.p, it.q);
    double tstar = oracle::exact_variance_trace_at_baseline(it.p, it.q, bstar);
    double es2 = oracle::variance_gap_predicted(it.p, it.q);  // KL^2 * E s^2
    double kl = reverse_kl(it.p, it.q);
    es2 = kl > 0.0 ? es2 / (kl * kl) : 0.0;
    for (int j = 0; j < 100; ++j) {
      double b = -5.0 + 10.0 * gen.rng.next_double();
      double tb = oracle::exact_variance_trace_at_baseline(it.p, it.q, b);
      violation.feed(tstar - tb);
      // The trace is a parabola in b with curvature E[||s||^2]:
      // trace(b) = trace(b*) + E[||s||^2] (b - b*)^2.
      quad.feed(std::abs(tb - tstar - es2 * (b - bstar) * (b - bstar)));
    }
    base = std::max(base, tstar);
  }
  (void)base;
  bool pass = violation.value <= 1e-12 && quad.value <= 1e-9;
  return {"optimal_baseline_optimality", pass, violation.value, 1e-12,
          "100 instances x 100 baselines, plus quadratic shape"};
}

CheckResult truncation_bias_witness(const Options& opts) {
  Instances gen(opts.seed, 6);
  double bias = oracle::topk_bias(kWitP, kWitQ, 2);
  bool frozen_ok = std::abs(bias - kWitnessBias) <= 1e-12;
  bool big = bias > 1e-3;
  Worst full_support;
  full_support.feed(oracle::topk_bias(kWitP, kWitQ, 3));
  for (int i = 0; i < 50; ++i) {
    Instances::Item it = gen.next();
    full_support.feed(oracle::topk_bias(it.p, it.q, it.vocab));
    full_support.feed(oracle::topk_bias(it.p, it.p, it.k));  // teacher == student
  }
  bool pass = frozen_ok && big && full_support.value <= 1e-12;
  return {"truncation_bias_witness", pass, bias, 1e-3,
          "witness bias must exceed threshold; zero at full support"};
}

CheckResult degenerate_k_equivalence(const Options& opts) {
  Instances gen(opts.seed, 7);
  double k1_worst = 0.0;
  Worst kv;
  for (int i = 0; i < 200; ++i) {
    Instances::Item it = gen.next();
    TokenId tok = static_cast<TokenId>(gen.rng.next_below(it.vocab));
    EstimatorSpec plain{EstimatorKind::opd, 1};
    EstimatorSpec k1{EstimatorKind::vopd_top_k, 1};
    TokenContribution a = per_token_contribution(plain, it.p, it.q, tok);
    TokenContribution b = per_token_contribution(k1, it.p, it.q, tok);
    k1_worst = std::max(k1_worst, linf_diff(a.row, b.row));

    EstimatorSpec kvspec{EstimatorKind::vopd_top_k, it.vocab};
    EstimatorSpec vfull{EstimatorKind::vopd_full_v, it.vocab};
    TokenContribution c = per_token_contribution(kvspec, it.p, it.q, tok);
    TokenContribution d = per_token_contribution(vfull, it.p, it.q, tok);
    kv.feed(linf_diff(c.row, d.row));

    EstimatorSpec tfull{EstimatorKind::opd_top_k, it.vocab};
    EstimatorSpec efull{EstimatorKind::opd_full_v, it.vocab};
    TokenContribution e = per_token_contribution(tfull, it.p, it.q, tok);
    TokenContribution f = per_token_contribution(efull, it.p, it.q, tok);
    kv.feed(linf_diff(e.row, f.row));
  }
  bool pass = k1_worst == 0.0 && kv.value <= 1e-12;
  return {"degenerate_k_equivalence", pass, std::max(k1_worst, kv.value),
          1e-12, "k=1 collapses to plain (bit-exact); k=V to full vocab"};
}

CheckResult detach_structure(const Options& opts) {
  Instances gen(opts.seed, 8);
  Worst w;
  ContributionOptions copts;
  copts.corrupt_baseline_detach = opts.corrupt_detach;
  for (int i = 0; i < 200; ++i) {
    Instances::Item it = gen.next();
    TokenId tok = static_cast<TokenId>(gen.rng.next_below(it.vocab));
    for (EstimatorKind kind : {EstimatorKind::opd, EstimatorKind::vopd_full_v,
                               EstimatorKind::vopd_top_k}) {
      EstimatorSpec spec{kind, it.k};
      TokenContribution c =
          per_token_contribution(spec, it.p, it.q, tok, copts);
      // A correctly detached single-sample row is exactly
      // advantage * (onehot(tok) - p): rank one in the sampled token, no
      // contribution from the baseline's own gradient.
      for (size_t j = 0; j < it.p.size(); ++j) {
        double s = (j == static_cast<size_t>(tok) ? 1.0 : 0.0) - it.p[j];
        w.feed(std::abs(c.row[j] - c.record.advantage * s));
      }
    }
  }
  return {"detach_structure", w.value <= 1e-12, w.value, 1e-12,
          "row == advantage * score(sampled token) exactly"};
}

CheckResult score_identity(const Options& opts) {
  RandomStream rng = RandomStream::derive(opts.seed, 0x51);
  Worst w;
  for (int32_t vocab : {2, 64, 10000}) {
    for (int i = 0; i < 10; ++i) {
      std::vector<double> p = oracle::random_distribution(vocab, rng);
      w.feed(oracle::score_identity_residual(p));
    }
  }
  // Near-point-mass distributions stress the cancellation hardest.
  std::vector<double> spiky(64, 1e-9);
  double rest = 1.0 - 63e-9;
  spiky[17] = rest;
  w.feed(oracle::score_identity_residual(spiky));
  return {"score_identity", w.value <= 1e-10, w.value, 1e-10,
          "E[score] = 0 up to vocab 10^4"};
}

CheckResult finite_difference(const Options& opts) {
  VocabSpec vocab{16, 1};
  PolicyTable policy(vocab, 1.0, true, RowInitSpec{opts.seed, 7, 2.0});
  RandomStream rng = RandomStream::derive(opts.seed, 0xfd);
  Worst w;
  for (int i = 0; i < 10; ++i) {
    std::vector<TokenId> window = {
        static_cast<TokenId>(rng.next_below(vocab.size))};
    Context ctx = make_context(vocab, static_cast<int32_t>(i % 3), window);
    for (int t = 0; t < 4; ++t) {
      TokenId tok = static_cast<TokenId>(rng.next_below(vocab.size));
      w.feed(oracle::finite_difference_check(policy, ctx, tok, 1e-5));
    }
  }
  return {"finite_difference", w.value <= 1e-6, w.value, 1e-6,
          "score gradient vs central differences, h=1e-5"};
}

// Numeric gradient of the full and truncated objectives themselves, checked
// against the closed-form exact rows.
CheckResult objective_gradient_fd(const Options& opts) {
  RandomStream rng = RandomStream::derive(opts.seed, 0x0b1);
  constexpr int32_t kVocab = 8;
  constexpr int32_t kTop = 3;
  constexpr double kH = 1e-6;
  auto softmax = [](const std::vector<double>& z) {
    double m = z[0];
    for (double x : z) m = std::max(m, x);
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (size_t v = 0; v < z.size(); ++v) {
      p[v] = std::exp(z[v] - m);
      sum += p[v];
    }
    for (double& x : p) x /= sum;
    return p;
  };
  Worst w;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> z(kVocab);
    std::vector<double> q;
    std::vector<double> p;
    for (;;) {
      for (double& x : z) x = 1.5 * rng.next_gaussian();
      q = oracle::random_distribution(kVocab, rng);
      p = softmax(z);
      // The truncated objective is only differentiable where the support is
      // stable; demand a clear probability gap at the k-th slot.
      std::vector<double> sorted = p;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      if (sorted[kTop - 1] - sorted[kTop] > 1e-3) break;
    }
    EstimatorSpec full{EstimatorKind::opd_full_v, kTop};
    EstimatorSpec trunc{EstimatorKind::opd_top_k, kTop};
    std::vector<double> full_row =
        per_token_contribution(full, p, q, 0).row;
    std::vector<double> trunc_row =
        per_token_contribution(trunc, p, q, 0).row;
    for (int32_t j = 0; j < kVocab; ++j) {
      double orig = z[j];
      auto objective_at = [&](double zj, bool truncated) {
        z[j] = zj;
        std::vector<double> pj = softmax(z);
        double val;
        if (truncated) {
          TruncatedSupport s = top_k_support(pj, kTop);
          val = -truncated_reverse_kl(pj, q, s);
        } else {
          val = -reverse_kl(pj, q);
        }
        z[j] = orig;
        return val;
      };
      double fd_full = (objective_at(orig + kH, false) -
                        objective_at(orig - kH, false)) / (2.0 * kH);
      double fd_trunc = (objective_at(orig + kH, true) -
                         objective_at(orig - kH, true)) / (2.0 * kH);
      w.feed(std::abs(fd_full - full_row[j]));
      w.feed(std::abs(fd_trunc - trunc_row[j]));
    }
  }
  return {"objective_gradient_fd", w.value <= 1e-6, w.value, 1e-6,
          "closed-form rows vs numeric gradients of both objectives"};
}

CheckResult monte_carlo_agreement(const Options& opts) {
  Instances gen(opts.seed, 9);
  double worst_ratio = 0.0;
  for (EstimatorKind kind : {EstimatorKind::opd, EstimatorKind::vopd_full_v,
                             EstimatorKind::vopd_top_k}) {
    for (int rep = 0; rep < 2; ++rep) {
      RandomStream r = RandomStream::derive(opts.seed, 0x77, rep);
      std::vector<double> p = oracle::random_distribution(16, r);
      std::vector<double> q = oracle::random_distribution(16, r);
      EstimatorSpec spec{kind, 5};
      std::vector<double> exact = oracle::exact_expected_gradient(spec, p, q);
      oracle::MonteCarloResult mc = oracle::monte_carlo_check(
          spec, p, q, 100000, opts.seed + 31 * rep +
                                   static_cast<uint64_t>(kind));
      for (size_t j = 0; j < exact.size(); ++j) {
        double band = 4.0 * mc.std_error[j] + 1e-12;
        worst_ratio =
            std::max(worst_ratio, std::abs(mc.mean[j] - exact[j]) / band);
      }
    }
  }
  return {"monte_carlo_agreement", worst_ratio <= 1.0, worst_ratio, 1.0,
          "sample means inside 4 standard errors of enumeration"};
}

}  // namespace

std::vector<CheckResult> run_identity_suite(const Options& opts) {
  std::vector<CheckResult> results;
  results.push_back(frozen_worked_examples(opts));
  results.push_back(unbiasedness(opts));
  results.push_back(baseline_cancellation(opts));
  results.push_back(variance_gap_identity(opts));
  results.push_back(uniform_gap_exactness(opts));
  results.push_back(optimal_baseline_optimality(opts));
  results.push_back(truncation_bias_witness(opts));
  results.push_back(degenerate_k_equivalence(opts));
  results.push_back(detach_structure(opts));
  results.push_back(score_identity(opts));
  results.push_back(finite_difference(opts));
  results.push_back(objective_gradient_fd(opts));
  results.push_back(monte_carlo_agreement(opts));
  return results;
}

bool all_passed(std::span<const CheckResult> results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

void print_table(std::ostream& out, std::span<const CheckResult> results) {
  size_t name_w = 4;
  for (const CheckResult& r : results) name_w = std::max(name_w, r.name.size());
  char line[512];
  std::snprintf(line, sizeof(line), "%-*s  %-12s  %-12s  %-6s  %s\n",
                static_cast<int>(name_w), "check", "observed", "threshold",
                "status", "note");
  out << line;
  int passed = 0;
  for (const CheckResult& r : results) {
    std::snprintf(line, sizeof(line), "%-*s  %-12.4g  %-12.4g  %-6s  %s\n",
                  static_cast<int>(name_w), r.name.c_str(), r.observed,
                  r.threshold, r.pass ? "pass" : "FAIL", r.note.c_str());
    out << line;
    if (r.pass) ++passed;
  }
  out << passed << "/" << results.size() << " checks passed\n";
}

std::string to_json(const Options& opts, std::span<const CheckResult> results) {
  nlohmann::json j;
  j["seed"] = opts.seed;
  j["corrupt_detach"] = opts.corrupt_detach;
  j["all_passed"] = all_passed(results);
  j["checks"] = nlohmann::json::array();
  for (const CheckResult& r : results) {
    j["checks"].push_back({{"name", r.name},
                           {"pass", r.pass},
                           {"observed", r.observed},
                           {"threshold", r.threshold},
                           {"note", r.note}});
  }
  return j.dump(2) + "\n";
}

}  // namespace vopd::verify
