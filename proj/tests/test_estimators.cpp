#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "vopd/estimators.hpp"
#include "vopd/oracle.hpp"
#include "vopd/policy.hpp"
#include "vopd/rng.hpp"

using namespace vopd;

namespace {

const std::vector<double> kP{0.75, 0.25};
const std::vector<double> kQ{0.5, 0.5};

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("estimator names round-trip") {
  for (EstimatorKind kind :
       {EstimatorKind::opd, EstimatorKind::opd_full_v, EstimatorKind::opd_top_k,
        EstimatorKind::vopd_full_v, EstimatorKind::vopd_top_k}) {
    auto parsed = estimator_kind_from_string(to_string(kind));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == kind);
  }
  CHECK(!estimator_kind_from_string("nope").has_value());
  CHECK(!estimator_kind_from_string("OPD").has_value());
}

TEST_CASE("single-sample row is reward times score") {
  EstimatorSpec spec{EstimatorKind::opd, 2};
  TokenContribution c = per_token_contribution(spec, kP, kQ, 1);
  double r = 0.6931471805599453;
  CHECK(std::abs(c.record.reward - r) <= 1e-15);
  CHECK(c.record.advantage == c.record.reward);
  CHECK(c.record.baseline == 0.0);
  CHECK(std::abs(c.row[0] - r * (0.0 - 0.75)) <= 1e-15);
  CHECK(std::abs(c.row[1] - r * (1.0 - 0.25)) <= 1e-15);
  CHECK(std::abs(c.record.student_logprob - std::log(0.25)) <= 1e-15);
  CHECK(std::abs(c.record.teacher_logprob - std::log(0.5)) <= 1e-15);
}

TEST_CASE("baselined row matches the pinned worked example") {
  EstimatorSpec spec{EstimatorKind::vopd_full_v, 2};
  TokenContribution c0 = per_token_contribution(spec, kP, kQ, 0);
  TokenContribution c1 = per_token_contribution(spec, kP, kQ, 1);
  CHECK(std::abs(c0.record.baseline - (-0.13081203594113697)) <= 1e-15);
  CHECK(std::abs(c0.record.advantage - (-0.2746530721670274)) <= 1e-15);
  CHECK(std::abs(c1.record.advantage - 0.8239592165010823) <= 1e-15);
  CHECK(std::abs(c0.row[0] - (-0.06866326804175685)) <= 1e-15);
  CHECK(std::abs(c0.row[1] - 0.06866326804175685) <= 1e-15);
  CHECK(std::abs(c0.record.full_kl - 0.13081203594113697) <= 1e-15);
}

TEST_CASE("temperature scales every row by its inverse") {
  RandomStream rng = RandomStream::derive(21, 1);
  std::vector<double> p = oracle::random_distribution(12, rng);
  std::vector<double> q = oracle::random_distribution(12, rng);
  ContributionOptions hot;
  hot.temperature = 2.0;
  for (EstimatorKind kind :
       {EstimatorKind::opd, EstimatorKind::opd_full_v, EstimatorKind::opd_top_k,
        EstimatorKind::vopd_full_v, EstimatorKind::vopd_top_k}) {
    EstimatorSpec spec{kind, 4};
    TokenContribution cold = per_token_contribution(spec, p, q, 3);
    TokenContribution scaled = per_token_contribution(spec, p, q, 3, hot);
    for (size_t j = 0; j < p.size(); ++j)
      CHECK(std::abs(scaled.row[j] - 0.5 * cold.row[j]) <= 1e-15);
    // The record is temperature-independent: rewards live in logprob space.
    CHECK(scaled.record.reward == cold.record.reward);
    CHECK(scaled.record.advantage == cold.record.advantage);
  }
}

TEST_CASE("full-vocabulary row equals the enumerated expectation") {
  RandomStream rng = RandomStream::derive(22, 1);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> p = oracle::random_distribution(16, rng);
    std::vector<double> q = oracle::random_distribution(16, rng);
    EstimatorSpec plain{EstimatorKind::opd, 16};
    EstimatorSpec full{EstimatorKind::opd_full_v, 16};
    std::vector<double> expected = oracle::exact_expected_gradient(plain, p, q);
    TokenContribution c = per_token_contribution(full, p, q, 0);
    CHECK(linf(c.row, expected) <= 1e-12);
    // Pinned two-token value of the same expectation.
    std::vector<double> eg =
        oracle::exact_expected_gradient(plain, kP, kQ);
    CHECK(std::abs(eg[0] - (-0.20598980412527057)) <= 1e-13);
    CHECK(std::abs(eg[1] - 0.20598980412527057) <= 1e-13);
    // The diagnostic divergence falls out of the same pass.
    CHECK(std::abs(c.record.full_kl - reverse_kl(p, q)) <= 1e-12);
  }
}

TEST_CASE("truncated row is zero off support and exact on it") {
  RandomStream rng = RandomStream::derive(23, 1);
  std::vector<double> p = oracle::random_distribution(10, rng);
  std::vector<double> q = oracle::random_distribution(10, rng);
  EstimatorSpec spec{EstimatorKind::opd_top_k, 4};
  TokenContribution c = per_token_contribution(spec, p, q, 0);
  TruncatedSupport support = top_k_support(p, 4);
  size_t on_support = 0;
  for (size_t j = 0; j < p.size(); ++j) {
    bool in = std::find(support.indices.begin(), support.indices.end(),
                        static_cast<TokenId>(j)) != support.indices.end();
    if (!in) CHECK(c.row[j] == 0.0);
    else ++on_support;
  }
  CHECK(on_support == 4);
  // k = V collapses to the full-vocabulary row.
  EstimatorSpec all{EstimatorKind::opd_top_k, 10};
  EstimatorSpec full{EstimatorKind::opd_full_v, 10};
  CHECK(linf(per_token_contribution(all, p, q, 0).row,
             per_token_contribution(full, p, q, 0).row) <= 1e-12);
}

TEST_CASE("top-k baseline with k=1 collapses to the plain estimator") {
  RandomStream rng = RandomStream::derive(24, 1);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> p = oracle::random_distribution(8, rng);
    std::vector<double> q = oracle::random_distribution(8, rng);
    TokenId tok = static_cast<TokenId>(rng.next_below(8));
    EstimatorSpec plain{EstimatorKind::opd, 1};
    EstimatorSpec k1{EstimatorKind::vopd_top_k, 1};
    TokenContribution a = per_token_contribution(plain, p, q, tok);
    TokenContribution b = per_token_contribution(k1, p, q, tok);
    CHECK(a.row == b.row);  // bit-exact: the k=1 baseline is exactly zero
    CHECK(b.record.baseline == 0.0);
  }
}

TEST_CASE("estimator input validation") {
  EstimatorSpec spec{EstimatorKind::vopd_top_k, 5};
  CHECK_THROWS_AS(per_token_contribution(spec, kP, kQ, 0),
                  std::invalid_argument);  // k > vocab
  EstimatorSpec plain{EstimatorKind::opd, 2};
  CHECK_THROWS_AS(per_token_contribution(plain, kP, kQ, 7),
                  std::invalid_argument);
  std::vector<double> mismatched{0.5, 0.3, 0.2};
  CHECK_THROWS_AS(per_token_contribution(plain, kP, mismatched, 0),
                  std::invalid_argument);
  ContributionOptions bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(per_token_contribution(plain, kP, kQ, 0, bad),
                  std::invalid_argument);
}

TEST_CASE("diagnostics flag controls the optional divergence") {
  EstimatorSpec plain{EstimatorKind::opd, 2};
  ContributionOptions quiet;
  quiet.diagnostics = false;
  CHECK(per_token_contribution(plain, kP, kQ, 0, quiet).record.full_kl == 0.0);
  CHECK(std::abs(per_token_contribution(plain, kP, kQ, 0).record.full_kl -
                 0.13081203594113697) <= 1e-15);
  // The baselined kinds need the divergence regardless.
  EstimatorSpec vfull{EstimatorKind::vopd_full_v, 2};
  CHECK(per_token_contribution(vfull, kP, kQ, 0, quiet).record.full_kl > 0.0);
}

TEST_CASE("corrupting the baseline detach changes the row") {
  RandomStream rng = RandomStream::derive(25, 1);
  std::vector<double> p = oracle::random_distribution(8, rng);
  std::vector<double> q = oracle::random_distribution(8, rng);
  ContributionOptions corrupt;
  corrupt.corrupt_baseline_detach = true;
  for (EstimatorKind kind :
       {EstimatorKind::vopd_full_v, EstimatorKind::vopd_top_k}) {
    EstimatorSpec spec{kind, 3};
    TokenContribution clean = per_token_contribution(spec, p, q, 2);
    TokenContribution dirty = per_token_contribution(spec, p, q, 2, corrupt);
    CHECK(linf(clean.row, dirty.row) > 1e-6);
    CHECK(clean.record.advantage == dirty.record.advantage);
  }
}

TEST_CASE("batch gradient is the token mean over merged rows") {
  VocabSpec vocab{8, 1};
  InitOptions init;
  PolicyPair pair = init_policies(vocab, 17, init);
  RandomStream rng = RandomStream::derive(17, 12, 1, 0);
  std::vector<Trajectory> batch;
  batch.push_back(rollout(pair.student, 0, 6, rng));
  batch.push_back(rollout(pair.student, 1, 6, rng));

  EstimatorSpec spec{EstimatorKind::vopd_full_v, 8};
  BatchResult result =
      batch_gradient(spec, pair.student, pair.teacher, batch, {});
  CHECK(result.grad.token_count == 12);
  CHECK(result.records.size() == 12);

  // Recompute the same reduction by hand.
  std::map<uint64_t, std::vector<double>> manual;
  for (const Trajectory& traj : batch) {
    for (size_t t = 0; t < traj.tokens.size(); ++t) {
      std::vector<double> p = pair.student.next_dist(traj.contexts[t]);
      std::vector<double> q = pair.teacher.next_dist(traj.contexts[t]);
      TokenContribution c = per_token_contribution(spec, p, q, traj.tokens[t]);
      auto [it, fresh] = manual.try_emplace(traj.contexts[t].key,
                                            std::vector<double>(8, 0.0));
      for (size_t j = 0; j < 8; ++j) it->second[j] += c.row[j];
    }
  }
  REQUIRE(manual.size() == result.grad.rows.size());
  for (const auto& [key, row] : result.grad.rows) {
    REQUIRE(manual.count(key) == 1);
    for (size_t j = 0; j < 8; ++j)
      CHECK(std::abs(row[j] - manual[key][j] / 12.0) <= 1e-14);
  }
  CHECK(std::abs(result.grad.l2_norm - result.grad.recompute_l2()) <= 1e-12);
}

TEST_CASE("batch gradient rejects stale trajectories") {
  VocabSpec vocab{8, 1};
  InitOptions init;
  PolicyPair pair = init_policies(vocab, 18, init);
  RandomStream rng = RandomStream::derive(18, 12, 1, 0);
  std::vector<Trajectory> batch;
  batch.push_back(rollout(pair.student, 0, 4, rng));
  // Any committed update (even touching nothing) advances the version.
  std::vector<uint64_t> none;
  pair.student.commit_update(none);
  CHECK_THROWS_AS(
      batch_gradient(EstimatorSpec{}, pair.student, pair.teacher, batch, {}),
      std::logic_error);
}

TEST_CASE("batch gradient rejects empty input") {
  VocabSpec vocab{8, 1};
  InitOptions init;
  PolicyPair pair = init_policies(vocab, 19, init);
  std::vector<Trajectory> empty;
  CHECK_THROWS_AS(
      batch_gradient(EstimatorSpec{}, pair.student, pair.teacher, empty, {}),
      std::invalid_argument);
}

TEST_CASE("batch records can be dropped") {
  VocabSpec vocab{8, 1};
  InitOptions init;
  PolicyPair pair = init_policies(vocab, 20, init);
  RandomStream rng = RandomStream::derive(20, 12, 1, 0);
  std::vector<Trajectory> batch;
  batch.push_back(rollout(pair.student, 0, 4, rng));
  BatchOptions opts;
  opts.keep_records = false;
  BatchResult result =
      batch_gradient(EstimatorSpec{}, pair.student, pair.teacher, batch, opts);
  CHECK(result.records.empty());
  CHECK(result.grad.token_count == 4);
}
