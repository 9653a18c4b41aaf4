#include "vopd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "vopd/divergence.hpp"
#include "vopd/parallel.hpp"

namespace vopd {

namespace {

// Purpose tags for stream derivation; distinct tags keep the draws for
// prompts, rollouts and probes decorrelated at the same (seed, step).
constexpr uint64_t kPromptTag = 11;
constexpr uint64_t kRolloutTag = 12;
constexpr uint64_t kProbeTag = 13;

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

void check_finite(const GradientEstimate& grad, int64_t step) {
  for (const auto& [key, row] : grad.rows)
    for (double x : row)
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite gradient at step " +
                                 std::to_string(step) + ", context key " +
                                 std::to_string(key));
}

// One sampling site for the variance probe: a visited context with its
// distributions frozen at probe time.  Resampling only re-rolls the token.
struct ProbeSite {
  uint64_t key = 0;
  std::vector<double> p;      // student dist (also the sampling CDF source)
  std::vector<double> coeff;  // advantage as a function of the resampled token
  std::vector<double> fixed_row;  // for kinds whose row ignores the token
  bool single_sample = true;
};

// Trace of the empirical covariance of the batch-mean gradient, estimated by
// resampling every site's token `samples` times.  Uses the one-pass identity
// trace = (sum_j ||g_j||^2 - S ||mean||^2) / (S - 1).
double variance_probe(const EstimatorSpec& spec, PolicyTable& student,
                      PolicyTable& teacher,
                      std::span<const Trajectory> trajectories,
                      int32_t samples, uint64_t seed, int64_t step) {
  double inv_t = 1.0 / student.temperature();
  std::vector<ProbeSite> sites;
  for (const Trajectory& traj : trajectories) {
    for (const Context& ctx : traj.contexts) {
      ProbeSite site;
      site.key = ctx.key;
      site.p = student.next_dist(ctx);
      std::vector<double> q = teacher.next_dist(ctx);
      size_t dim = site.p.size();
      switch (spec.kind) {
        case EstimatorKind::opd:
        case EstimatorKind::vopd_full_v:
        case EstimatorKind::vopd_top_k: {
          double b = 0.0;
          if (spec.kind == EstimatorKind::vopd_full_v)
            b = value_baseline(site.p, q, BaselineMode::full_vocab());
          else if (spec.kind == EstimatorKind::vopd_top_k)
            b = value_baseline(site.p, q, BaselineMode::top_k(spec.k));
          site.coeff.resize(dim);
          for (size_t v = 0; v < dim; ++v)
            site.coeff[v] = std::log(q[v]) - std::log(site.p[v]) - b;
          break;
        }
        case EstimatorKind::opd_full_v:
        case EstimatorKind::opd_top_k: {
          site.single_sample = false;
          ContributionOptions opts;
          opts.temperature = student.temperature();
          opts.diagnostics = false;
          // Row is token-independent; any in-support token works.
          site.fixed_row =
              per_token_contribution(spec, site.p, q, 0, opts).row;
          break;
        }
      }
      sites.push_back(std::move(site));
    }
  }
  if (sites.empty()) return 0.0;
  double inv_n = 1.0 / static_cast<double>(sites.size());

  std::map<uint64_t, std::vector<double>> sum_rows;
  double sum_sq_norm = 0.0;
  std::map<uint64_t, std::vector<double>> g;  // reused per resample
  for (int32_t j = 0; j < samples; ++j) {
    RandomStream rng = RandomStream::derive(seed, kProbeTag,
                                            static_cast<uint64_t>(step),
                                            static_cast<uint64_t>(j));
    g.clear();
    for (const ProbeSite& site : sites) {
      size_t dim = site.p.size();
      auto [it, fresh] = g.try_emplace(site.key);
      if (fresh) it->second.assign(dim, 0.0);
      std::vector<double>& row = it->second;
      if (site.single_sample) {
        double u = rng.next_double();
        size_t tok = dim - 1;
        double cum = 0.0;
        for (size_t v = 0; v < dim; ++v) {
          cum += site.p[v];
          if (u < cum) { tok = v; break; }
        }
        double a = site.coeff[tok] * inv_t * inv_n;
        for (size_t v = 0; v < dim; ++v) row[v] -= a * site.p[v];
        row[tok] += a;
      } else {
        rng.next_double();  // keep streams aligned across kinds
        for (size_t v = 0; v < dim; ++v)
          row[v] += inv_n * site.fixed_row[v];
      }
    }
    double sq = 0.0;
    for (auto& [key, row] : g) {
      auto [it, fresh] = sum_rows.try_emplace(key);
      if (fresh) it->second.assign(row.size(), 0.0);
      for (size_t v = 0; v < row.size(); ++v) {
        it->second[v] += row[v];
        sq += row[v] * row[v];
      }
    }
    sum_sq_norm += sq;
  }
  double s = static_cast<double>(samples);
  double mean_sq = 0.0;
  for (const auto& [_, row] : sum_rows)
    for (double x : row) mean_sq += (x / s) * (x / s);
  double trace = (sum_sq_norm - s * mean_sq) / (s - 1.0);
  return trace > 0.0 ? trace : 0.0;  // clamp float-cancellation negatives
}

}  // namespace

const char* to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adaptive_moments: return "adaptive_moments";
  }
  return "?";
}

std::optional<OptimizerKind> optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adaptive_moments") return OptimizerKind::adaptive_moments;
  return std::nullopt;
}

void TrainConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v < 1)
      throw std::invalid_argument(std::string(name) + " must be >= 1, got " +
                                  std::to_string(v));
  };
  VocabSpec vocab{vocab_size, context_order};
  vocab.validate(prompt_count);
  positive(prompt_count, "prompt_count");
  positive(max_len, "max_len");
  positive(batch_size, "batch_size");
  positive(steps, "steps");
  positive(variance_probe_every, "variance_probe_every");
  if (variance_probe_samples < 2)
    throw std::invalid_argument("variance_probe_samples must be >= 2, got " +
                                std::to_string(variance_probe_samples));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be positive and finite");
  if (!(rollout_temperature > 0.0) || !std::isfinite(rollout_temperature))
    throw std::invalid_argument("rollout_temperature must be positive");
  bool topk = estimator.kind == EstimatorKind::opd_top_k ||
              estimator.kind == EstimatorKind::vopd_top_k;
  if (topk && (estimator.k < 1 || estimator.k > vocab_size))
    throw std::invalid_argument(
        "k must be in [1, vocab_size]: k=" + std::to_string(estimator.k) +
        " vocab_size=" + std::to_string(vocab_size));
  if (init_mode == InitMode::custom_file &&
      (teacher_file.empty() || student_file.empty()))
    throw std::invalid_argument(
        "custom_file init needs teacher_file and student_file");
  if (context_sink_stride < 0)
    throw std::invalid_argument("context_sink_stride must be >= 0");
}

void optimizer_step(OptimizerState& state, PolicyTable& params,
                    const GradientEstimate& grad, double learning_rate) {
  if (grad.rows.empty())
    throw std::invalid_argument("optimizer_step got an empty gradient");
  std::vector<uint64_t> touched;
  touched.reserve(grad.rows.size());
  switch (state.kind) {
    case OptimizerKind::sgd: {
      for (const auto& [key, row] : grad.rows) {
        std::vector<double>& z = params.logits_for_update(key);
        for (size_t v = 0; v < row.size(); ++v)
          z[v] += learning_rate * row[v];
        touched.push_back(key);
      }
      break;
    }
    case OptimizerKind::adaptive_moments: {
      ++state.step_count;
      double t = static_cast<double>(state.step_count);
      double bc1 = 1.0 - std::pow(OptimizerState::kBeta1, t);
      double bc2 = 1.0 - std::pow(OptimizerState::kBeta2, t);
      for (const auto& [key, row] : grad.rows) {
        auto [mit, mfresh] = state.first_moment.try_emplace(key);
        if (mfresh) mit->second.assign(row.size(), 0.0);
        auto [vit, vfresh] = state.second_moment.try_emplace(key);
        if (vfresh) vit->second.assign(row.size(), 0.0);
        std::vector<double>& m = mit->second;
        std::vector<double>& s = vit->second;
        std::vector<double>& z = params.logits_for_update(key);
        for (size_t v = 0; v < row.size(); ++v) {
          double gv = row[v];
          m[v] = OptimizerState::kBeta1 * m[v] +
                 (1.0 - OptimizerState::kBeta1) * gv;
          s[v] = OptimizerState::kBeta2 * s[v] +
                 (1.0 - OptimizerState::kBeta2) * gv * gv;
          double mhat = m[v] / bc1;
          double shat = s[v] / bc2;
          z[v] += learning_rate * mhat /
                  (std::sqrt(shat) + OptimizerState::kEpsilon);
        }
        touched.push_back(key);
      }
      break;
    }
  }
  params.commit_update(touched);
}

EvalResult evaluate(PolicyTable& student, PolicyTable& teacher,
                    int32_t prompt_count, int32_t max_len) {
  if (prompt_count < 1 || max_len < 1)
    throw std::invalid_argument("evaluate needs prompts and a horizon");
  const VocabSpec& vocab = student.vocab();
  double kl_sum = 0.0;
  int64_t visits = 0, agreements = 0;
  for (int32_t prompt = 0; prompt < prompt_count; ++prompt) {
    std::vector<TokenId> history;
    for (int32_t t = 0; t < max_len; ++t) {
      Context ctx = make_context(vocab, prompt, history);
      std::vector<double> p = student.next_dist(ctx);
      std::vector<double> q = teacher.next_dist(ctx);
      kl_sum += reverse_kl(p, q);
      TokenId s = student.greedy_token(ctx);
      if (s == teacher.greedy_token(ctx)) ++agreements;
      ++visits;
      history.push_back(s);
    }
  }
  EvalResult out;
  out.mean_reverse_kl = kl_sum / static_cast<double>(visits);
  out.greedy_agreement =
      static_cast<double>(agreements) / static_cast<double>(visits);
  return out;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  VocabSpec vocab{cfg.vocab_size, cfg.context_order};
  InitOptions init;
  init.mode = cfg.init_mode;
  init.teacher_file = cfg.teacher_file;
  init.student_file = cfg.student_file;
  PolicyPair pair =
      init_policies(vocab, cfg.seed, init, cfg.rollout_temperature);

  std::vector<MetricsRecord> metrics;
  metrics.reserve(cfg.steps + 1);
  std::vector<TokenRecord> all_records;
  if (cfg.keep_records)
    all_records.reserve(static_cast<size_t>(cfg.steps) * cfg.batch_size *
                        cfg.max_len);

  // Row 0: where the student starts, before any update.
  auto t0 = std::chrono::steady_clock::now();
  EvalResult ev =
      evaluate(pair.student, pair.teacher, cfg.prompt_count, cfg.max_len);
  MetricsRecord first;
  first.step = 0;
  first.eval_reverse_kl = ev.mean_reverse_kl;
  first.greedy_agreement = ev.greedy_agreement;
  first.wall_clock_ms = ms_since(t0);
  metrics.push_back(first);

  OptimizerState opt;
  opt.kind = cfg.optimizer;
  int64_t token_counter = 0;  // global visit index, drives the context sink

  for (int32_t step = 1; step <= cfg.steps; ++step) {
    auto step_t0 = std::chrono::steady_clock::now();

    // Sample the batch's prompts for this step, then roll each out on-policy
    // in its own slot stream.
    RandomStream prompt_rng = RandomStream::derive(
        cfg.seed, kPromptTag, static_cast<uint64_t>(step));
    std::vector<int32_t> prompts(cfg.batch_size);
    for (int32_t& p : prompts)
      p = static_cast<int32_t>(prompt_rng.next_below(cfg.prompt_count));
    std::vector<Trajectory> trajectories(cfg.batch_size);
    parallel_for(cfg.batch_size, [&](int64_t slot) {
      RandomStream rng = RandomStream::derive(cfg.seed, kRolloutTag,
                                              static_cast<uint64_t>(step),
                                              static_cast<uint64_t>(slot));
      trajectories[slot] =
          rollout(pair.student, prompts[slot], cfg.max_len, rng);
    });

    // Context sink (k-sweep support): observe distributions at visit time.
    if (cfg.context_sink && cfg.context_sink_stride > 0) {
      for (const Trajectory& traj : trajectories) {
        for (const Context& ctx : traj.contexts) {
          if (token_counter % cfg.context_sink_stride == 0) {
            std::vector<double> p = pair.student.next_dist(ctx);
            std::vector<double> q = pair.teacher.next_dist(ctx);
            cfg.context_sink(p, q);
          }
          ++token_counter;
        }
      }
    }

    // Variance probe on this batch's contexts, before the update touches
    // the policy (so it measures the estimator that produced this step).
    std::optional<double> probe;
    if ((step - 1) % cfg.variance_probe_every == 0)
      probe = variance_probe(cfg.estimator, pair.student, pair.teacher,
                             trajectories, cfg.variance_probe_samples,
                             cfg.seed, step);

    BatchOptions bopts;
    bopts.step = step;
    bopts.diagnostics = true;
    BatchResult batch = batch_gradient(cfg.estimator, pair.student,
                                       pair.teacher, trajectories, bopts);
    check_finite(batch.grad, step);

    double mean_reward = 0.0, mean_advantage = 0.0, mean_kl = 0.0;
    for (const TokenRecord& rec : batch.records) {
      mean_reward += rec.reward;
      mean_advantage += rec.advantage;
      mean_kl += rec.full_kl;
    }
    double inv_n = 1.0 / static_cast<double>(batch.records.size());
    mean_reward *= inv_n;
    mean_advantage *= inv_n;
    mean_kl *= inv_n;

    optimizer_step(opt, pair.student, batch.grad, cfg.learning_rate);

    ev = evaluate(pair.student, pair.teacher, cfg.prompt_count, cfg.max_len);

    MetricsRecord rec;
    rec.step = step;
    rec.grad_l2_norm = batch.grad.l2_norm;
    rec.mean_reward = mean_reward;
    rec.mean_advantage = mean_advantage;
    rec.mean_full_kl = mean_kl;
    rec.eval_reverse_kl = ev.mean_reverse_kl;
    rec.greedy_agreement = ev.greedy_agreement;
    rec.empirical_grad_variance = probe;
    rec.wall_clock_ms = ms_since(step_t0);
    metrics.push_back(rec);

    if (cfg.keep_records)
      all_records.insert(all_records.end(), batch.records.begin(),
                         batch.records.end());
  }

  return TrainResult{std::move(pair.teacher), std::move(pair.student),
                     std::move(metrics), std::move(all_records)};
}

}  // namespace vopd
