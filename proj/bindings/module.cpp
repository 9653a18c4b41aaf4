// Python bindings: the lab's core operations for notebook-scale poking.
// Distributions cross the boundary as plain lists of floats; configs as
// keyword arguments mirroring the config-file keys.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>

#include "vopd/divergence.hpp"
#include "vopd/estimators.hpp"
#include "vopd/experiment.hpp"
#include "vopd/oracle.hpp"
#include "vopd/trainer.hpp"
#include "vopd/verify.hpp"

namespace py = pybind11;
using namespace vopd;

namespace {

EstimatorSpec make_spec(const std::string& kind, int32_t k) {
  auto parsed = estimator_kind_from_string(kind);
  if (!parsed)
    throw std::invalid_argument("unknown estimator kind: " + kind);
  return EstimatorSpec{*parsed, k};
}

py::dict record_to_dict(const TokenRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["reward"] = r.reward;
  d["baseline"] = r.baseline;
  d["advantage"] = r.advantage;
  d["full_kl"] = r.full_kl;
  d["student_logprob"] = r.student_logprob;
  d["teacher_logprob"] = r.teacher_logprob;
  return d;
}

py::dict metrics_to_dict(const MetricsRecord& m) {
  py::dict d;
  d["step"] = m.step;
  d["grad_l2_norm"] = m.grad_l2_norm;
  d["mean_reward"] = m.mean_reward;
  d["mean_advantage"] = m.mean_advantage;
  d["mean_full_kl"] = m.mean_full_kl;
  d["eval_reverse_kl"] = m.eval_reverse_kl;
  d["greedy_agreement"] = m.greedy_agreement;
  if (m.empirical_grad_variance)
    d["empirical_grad_variance"] = *m.empirical_grad_variance;
  else
    d["empirical_grad_variance"] = py::none();
  d["wall_clock_ms"] = m.wall_clock_ms;
  return d;
}

TrainConfig config_from_kwargs(int32_t vocab_size, int32_t context_order,
                               int32_t prompt_count, int32_t max_len,
                               int32_t batch_size, int32_t steps,
                               double learning_rate,
                               const std::string& optimizer,
                               const std::string& estimator, int32_t k,
                               double rollout_temperature, uint64_t seed,
                               int32_t variance_probe_every,
                               int32_t variance_probe_samples,
                               const std::string& init_mode,
                               bool keep_records) {
  TrainConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.context_order = context_order;
  cfg.prompt_count = prompt_count;
  cfg.max_len = max_len;
  cfg.batch_size = batch_size;
  cfg.steps = steps;
  cfg.learning_rate = learning_rate;
  auto opt = optimizer_kind_from_string(optimizer);
  if (!opt) throw std::invalid_argument("unknown optimizer: " + optimizer);
  cfg.optimizer = *opt;
  cfg.estimator = make_spec(estimator, k);
  cfg.rollout_temperature = rollout_temperature;
  cfg.seed = seed;
  cfg.variance_probe_every = variance_probe_every;
  cfg.variance_probe_samples = variance_probe_samples;
  if (init_mode == "mismatch") cfg.init_mode = InitMode::mismatch;
  else if (init_mode == "identical") cfg.init_mode = InitMode::identical;
  else throw std::invalid_argument("init_mode must be mismatch or identical");
  cfg.keep_records = keep_records;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(vopdlab, m) {
  m.doc() = "Tabular laboratory for on-policy distillation gradient "
            "estimators";

  m.def("reverse_kl",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          return reverse_kl(p, q);
        },
        py::arg("p"), py::arg("q"));
  m.def("token_reward",
        [](const std::vector<double>& p, const std::vector<double>& q,
           int32_t tok) { return token_reward(p, q, tok); },
        py::arg("p"), py::arg("q"), py::arg("token"));
  m.def("top_k_support",
        [](const std::vector<double>& p, int32_t k) {
          return top_k_support(p, k).indices;
        },
        py::arg("p"), py::arg("k"));
  m.def("truncated_reverse_kl",
        [](const std::vector<double>& p, const std::vector<double>& q,
           int32_t k) {
          TruncatedSupport s = top_k_support(p, k);
          return truncated_reverse_kl(p, q, s);
        },
        py::arg("p"), py::arg("q"), py::arg("k"));
  m.def("value_baseline",
        [](const std::vector<double>& p, const std::vector<double>& q,
           const std::string& mode, int32_t k) {
          if (mode == "full_vocab")
            return value_baseline(p, q, BaselineMode::full_vocab());
          if (mode == "top_k")
            return value_baseline(p, q, BaselineMode::top_k(k));
          throw std::invalid_argument("mode must be full_vocab or top_k");
        },
        py::arg("p"), py::arg("q"), py::arg("mode") = "full_vocab",
        py::arg("k") = 20);

  m.def("per_token_contribution",
        [](const std::string& kind, const std::vector<double>& p,
           const std::vector<double>& q, int32_t sampled, int32_t k,
           double temperature) {
          ContributionOptions opts;
          opts.temperature = temperature;
          TokenContribution c =
              per_token_contribution(make_spec(kind, k), p, q, sampled, opts);
          py::dict out;
          out["row"] = c.row;
          out["record"] = record_to_dict(c.record);
          return out;
        },
        py::arg("kind"), py::arg("p"), py::arg("q"), py::arg("sampled"),
        py::arg("k") = 20, py::arg("temperature") = 1.0);

  m.def("exact_expected_gradient",
        [](const std::string& kind, const std::vector<double>& p,
           const std::vector<double>& q, int32_t k) {
          return oracle::exact_expected_gradient(make_spec(kind, k), p, q);
        },
        py::arg("kind"), py::arg("p"), py::arg("q"), py::arg("k") = 20);
  m.def("exact_variance_trace",
        [](const std::string& kind, const std::vector<double>& p,
           const std::vector<double>& q, int32_t k) {
          return oracle::exact_variance_trace(make_spec(kind, k), p, q);
        },
        py::arg("kind"), py::arg("p"), py::arg("q"), py::arg("k") = 20);
  m.def("variance_gap_exact",
        [](const std::vector<double>& p, const std::vector<double>& q,
           double b) { return oracle::variance_gap_exact(p, q, b); },
        py::arg("p"), py::arg("q"), py::arg("baseline"));
  m.def("variance_gap_predicted",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          return oracle::variance_gap_predicted(p, q);
        },
        py::arg("p"), py::arg("q"));
  m.def("optimal_baseline",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          return oracle::optimal_baseline(p, q);
        },
        py::arg("p"), py::arg("q"));
  m.def("topk_bias",
        [](const std::vector<double>& p, const std::vector<double>& q,
           int32_t k) { return oracle::topk_bias(p, q, k); },
        py::arg("p"), py::arg("q"), py::arg("k"));
  m.def("score_identity_residual",
        [](const std::vector<double>& p) {
          return oracle::score_identity_residual(p);
        },
        py::arg("p"));
  m.def("baseline_cancellation_residual",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          return oracle::baseline_cancellation_residual(p, q);
        },
        py::arg("p"), py::arg("q"));

  m.def("run_training",
        [](int32_t vocab_size, int32_t context_order, int32_t prompt_count,
           int32_t max_len, int32_t batch_size, int32_t steps,
           double learning_rate, const std::string& optimizer,
           const std::string& estimator, int32_t k,
           double rollout_temperature, uint64_t seed,
           int32_t variance_probe_every, int32_t variance_probe_samples,
           const std::string& init_mode, bool keep_records,
           int64_t record_limit) {
          TrainConfig cfg = config_from_kwargs(
              vocab_size, context_order, prompt_count, max_len, batch_size,
              steps, learning_rate, optimizer, estimator, k,
              rollout_temperature, seed, variance_probe_every,
              variance_probe_samples, init_mode, keep_records);
          TrainResult result = train(cfg);
          py::list metrics;
          for (const MetricsRecord& mrec : result.metrics)
            metrics.append(metrics_to_dict(mrec));
          py::list records;
          int64_t limit = record_limit < 0
                              ? static_cast<int64_t>(result.records.size())
                              : record_limit;
          for (int64_t i = 0;
               i < limit && i < static_cast<int64_t>(result.records.size());
               ++i)
            records.append(record_to_dict(result.records[i]));
          py::dict out;
          out["metrics"] = metrics;
          out["records"] = records;
          out["total_records"] = result.records.size();
          return out;
        },
        py::arg("vocab_size") = 64, py::arg("context_order") = 1,
        py::arg("prompt_count") = 32, py::arg("max_len") = 16,
        py::arg("batch_size") = 64, py::arg("steps") = 2000,
        py::arg("learning_rate") = 128.0, py::arg("optimizer") = "sgd",
        py::arg("estimator") = "opd", py::arg("k") = 20,
        py::arg("rollout_temperature") = 1.0, py::arg("seed") = 0,
        py::arg("variance_probe_every") = 50,
        py::arg("variance_probe_samples") = 256,
        py::arg("init_mode") = "mismatch", py::arg("keep_records") = true,
        py::arg("record_limit") = -1);

  m.def("run_identity_suite",
        [](uint64_t seed) {
          verify::Options opts;
          opts.seed = seed;
          std::vector<verify::CheckResult> results =
              verify::run_identity_suite(opts);
          py::list out;
          for (const verify::CheckResult& r : results) {
            py::dict d;
            d["name"] = r.name;
            d["pass"] = r.pass;
            d["observed"] = r.observed;
            d["threshold"] = r.threshold;
            d["note"] = r.note;
            out.append(d);
          }
          return out;
        },
        py::arg("seed") = 0);
}
