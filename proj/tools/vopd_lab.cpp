// vopd-lab: command-line front end for the distillation estimator lab.
//
// Exit codes: 0 success, 1 runtime failure or failed verification,
// 2 usage/config error.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vopd/experiment.hpp"

namespace {

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vopd-lab: on-policy distillation gradient estimator lab"};
  app.require_subcommand(1);

  std::string train_config;
  CLI::App* train = app.add_subcommand(
      "train", "Run one training experiment from a config file");
  train->add_option("config", train_config, "experiment config file")
      ->required();

  vopd::VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand(
      "verify", "Run the estimator identity suite (exit 1 on any failure)");
  verify->add_option("--seed", verify_args.seed,
                     "seed for the randomized instance sweeps");
  verify->add_option("--json", verify_args.json_path,
                     "also write a JSON summary to this path");
  verify
      ->add_flag("--corrupt-detach", verify_args.corrupt_detach,
                 "negative control: re-attach the baseline gradient pathway")
      ->group("");  // hidden from normal help

  std::string sweep_config;
  CLI::App* sweep = app.add_subcommand(
      "sweep-k", "Truncation sweep: error and training quality vs k");
  sweep->add_option("config", sweep_config, "experiment config file")
      ->required();

  std::string bench_config;
  CLI::App* bench = app.add_subcommand(
      "bench", "Time every estimator across vocabulary sizes");
  bench->add_option("config", bench_config, "experiment config file")
      ->required();

  std::string plot_data, plot_kind, plot_out;
  CLI::App* plot =
      app.add_subcommand("plot", "Render a chart from a data artifact");
  plot->add_option("data", plot_data, "input artifact (jsonl or csv)")
      ->required();
  plot->add_option("kind", plot_kind,
                   "reward_advantage_hist | reward_advantage_scatter | "
                   "mse_vs_k | grad_norm_curve | step_time_bars | "
                   "logprob_scatter")
      ->required();
  plot->add_option("out", plot_out, "output svg path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (train->parsed())
    return guarded([&] { return vopd::cmd_train(train_config, std::cout); });
  if (verify->parsed())
    return guarded([&] { return vopd::cmd_verify(verify_args, std::cout); });
  if (sweep->parsed())
    return guarded([&] { return vopd::cmd_sweep_k(sweep_config, std::cout); });
  if (bench->parsed())
    return guarded([&] { return vopd::cmd_bench(bench_config, std::cout); });
  if (plot->parsed())
    return guarded(
        [&] { return vopd::cmd_plot(plot_data, plot_kind, plot_out, std::cout); });
  return 2;
}
