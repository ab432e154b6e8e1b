#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tow/checks.hpp"

namespace tow {

namespace detail {

inline std::string sanitize_token(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

inline void print_eval_line(const std::string& label, const EvalResult& ev,
                            int n_tasks) {
  std::printf("%s: loss %.6f +/- %.6f, accuracy %.4f +/- %.4f (%d tasks)\n",
              label.c_str(), ev.mean_loss, ev.ci_loss, ev.mean_accuracy,
              ev.ci_accuracy, n_tasks);
}

inline int run_training(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const TrainLog log = train(cfg);
  emit_metrics(log, out_dir + "/metrics.csv");
  emit_curve(log, out_dir + "/curve.csv");
  save_params(log.final_params, out_dir + "/params.txt");
  for (const auto& rec : log.records)
    if (rec.evaluated)
      std::printf("iter %d: val_loss %.6f val_accuracy %.4f\n", rec.iteration,
                  rec.val_loss, rec.val_accuracy);
  if (log.aborted) {
    std::fprintf(stderr, "aborted: %s (partial metrics written to %s)\n",
                 log.abort_message.c_str(), out_dir.c_str());
    return 2;
  }
  std::printf("done: %d iterations, outputs in %s\n",
              static_cast<int>(log.records.size()), out_dir.c_str());
  return 0;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"task weighting for meta-learning via trajectory optimization"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", strategy_name, what = "all",
              params_path;
  std::int64_t seed_flag = -1;
  std::vector<std::string> overrides;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file path")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_flag, "override experiment.seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--strategy", strategy_name,
                    "override experiment.strategy "
                    "(uniform|exploration|exploitation|tow)");
    sub->add_option("--override", overrides,
                    "config override section.key=value (repeatable)");
  };

  auto* cmd_train =
      app.add_subcommand("train", "run training, write metrics/curve/params");
  add_common(cmd_train);
  auto* cmd_eval =
      app.add_subcommand("eval", "evaluate on held-out tasks and print a summary");
  add_common(cmd_eval);
  cmd_eval->add_option("--params", params_path,
                       "parameter file to evaluate (default: train first)");
  auto* cmd_check = app.add_subcommand("check", "run numeric diagnostics");
  add_common(cmd_check);
  cmd_check->add_option(
      "--what", what,
      "gradients|linearization|quadraticization|lqr|theta|all");
  auto* cmd_sweep =
      app.add_subcommand("sweep", "train across [sweep] values of one parameter");
  add_common(cmd_sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    ConfigMap kv = parse_config_file(config_path);
    for (const auto& o : overrides) apply_override(kv, o);
    if (seed_flag >= 0) kv["experiment"]["seed"] = std::to_string(seed_flag);
    if (!strategy_name.empty()) kv["experiment"]["strategy"] = strategy_name;
    const ExperimentConfig cfg = build_config(kv);

    if (cmd_train->parsed()) return detail::run_training(cfg, out_dir);

    if (cmd_eval->parsed()) {
      Eigen::VectorXd x;
      if (!params_path.empty()) {
        x = load_params(params_path);
        if (x.size() != param_count(cfg.problem.model))
          throw ConfigError("eval: parameter file does not match the model");
      } else {
        x = train(cfg).final_params;
      }
      SeedStream stream = SeedStream(cfg.seed).substream("eval").substream(0);
      const EvalResult ev = evaluate(cfg.problem, x, detail::eval_environment(cfg),
                                     cfg.eval_tasks, stream);
      detail::print_eval_line("eval", ev, cfg.eval_tasks);
      return 0;
    }

    if (cmd_check->parsed()) {
      std::vector<CheckKind> kinds;
      if (what == "gradients") kinds = {CheckKind::Gradients};
      else if (what == "linearization") kinds = {CheckKind::Linearization};
      else if (what == "quadraticization") kinds = {CheckKind::Quadraticization};
      else if (what == "lqr") kinds = {CheckKind::Lqr};
      else if (what == "theta") kinds = {CheckKind::ThetaSign};
      else if (what == "all")
        kinds = {CheckKind::Gradients, CheckKind::Linearization,
                 CheckKind::Quadraticization, CheckKind::Lqr,
                 CheckKind::ThetaSign};
      else
        throw ConfigError("check: unknown --what " + what);
      const CheckReport report = run_checks(cfg, kinds);
      for (const auto& r : report.results)
        std::printf("%-60s %s (measured %.3e, tol %.3e)\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.max_err, r.tol);
      return report.all_pass() ? 0 : 3;
    }

    // sweep
    if (cfg.sweep_param.empty() || cfg.sweep_values.empty())
      throw ConfigError("sweep: config needs sweep.param and sweep.values");
    std::filesystem::create_directories(out_dir);
    const std::string summary_path = out_dir + "/sweep_summary.csv";
    std::ofstream summary(summary_path);
    if (!summary) throw ConfigError("sweep: cannot write " + summary_path);
    summary << "value,final_val_loss,final_val_accuracy,mean_delta_emp,"
               "max_delta_emp\n";
    for (const double value : cfg.sweep_values) {
      ConfigMap kv_run = kv;
      char vbuf[32];
      std::snprintf(vbuf, sizeof vbuf, "%g", value);
      apply_override(kv_run, cfg.sweep_param + "=" + vbuf);
      const ExperimentConfig run_cfg = build_config(kv_run);
      const TrainLog log = train(run_cfg);
      emit_metrics(log, out_dir + "/metrics_" +
                            detail::sanitize_token(cfg.sweep_param) + "_" + vbuf +
                            ".csv");
      double final_loss = std::numeric_limits<double>::quiet_NaN();
      double final_acc = std::numeric_limits<double>::quiet_NaN();
      double delta_sum = 0.0, delta_max = 0.0;
      int n_delta = 0;
      for (const auto& rec : log.records) {
        if (rec.evaluated) {
          final_loss = rec.val_loss;
          final_acc = rec.val_accuracy;
        }
        if (std::isfinite(rec.delta_emp)) {
          delta_sum += rec.delta_emp;
          delta_max = std::max(delta_max, rec.delta_emp);
          ++n_delta;
        }
      }
      const double delta_mean = n_delta ? delta_sum / n_delta : 0.0;
      summary << vbuf << ',' << detail::fmt17(final_loss) << ','
              << detail::fmt17(final_acc) << ',' << detail::fmt17(delta_mean)
              << ',' << detail::fmt17(delta_max) << '\n';
      std::printf("%s = %s: final_val_loss %.6f, mean delta_emp %.3e, "
                  "max delta_emp %.3e\n",
                  cfg.sweep_param.c_str(), vbuf, final_loss, delta_mean,
                  delta_max);
      if (log.aborted) {
        std::fprintf(stderr, "aborted at %s = %s: %s\n", cfg.sweep_param.c_str(),
                     vbuf, log.abort_message.c_str());
        return 2;
      }
    }
    std::printf("sweep summary written to %s\n", summary_path.c_str());
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace tow
