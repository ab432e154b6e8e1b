#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tow/config.hpp"

namespace tow {

struct EvalResult {
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;  // NaN for regression losses
  double ci_loss = 0.0;        // 95% half-widths (1.96 standard errors)
  double ci_accuracy = 0.0;
};

// Adapts on each sampled task's support set and scores its query set.
inline EvalResult evaluate(const MetaProblem& p, const Eigen::VectorXd& x,
                           const TaskEnvironment& env, int n_tasks,
                           SeedStream& stream) {
  if (n_tasks < 2) throw ArgumentError("evaluate: need at least two tasks");
  Eigen::VectorXd losses(n_tasks), accs(n_tasks);
  for (int i = 0; i < n_tasks; ++i) {
    const Task task = sample_task(env, stream);
    losses[i] = task_validation_loss(p, x, task);
    accs[i] = task_query_accuracy(p, x, task);
  }
  const auto half_width = [n_tasks](const Eigen::VectorXd& v, double mean) {
    const double var = (v.array() - mean).square().sum() / (n_tasks - 1);
    return 1.96 * std::sqrt(var / n_tasks);
  };
  EvalResult ev;
  ev.mean_loss = losses.mean();
  ev.mean_accuracy = accs.mean();
  ev.ci_loss = half_width(losses, ev.mean_loss);
  ev.ci_accuracy = half_width(accs, ev.mean_accuracy);
  return ev;
}

struct IterationRecord {
  int iteration = 0;  // 1-based
  std::vector<Eigen::VectorXd> weights;
  bool evaluated = false;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  // Solver diagnostics; NaN / 0 for strategies that do not run the solver.
  double theta1 = std::numeric_limits<double>::quiet_NaN();
  double eps_accepted = std::numeric_limits<double>::quiet_NaN();
  int ls_trials = 0;
  double delta_emp = std::numeric_limits<double>::quiet_NaN();
  double max_qu_norm = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  std::vector<IlqrIterDiag> ilqr_iters;  // every inner solver iteration
};

struct TrainLog {
  std::vector<IterationRecord> records;
  Eigen::VectorXd final_params;
  bool aborted = false;
  std::string abort_message;
};

namespace detail {

inline TaskEnvironment eval_environment(const ExperimentConfig& cfg) {
  TaskEnvironment env = cfg.env;
  const int n_fam = family_count(env);
  env.family_probs = cfg.eval_family_probs.size()
                         ? cfg.eval_family_probs
                         : Eigen::VectorXd::Constant(n_fam, 1.0 / n_fam);
  return env;
}

}  // namespace detail

// Outer training loop. Every iteration samples horizon-many task batches,
// computes weights by the configured strategy, and advances the
// meta-parameters through the optimizer dynamics. Fully deterministic given
// the seed: parameter init, task sampling, and per-evaluation streams are
// separate named substreams, so strategies consume identical draws.
inline TrainLog train(const ExperimentConfig& cfg) {
  validate(cfg);
  SeedStream master(cfg.seed);
  SeedStream init_stream = master.substream("init");
  SeedStream task_stream = master.substream("tasks");
  SeedStream eval_base = master.substream("eval");
  SeedStream nominal_stream = master.substream("nominal");
  const TaskEnvironment eval_env = detail::eval_environment(cfg);

  TrainLog log;
  Eigen::VectorXd x = init_params(cfg.problem.model, init_stream);
  const int dim = param_count(cfg.problem.model);
  OptimizerDynamics dyn = cfg.dyn_kind == DynKind::Sgd
                              ? make_sgd(cfg.alpha)
                              : make_adam(cfg.alpha, dim, cfg.adam);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto started = std::chrono::steady_clock::now();
    IterationRecord rec;
    rec.iteration = it;
    try {
      std::vector<TaskBatch> batches;
      batches.reserve(cfg.horizon);
      for (int t = 0; t < cfg.horizon; ++t)
        batches.push_back(sample_task_batch(cfg.env, task_stream, cfg.batch_size));

      if (cfg.strategy == StrategyKind::Tow) {
        std::vector<Eigen::VectorXd> init_actions;
        if (cfg.random_nominal)
          for (int t = 0; t < cfg.horizon; ++t)
            init_actions.push_back(nominal_stream.uniform_vector(
                cfg.batch_size, 0.0, 2.0 / cfg.batch_size));
        TowResult tr = tow_weights(cfg.problem, dyn, x, batches, cfg.prior,
                                   cfg.ilqr, cfg.curvature, init_actions);
        rec.weights = tr.weights;
        rec.delta_emp = tr.delta_emp;
        rec.ilqr_iters = tr.iters;
        rec.theta1 = tr.iters[0].theta1;
        rec.eps_accepted = tr.iters[0].eps_accepted;
        rec.max_qu_norm = 0.0;
        for (const auto& d : tr.iters) {
          rec.ls_trials += d.ls_trials;
          rec.max_qu_norm = std::max(rec.max_qu_norm, d.max_qu_norm);
        }
        // The accepted trajectory is applied wholesale: state and optimizer
        // moments both advance to the configured horizon point.
        const int idx = cfg.meta_update_last ? cfg.horizon - 1 : cfg.horizon;
        x = tr.trajectory.states[idx];
        dyn = tr.trajectory.opt_states[idx];
      } else {
        WeightingStrategy strat{cfg.strategy, cfg.kappa};
        rec.delta_emp = 0.0;
        for (int t = 0; t < cfg.horizon; ++t) {
          const BatchEval be = batch_eval(cfg.problem, x, batches[t]);
          const Eigen::VectorXd u = batch_weights(strat, be.ell);
          rec.weights.push_back(u);
          rec.delta_emp = std::max(
              rec.delta_emp,
              (u - uniform_weights(cfg.batch_size)).lpNorm<Eigen::Infinity>());
          x = apply_update(dyn, x, be.jac.transpose() * u);
        }
      }

      if (it % cfg.eval_every == 0) {
        SeedStream eval_stream =
            eval_base.substream(static_cast<std::uint64_t>(it));
        const EvalResult ev =
            evaluate(cfg.problem, x, eval_env, cfg.eval_tasks, eval_stream);
        rec.evaluated = true;
        rec.val_loss = ev.mean_loss;
        rec.val_accuracy = ev.mean_accuracy;
      }
    } catch (const NumericError& err) {
      log.aborted = true;
      log.abort_message = err.what();
      break;
    }
    rec.wall_ms =
        cfg.deterministic_timing
            ? 0.0
            : std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - started)
                  .count();
    log.records.push_back(std::move(rec));
  }
  log.final_params = x;
  return log;
}

namespace detail {

inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

// One row per (iteration, step, task). Iteration-level fields repeat on each
// of the iteration's rows; theta1 and epsilon_accepted report the solver's
// first inner iteration, ls_trials the sum over inner iterations. All floats
// carry 17 significant digits so reloading is bit-faithful.
inline void emit_metrics(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("emit_metrics: cannot open for writing: " + path);
  out << "iteration,step,task_index,weight,val_loss,val_accuracy,theta1,"
         "epsilon_accepted,ls_trials,delta_emp,wall_ms\n";
  for (const auto& rec : log.records)
    for (std::size_t t = 0; t < rec.weights.size(); ++t)
      for (Eigen::Index i = 0; i < rec.weights[t].size(); ++i)
        out << rec.iteration << ',' << t << ',' << i << ','
            << detail::fmt17(rec.weights[t][i]) << ','
            << detail::fmt17(rec.val_loss) << ','
            << detail::fmt17(rec.val_accuracy) << ','
            << detail::fmt17(rec.theta1) << ','
            << detail::fmt17(rec.eps_accepted) << ',' << rec.ls_trials << ','
            << detail::fmt17(rec.delta_emp) << ','
            << detail::fmt17(rec.wall_ms) << '\n';
  if (!out) throw ConfigError("emit_metrics: write failed: " + path);
}

struct MetricsRow {
  int iteration = 0, step = 0, task_index = 0;
  double weight = 0, val_loss = 0, val_accuracy = 0, theta1 = 0,
         epsilon_accepted = 0;
  int ls_trials = 0;
  double delta_emp = 0, wall_ms = 0;
};

inline std::vector<MetricsRow> parse_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("parse_metrics: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("parse_metrics: missing header: " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string item;
    std::istringstream ls(line);
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() != 11)
      throw ConfigError("parse_metrics: bad row in " + path + ": " + line);
    MetricsRow r;
    r.iteration = std::stoi(f[0]);
    r.step = std::stoi(f[1]);
    r.task_index = std::stoi(f[2]);
    r.weight = std::stod(f[3]);
    r.val_loss = std::stod(f[4]);
    r.val_accuracy = std::stod(f[5]);
    r.theta1 = std::stod(f[6]);
    r.epsilon_accepted = std::stod(f[7]);
    r.ls_trials = std::stoi(f[8]);
    r.delta_emp = std::stod(f[9]);
    r.wall_ms = std::stod(f[10]);
    rows.push_back(r);
  }
  return rows;
}

// Plot-ready evaluation curve. The exponential moving average (factor 0.1)
// exists only here; stored metrics stay raw.
inline void emit_curve(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("emit_curve: cannot open for writing: " + path);
  out << "iteration,val_loss,val_loss_ema,val_accuracy,val_accuracy_ema\n";
  double ema_loss = 0, ema_acc = 0;
  bool first = true;
  for (const auto& rec : log.records) {
    if (!rec.evaluated) continue;
    if (first) {
      ema_loss = rec.val_loss;
      ema_acc = rec.val_accuracy;
      first = false;
    } else {
      ema_loss = 0.1 * rec.val_loss + 0.9 * ema_loss;
      ema_acc = 0.1 * rec.val_accuracy + 0.9 * ema_acc;
    }
    out << rec.iteration << ',' << detail::fmt17(rec.val_loss) << ','
        << detail::fmt17(ema_loss) << ',' << detail::fmt17(rec.val_accuracy)
        << ',' << detail::fmt17(ema_acc) << '\n';
  }
}

inline void save_params(const Eigen::VectorXd& x, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_params: cannot open for writing: " + path);
  out << x.size() << '\n';
  for (Eigen::Index i = 0; i < x.size(); ++i) out << detail::fmt17(x[i]) << '\n';
  if (!out) throw ConfigError("save_params: write failed: " + path);
}

inline Eigen::VectorXd load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_params: cannot open: " + path);
  Eigen::Index n = 0;
  if (!(in >> n) || n < 0) throw ConfigError("load_params: bad header: " + path);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(in >> x[i])) throw ConfigError("load_params: truncated file: " + path);
  return x;
}

}  // namespace tow
