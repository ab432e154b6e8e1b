#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tow/lqr.hpp"
#include "tow/train.hpp"

namespace tow {

enum class CheckKind { Gradients, Linearization, Quadraticization, Lqr, ThetaSign };

struct CheckResult {
  std::string name;
  double max_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct CheckReport {
  std::vector<CheckResult> results;
  bool all_pass() const {
    for (const auto& r : results)
      if (!r.pass) return false;
    return true;
  }
};

namespace detail {

inline Eigen::VectorXd central_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).lpNorm<Eigen::Infinity>() /
         (1.0 + want.lpNorm<Eigen::Infinity>());
}

inline void require_small(const ExperimentConfig& cfg) {
  if (param_count(cfg.problem.model) > 50)
    throw ConfigError("check: model too large, needs parameter count <= 50 "
                      "(use a dedicated small config)");
}

// Random regression tasks for the internally built linear test problems.
inline Task synth_task(SeedStream& stream, int in_dim, int out_dim, int m_s,
                       int m_q) {
  Task task;
  task.support.inputs = stream.normal_matrix(m_s, in_dim);
  task.support.targets = stream.normal_matrix(m_s, out_dim);
  task.query.inputs = stream.normal_matrix(m_q, in_dim);
  task.query.targets = stream.normal_matrix(m_q, out_dim);
  return task;
}

}  // namespace detail

// Meta-gradient against central finite differences of the task validation
// loss. Runs with Full order (the order that is the exact derivative).
inline void check_gradients(const ExperimentConfig& cfg, CheckReport& report) {
  detail::require_small(cfg);
  MetaProblem p = cfg.problem;
  p.order = GradOrder::Full;
  SeedStream stream = SeedStream(cfg.seed).substream("check-grad");
  double worst = 0.0;
  for (int rep = 0; rep < 3; ++rep) {
    const Eigen::VectorXd x = init_params(p.model, stream);
    const Task task = sample_task(cfg.env, stream);
    const Eigen::VectorXd g = task_meta_grad(p, x, task);
    const Eigen::VectorXd fd = detail::central_grad(
        [&](const Eigen::VectorXd& z) { return task_validation_loss(p, z, task); },
        x);
    worst = std::max(worst, detail::rel_err(g, fd));
  }
  report.results.push_back({"gradients: meta-gradient vs central differences",
                            worst, 1e-4, worst < 1e-4});
}

// F_u columns against central differences of the actual one-step dynamics,
// with the optimizer state warmed up so Adam moments are nontrivial; plus a
// Taylor-remainder ratio for dense F_x on an internally built linear + MSE
// problem where the curvature is exact.
inline void check_linearization(const ExperimentConfig& cfg, CheckReport& report) {
  detail::require_small(cfg);
  SeedStream stream = SeedStream(cfg.seed).substream("check-lin");
  const MetaProblem& p = cfg.problem;
  const int dim = param_count(p.model);
  Eigen::VectorXd x = init_params(p.model, stream);
  OptimizerDynamics dyn = cfg.dyn_kind == DynKind::Sgd
                              ? make_sgd(cfg.alpha)
                              : make_adam(cfg.alpha, dim, cfg.adam);
  const Eigen::VectorXd u_hat = uniform_weights(cfg.batch_size);
  for (int warm = 0; warm < 3; ++warm)
    x = dyn_step(p, dyn, x, u_hat,
                 sample_task_batch(cfg.env, stream, cfg.batch_size));
  const TaskBatch batch = sample_task_batch(cfg.env, stream, cfg.batch_size);
  const LinearizedDynamics lin =
      linearize(p, dyn, x, u_hat, batch, CurvatureMode::Diag);
  double worst = 0.0;
  for (int k = 0; k < cfg.batch_size; ++k) {
    const double h = 1e-6;
    Eigen::VectorXd up = u_hat, um = u_hat;
    up[k] += h;
    um[k] -= h;
    OptimizerDynamics d1 = dyn, d2 = dyn;
    const Eigen::VectorXd fd =
        (dyn_step(p, d1, x, up, batch) - dyn_step(p, d2, x, um, batch)) /
        (2.0 * h);
    worst = std::max(worst, detail::rel_err(lin.fu.col(k), fd));
  }
  report.results.push_back({"linearization: F_u columns vs central differences",
                            worst, 1e-4, worst < 1e-4});

  // Dense F_x on linear + MSE problems, where the curvature surrogate is the
  // true Hessian. Under SGD the step map is affine in x, so the first-order
  // model must be exact to rounding; under Adam the moment normalization
  // curves the map and halving the perturbation must shrink the remainder at
  // least 3.5x.
  MetaProblem lp;
  lp.model.arch = Architecture::Linear;
  lp.model.layers = {3, 2};
  lp.model.loss = LossKind::Mse;
  lp.inner.gamma = 0.05;
  lp.inner.steps = 1;
  lp.order = GradOrder::Full;
  TaskBatch synth;
  for (int i = 0; i < 2; ++i) synth.push_back(detail::synth_task(stream, 3, 2, 6, 8));
  const Eigen::VectorXd u0 = uniform_weights(2);
  const int lp_dim = param_count(lp.model);
  Eigen::VectorXd x0 = init_params(lp.model, stream);
  const Eigen::VectorXd dx = stream.normal_vector(lp_dim);
  const auto remainder = [&](const OptimizerDynamics& dyn0, double scale) {
    OptimizerDynamics d = dyn0, d0 = dyn0;
    const LinearizedDynamics full =
        linearize(lp, dyn0, x0, u0, synth, CurvatureMode::Full);
    return (dyn_step(lp, d, x0 + scale * dx, u0, synth) -
            dyn_step(lp, d0, x0, u0, synth) - scale * (full.fx_full * dx))
        .norm();
  };
  const OptimizerDynamics sgd = make_sgd(0.05);
  const double affine_err = remainder(sgd, 0.5);
  report.results.push_back({"linearization: F_x exact on affine dynamics",
                            affine_err, 1e-10, affine_err < 1e-10});
  OptimizerDynamics adam = make_adam(0.05, lp_dim);
  for (int warm = 0; warm < 3; ++warm) x0 = dyn_step(lp, adam, x0, u0, synth);
  const double r1 = remainder(adam, 0.02), r2 = remainder(adam, 0.01);
  const double ratio = r2 > 0.0 ? r1 / r2 : 4.0;
  report.results.push_back({"linearization: F_x Taylor remainder ratio (want >= 3.5)",
                            ratio, 3.5, ratio >= 3.5});
}

// c_x against central differences of the summed task losses; c_u against the
// closed-form prior gradient; C_uu against beta_u I.
inline void check_quadraticization(const ExperimentConfig& cfg,
                                   CheckReport& report) {
  detail::require_small(cfg);
  SeedStream stream = SeedStream(cfg.seed).substream("check-quad");
  const MetaProblem& p = cfg.problem;
  const Eigen::VectorXd x = init_params(p.model, stream);
  const TaskBatch batch = sample_task_batch(cfg.env, stream, cfg.batch_size);
  Eigen::VectorXd u_hat = uniform_weights(cfg.batch_size);
  u_hat[0] += 0.1;  // off the prior mean so c_u is nonzero
  const QuadraticCost q =
      quadraticize(p, x, u_hat, batch, cfg.prior, CurvatureMode::Diag);
  const Eigen::VectorXd fd = detail::central_grad(
      [&](const Eigen::VectorXd& z) {
        return validation_loss_vector(p, z, batch).sum();
      },
      x);
  const double err_cx = detail::rel_err(q.cx, fd);
  report.results.push_back({"quadraticization: c_x vs central differences", err_cx,
                            1e-4, err_cx < 1e-4});
  const Eigen::VectorXd cu_want =
      cfg.prior.beta_u *
      (u_hat - Eigen::VectorXd::Constant(cfg.batch_size, cfg.prior.mu_u));
  const double err_cu =
      (q.cu - cu_want).lpNorm<Eigen::Infinity>() +
      (q.cuu - cfg.prior.beta_u *
                   Eigen::MatrixXd::Identity(cfg.batch_size, cfg.batch_size))
          .lpNorm<Eigen::Infinity>();
  report.results.push_back(
      {"quadraticization: c_u and C_uu closed forms", err_cu, 1e-12, err_cu < 1e-12});
}

// The hand scalar problem (two steps embed a terminal cost: first action
// must be -1/2) and solver-vs-oracle agreement on a random LQ problem.
inline void check_lqr(const ExperimentConfig& cfg, CheckReport& report) {
  LqProblem scalar;
  const auto one = Eigen::MatrixXd::Identity(1, 1);
  scalar.A = {one, one};
  scalar.B = {one, one};
  scalar.P = {0.0 * one, one};
  scalar.R = {one, one};
  scalar.p = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  scalar.r = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  scalar.x1 = Eigen::VectorXd::Ones(1);
  const double err_scalar = std::abs(lqr_oracle(scalar).actions[0][0] + 0.5);
  report.results.push_back({"lqr: scalar problem first action = -1/2", err_scalar,
                            1e-8, err_scalar < 1e-8});

  // Random problem, rejection-sampled so the oracle optimum is elementwise
  // nonnegative; the solver's acceptance rule demands u >= 0, and disabling
  // it would test a different algorithm. Negative linear action cost pulls
  // the optimum positive, so acceptable draws are common.
  SeedStream stream = SeedStream(cfg.seed).substream("check-lqr");
  const int dim = 4, act = 2, horizon = 5;
  for (int attempt = 0; attempt < 300; ++attempt) {
    LqProblem lq;
    for (int t = 0; t < horizon; ++t) {
      lq.A.push_back(stream.normal_matrix(dim, dim) * 0.4);
      lq.B.push_back(stream.normal_matrix(dim, act));
      const Eigen::MatrixXd sp = stream.normal_matrix(dim, dim) * 0.5;
      lq.P.push_back(sp.transpose() * sp +
                     0.1 * Eigen::MatrixXd::Identity(dim, dim));
      const Eigen::MatrixXd sr = stream.normal_matrix(act, act) * 0.5;
      lq.R.push_back(sr.transpose() * sr + Eigen::MatrixXd::Identity(act, act));
      lq.p.push_back(stream.normal_vector(dim) * 0.1);
      lq.r.push_back(-stream.uniform_vector(act, 0.2, 1.0));
    }
    lq.x1 = stream.normal_vector(dim) * 0.3;
    const LqSolution sol = lqr_oracle(lq);
    bool nonneg = true;
    for (const auto& u : sol.actions) nonneg = nonneg && (u.array() >= 0.0).all();
    if (!nonneg) continue;
    IlqrConfig icfg;
    icfg.n_ilqr = 1;
    icfg.full_v = true;
    LqSystem sys(lq,
                 std::vector<Eigen::VectorXd>(horizon, Eigen::VectorXd::Zero(act)));
    const IlqrResult res = ilqr_solve(sys, icfg);
    double err_solver = 0.0;
    for (int t = 0; t < horizon; ++t)
      err_solver = std::max(err_solver,
                            (res.trajectory.actions[t] - sol.actions[t])
                                .lpNorm<Eigen::Infinity>());
    report.results.push_back({"lqr: solver reaches the oracle optimum", err_solver,
                              1e-8, err_solver < 1e-8});
    return;
  }
  report.results.push_back(
      {"lqr: no nonnegative-optimum problem drawn", 0.0, 0.0, false});
}

// theta1 must be strictly negative on any non-stationary nominal.
inline void check_theta_sign(const ExperimentConfig& cfg, CheckReport& report) {
  detail::require_small(cfg);
  SeedStream stream = SeedStream(cfg.seed).substream("check-theta");
  const int dim = param_count(cfg.problem.model);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Eigen::VectorXd x = init_params(cfg.problem.model, stream);
    std::vector<TaskBatch> batches;
    for (int t = 0; t < cfg.horizon; ++t)
      batches.push_back(sample_task_batch(cfg.env, stream, cfg.batch_size));
    OptimizerDynamics dyn = cfg.dyn_kind == DynKind::Sgd
                                ? make_sgd(cfg.alpha)
                                : make_adam(cfg.alpha, dim, cfg.adam);
    MetaWeightingSystem sys(cfg.problem, dyn, x, batches, cfg.prior,
                            cfg.curvature,
                            uniform_actions(cfg.horizon, cfg.batch_size));
    const auto back = ilqr_backward(sys.expand(sys.initial_rollout()), cfg.ilqr);
    if (back.max_qu_norm <= 1e-8) continue;  // stationary nominal: resample
    report.results.push_back({"theta sign: theta1 < 0 off stationarity",
                              back.theta1, 0.0, back.theta1 < 0.0});
    return;
  }
  report.results.push_back(
      {"theta sign: no non-stationary nominal found", 0.0, 0.0, false});
}

inline CheckReport run_checks(const ExperimentConfig& cfg,
                              const std::vector<CheckKind>& kinds) {
  CheckReport report;
  for (const CheckKind kind : kinds) switch (kind) {
      case CheckKind::Gradients: check_gradients(cfg, report); break;
      case CheckKind::Linearization: check_linearization(cfg, report); break;
      case CheckKind::Quadraticization: check_quadraticization(cfg, report); break;
      case CheckKind::Lqr: check_lqr(cfg, report); break;
      case CheckKind::ThetaSign: check_theta_sign(cfg, report); break;
    }
  return report;
}

}  // namespace tow
