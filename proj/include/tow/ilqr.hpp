#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tow/cost.hpp"
#include "tow/dynamics.hpp"

namespace tow {

// Affine feedback policy u = u_hat + eps k + K (x - x_hat) for one timestep.
struct Controller {
  Eigen::MatrixXd K;  // M x D
  Eigen::VectorXd k;  // M
};

struct IlqrConfig {
  int n_ilqr = 2;
  double eps_init = 2.0;       // halved before the first trial
  double eps_min = 0x1p-30;
  int max_ls_trials = 40;
  bool full_v = false;         // dense value matrix instead of its diagonal
  double quu_reg_floor = 1e-8;
  // Relative slack on the acceptance inequality; exact LQ problems land on
  // the boundary J(u) - J(u_hat) = eps theta1 / 2 at eps = 1, where bare
  // floating-point comparison would flip coins.
  double accept_slack = 1e-9;
};

inline void validate(const IlqrConfig& cfg) {
  if (cfg.n_ilqr < 1) throw ConfigError("ilqr: n_ilqr must be >= 1");
  if (!(cfg.eps_init > 0.0)) throw ConfigError("ilqr: eps_init must be positive");
  if (!(cfg.eps_min > 0.0)) throw ConfigError("ilqr: eps_min must be positive");
  if (cfg.max_ls_trials < 1) throw ConfigError("ilqr: max_ls_trials must be >= 1");
  if (cfg.quu_reg_floor < 0.0 || cfg.accept_slack < 0.0)
    throw ConfigError("ilqr: regularization and slack must be nonnegative");
}

// Local linear-quadratic model of one timestep about the nominal.
struct StepExpansion {
  LinearizedDynamics dyn;
  QuadraticCost cost;
};

// A realized trajectory. states has T+1 entries (last is terminal, costless);
// actions has T. opt_states[t] is the optimizer state consumed by step t, so
// expansions can replay the exact transition; empty for stateless systems.
struct Rollout {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> actions;
  std::vector<OptimizerDynamics> opt_states;
  double total_cost = 0.0;
};

template <class S>
concept TrajectorySystem = requires(S sys, const Rollout& nominal,
                                    const std::vector<Controller>& ctrl,
                                    double eps) {
  { sys.initial_rollout() } -> std::same_as<Rollout>;
  { sys.expand(nominal) } -> std::same_as<std::vector<StepExpansion>>;
  { sys.rollout_controlled(nominal, ctrl, eps) } -> std::same_as<Rollout>;
};

struct BackwardResult {
  std::vector<Controller> controllers;
  double theta1 = 0.0;      // predicted directional cost derivative, <= 0
  double max_qu_norm = 0.0; // stationarity residual of the nominal
};

namespace detail {

// Positive-definite solve. Factorizes Q_uu as given so definite problems are
// solved exactly; only a failed factorization engages a diagonal shift, seeded
// by the Gershgorin bound and escalated until the factorization goes through.
class RegularizedSolver {
 public:
  RegularizedSolver(const Eigen::MatrixXd& quu, double floor, int timestep) {
    llt_.compute(quu);
    if (llt_.info() == Eigen::Success) return;
    const int n = static_cast<int>(quu.rows());
    double gmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      gmin = std::min(gmin, quu(i, i) + std::abs(quu(i, i)) -
                                quu.row(i).lpNorm<1>());
    double lambda = std::max(floor, floor - gmin);
    for (int attempt = 0; attempt < 64; ++attempt) {
      llt_.compute(quu + lambda * Eigen::MatrixXd::Identity(n, n));
      if (llt_.info() == Eigen::Success) return;
      lambda = std::max(lambda * 10.0, floor);
    }
    throw NumericError("ilqr backward: Q_uu not positive definite at step " +
                       std::to_string(timestep));
  }
  template <class Rhs>
  auto solve(const Rhs& rhs) const {
    return llt_.solve(rhs);
  }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

}  // namespace detail

// Backward value recursion. The value matrix starts at zero and is kept as a
// diagonal whenever the config and the step representations allow; otherwise
// the dense product forms are used and, without full_v, the result is
// truncated back to its diagonal.
inline BackwardResult ilqr_backward(const std::vector<StepExpansion>& steps,
                                    const IlqrConfig& cfg) {
  if (steps.empty()) throw ArgumentError("ilqr_backward: empty horizon");
  const int horizon = static_cast<int>(steps.size());
  const int dim = static_cast<int>(steps[0].cost.cx.size());

  BackwardResult out;
  out.controllers.resize(horizon);
  bool v_is_diag = true;
  Eigen::VectorXd vd = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd vfull;
  Eigen::VectorXd vlin = Eigen::VectorXd::Zero(dim);
  double theta = 0.0;

  for (int t = horizon - 1; t >= 0; --t) {
    const LinearizedDynamics& f = steps[t].dyn;
    const QuadraticCost& c = steps[t].cost;
    Eigen::MatrixXd qxu, quu;
    Eigen::VectorXd qx, qu;

    const bool diag_path =
        !cfg.full_v && v_is_diag && f.fx_diagonal && c.cxx_diagonal;
    if (diag_path) {
      quu = c.cuu + f.fu.transpose() * vd.asDiagonal() * f.fu;
      qxu = (f.fx_diag.array() * vd.array()).matrix().asDiagonal() * f.fu;
      qu = c.cu + f.fu.transpose() * vlin;
      qx = c.cx + f.fx_diag.cwiseProduct(vlin);
      detail::RegularizedSolver solver(quu, cfg.quu_reg_floor, t);
      Controller& ctrl = out.controllers[t];
      ctrl.K = -solver.solve(Eigen::MatrixXd(qxu.transpose()));
      ctrl.k = -solver.solve(qu);
      Eigen::VectorXd vd_new(dim);
      for (int i = 0; i < dim; ++i)
        vd_new[i] = c.cxx_diag[i] + f.fx_diag[i] * f.fx_diag[i] * vd[i] +
                    qxu.row(i).dot(ctrl.K.col(i));
      vd = std::move(vd_new);
      vlin = qx + qxu * ctrl.k;
      theta += qu.dot(ctrl.k);
    } else {
      const Eigen::MatrixXd fx =
          f.fx_diagonal ? Eigen::MatrixXd(f.fx_diag.asDiagonal()) : f.fx_full;
      const Eigen::MatrixXd vmat =
          v_is_diag ? Eigen::MatrixXd(vd.asDiagonal()) : vfull;
      const Eigen::MatrixXd cxx = c.cxx_diagonal
                                      ? Eigen::MatrixXd(c.cxx_diag.asDiagonal())
                                      : c.cxx_full;
      const Eigen::MatrixXd vfu = vmat * f.fu;
      Eigen::MatrixXd qxx = cxx + fx.transpose() * (vmat * fx);
      qxx = 0.5 * (qxx + qxx.transpose()).eval();
      qxu = fx.transpose() * vfu;
      quu = c.cuu + f.fu.transpose() * vfu;
      quu = 0.5 * (quu + quu.transpose()).eval();
      qx = c.cx + fx.transpose() * vlin;
      qu = c.cu + f.fu.transpose() * vlin;
      detail::RegularizedSolver solver(quu, cfg.quu_reg_floor, t);
      Controller& ctrl = out.controllers[t];
      ctrl.K = -solver.solve(Eigen::MatrixXd(qxu.transpose()));
      ctrl.k = -solver.solve(qu);
      Eigen::MatrixXd vnew = qxx + qxu * ctrl.K;
      vnew = 0.5 * (vnew + vnew.transpose()).eval();
      if (cfg.full_v) {
        vfull = std::move(vnew);
        v_is_diag = false;
      } else {
        vd = vnew.diagonal();
        v_is_diag = true;
      }
      vlin = qx + qxu * ctrl.k;
      theta += qu.dot(ctrl.k);
    }

    if (!out.controllers[t].K.allFinite() || !out.controllers[t].k.allFinite() ||
        !std::isfinite(theta))
      throw NumericError("ilqr backward: non-finite controller at step " +
                         std::to_string(t));
    out.max_qu_norm = std::max(out.max_qu_norm, qu.norm());
  }
  out.theta1 = theta;
  return out;
}

struct IlqrIterDiag {
  double theta1 = 0.0;
  double max_qu_norm = 0.0;
  bool accepted = false;
  double eps_accepted = 0.0;  // 0 when no candidate was accepted
  int ls_trials = 0;
  double j_nominal = 0.0;
  double j_final = 0.0;
};

struct IlqrResult {
  Rollout trajectory;
  std::vector<IlqrIterDiag> iters;
};

// Alternates backward recursion and backtracking forward rollouts. eps halves
// before each trial; a candidate is accepted iff it makes at least half the
// predicted linear improvement (plus slack) and keeps every action entry
// nonnegative. A fully failed line search keeps the nominal and stops.
template <TrajectorySystem S>
IlqrResult ilqr_solve(S& sys, const IlqrConfig& cfg) {
  validate(cfg);
  Rollout nominal = sys.initial_rollout();
  IlqrResult res;
  for (int iter = 0; iter < cfg.n_ilqr; ++iter) {
    const auto back = ilqr_backward(sys.expand(nominal), cfg);
    IlqrIterDiag diag;
    diag.theta1 = back.theta1;
    diag.max_qu_norm = back.max_qu_norm;
    diag.j_nominal = nominal.total_cost;
    const double slack = cfg.accept_slack * (1.0 + std::abs(nominal.total_cost));
    double eps = cfg.eps_init;
    while (diag.ls_trials < cfg.max_ls_trials) {
      eps *= 0.5;
      if (eps < cfg.eps_min) break;
      ++diag.ls_trials;
      Rollout cand = sys.rollout_controlled(nominal, back.controllers, eps);
      bool nonneg = true;
      for (const auto& u : cand.actions) nonneg = nonneg && (u.array() >= 0.0).all();
      if (nonneg &&
          cand.total_cost - nominal.total_cost <= 0.5 * eps * back.theta1 + slack) {
        nominal = std::move(cand);
        diag.accepted = true;
        diag.eps_accepted = eps;
        break;
      }
    }
    diag.j_final = nominal.total_cost;
    res.iters.push_back(diag);
    if (!diag.accepted) break;
  }
  res.trajectory = std::move(nominal);
  return res;
}

}  // namespace tow
