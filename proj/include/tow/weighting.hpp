#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tow/meta_system.hpp"

namespace tow {

enum class StrategyKind { Uniform, Exploration, Exploitation, Tow };

struct WeightingStrategy {
  StrategyKind kind = StrategyKind::Uniform;
  double kappa = 1.2;  // Dirichlet concentration for the two baselines
};

inline void validate(const WeightingStrategy& s) {
  if ((s.kind == StrategyKind::Exploration || s.kind == StrategyKind::Exploitation) &&
      !(s.kappa > 1.0))
    throw ConfigError("weighting: kappa must exceed 1");
}

inline Eigen::VectorXd uniform_weights(int n_tasks) {
  if (n_tasks < 1) throw ArgumentError("uniform_weights: need at least one task");
  return Eigen::VectorXd::Constant(n_tasks, 1.0 / n_tasks);
}

namespace detail {

// minimize sign u'ell - (kappa - 1) sum_i ln u_i over the simplex;
// sign = -1 upweights large losses (exploration), +1 small ones.
struct SimplexObjective {
  Eigen::VectorXd ell;
  double sign;
  double kappa;

  double value(const Eigen::VectorXd& u) const {
    if ((u.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    return sign * u.dot(ell) - (kappa - 1.0) * u.array().log().sum();
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& u) const {
    return sign * ell - (kappa - 1.0) * u.cwiseInverse();
  }
};

}  // namespace detail

// Exponentiated-gradient (mirror descent) solver for the baseline weights.
// The barrier keeps iterates strictly interior; Armijo backtracking on the
// step size handles the objective's unbounded gradient near the boundary.
// Interior stationarity on the simplex means the gradient is constant across
// coordinates, so the residual is the deviation from its u-weighted mean.
inline Eigen::VectorXd baseline_weights(const Eigen::VectorXd& ell,
                                        StrategyKind kind, double kappa,
                                        bool* converged = nullptr) {
  if (kind != StrategyKind::Exploration && kind != StrategyKind::Exploitation)
    throw ArgumentError("baseline_weights: strategy must be a baseline");
  if (!(kappa > 1.0)) throw ArgumentError("baseline_weights: kappa must exceed 1");
  if (ell.size() < 1 || !ell.allFinite())
    throw ArgumentError("baseline_weights: losses must be finite and nonempty");

  const detail::SimplexObjective obj{
      ell, kind == StrategyKind::Exploration ? -1.0 : 1.0, kappa};
  const int n = static_cast<int>(ell.size());
  Eigen::VectorXd u = uniform_weights(n);
  double eta = 1.0;
  bool ok = false;
  for (int iter = 0; iter < 10000; ++iter) {
    const Eigen::VectorXd g = obj.grad(u);
    const double residual = (g.array() - u.dot(g)).abs().maxCoeff();
    if (residual <= 1e-10 * (1.0 + g.lpNorm<Eigen::Infinity>())) {
      ok = true;
      break;
    }
    const double h0 = obj.value(u);
    // Close to stationarity objective decreases shrink like residual^2 and
    // drop below double resolution long before the residual meets tolerance,
    // so the acceptance test switches from sufficient decrease to strict
    // residual decrease, which stays well above roundoff.
    const bool near_floor = residual <= 1e-6 * (1.0 + g.lpNorm<Eigen::Infinity>());
    bool stepped = false;
    for (int trial = 0; trial < 80; ++trial) {
      Eigen::VectorXd w =
          (-(eta * (g.array() - g.minCoeff()))).exp() * u.array();
      w /= w.sum();
      bool accept;
      if (near_floor) {
        const Eigen::VectorXd gw = obj.grad(w);
        accept = (gw.array() - w.dot(gw)).abs().maxCoeff() < residual;
      } else {
        const double pred = g.dot(w - u);
        accept = pred < 0.0 && obj.value(w) <= h0 + 1e-4 * pred;
      }
      if (accept) {
        u = std::move(w);
        eta = std::min(eta * 2.0, 1e6);
        stepped = true;
        break;
      }
      eta *= 0.5;
    }
    if (!stepped) break;  // step size underflow: already at numeric stationarity
  }
  if (converged) *converged = ok;
  return u;
}

// Dispatch for per-batch weighting (TOW spans a horizon and is handled by
// tow_weights instead).
inline Eigen::VectorXd batch_weights(const WeightingStrategy& s,
                                     const Eigen::VectorXd& ell) {
  validate(s);
  switch (s.kind) {
    case StrategyKind::Uniform:
      return uniform_weights(static_cast<int>(ell.size()));
    case StrategyKind::Exploration:
    case StrategyKind::Exploitation:
      return baseline_weights(ell, s.kind, s.kappa);
    case StrategyKind::Tow:
      break;
  }
  throw ArgumentError("batch_weights: TOW weights span a horizon");
}

struct TowResult {
  std::vector<Eigen::VectorXd> weights;  // accepted actions, one per timestep
  Rollout trajectory;
  std::vector<IlqrIterDiag> iters;
  double delta_emp = 0.0;  // max_t ||u_t - uniform||_inf
};

// Solves the horizon's weighting problem with iLQR from the uniform nominal.
// Weights are not normalized; the solver's acceptance rule keeps them
// nonnegative.
inline TowResult tow_weights(const MetaProblem& p, const OptimizerDynamics& dyn,
                             const Eigen::VectorXd& x1,
                             const std::vector<TaskBatch>& batches,
                             const ActionPrior& prior, const IlqrConfig& cfg,
                             CurvatureMode mode,
                             std::vector<Eigen::VectorXd> init_actions = {}) {
  if (batches.empty()) throw ArgumentError("tow_weights: empty horizon");
  if (init_actions.empty()) {
    init_actions.reserve(batches.size());
    for (const auto& b : batches)
      init_actions.push_back(uniform_weights(static_cast<int>(b.size())));
  }
  MetaWeightingSystem sys(p, dyn, x1, batches, prior, mode, init_actions);
  IlqrResult sol = ilqr_solve(sys, cfg);
  TowResult out;
  out.weights = sol.trajectory.actions;
  out.iters = std::move(sol.iters);
  for (std::size_t t = 0; t < out.weights.size(); ++t)
    out.delta_emp = std::max(
        out.delta_emp,
        (out.weights[t] - init_actions[t]).lpNorm<Eigen::Infinity>());
  out.trajectory = std::move(sol.trajectory);
  return out;
}

}  // namespace tow
