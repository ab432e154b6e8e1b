#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tow/ilqr.hpp"

namespace tow {

inline std::vector<Eigen::VectorXd> uniform_actions(int horizon, int n_tasks) {
  if (horizon < 1 || n_tasks < 1)
    throw ArgumentError("uniform_actions: horizon and batch size must be >= 1");
  return std::vector<Eigen::VectorXd>(
      horizon, Eigen::VectorXd::Constant(n_tasks, 1.0 / n_tasks));
}

// The task-weighting trajectory problem: states are meta-parameters, actions
// are per-task weights, one optimizer step per timestep, each timestep with
// its own task mini-batch. Every rollout restarts from the same snapshot of
// the optimizer state, so candidate trajectories never leak moments into the
// nominal.
class MetaWeightingSystem {
 public:
  MetaWeightingSystem(MetaProblem problem, OptimizerDynamics dyn,
                      Eigen::VectorXd x1, std::vector<TaskBatch> batches,
                      ActionPrior prior, CurvatureMode mode,
                      std::vector<Eigen::VectorXd> init_actions)
      : p_(std::move(problem)),
        dyn0_(std::move(dyn)),
        x1_(std::move(x1)),
        batches_(std::move(batches)),
        prior_(prior),
        mode_(mode),
        init_actions_(std::move(init_actions)) {
    validate(p_);
    validate(prior_);
    validate(dyn0_, static_cast<int>(x1_.size()));
    if (batches_.empty()) throw ArgumentError("meta system: empty horizon");
    if (init_actions_.size() != batches_.size())
      throw ArgumentError("meta system: one initial action per timestep required");
    if (x1_.size() != param_count(p_.model))
      throw ArgumentError("meta system: state size does not match the model");
    for (std::size_t t = 0; t < batches_.size(); ++t)
      if (init_actions_[t].size() != static_cast<Eigen::Index>(batches_[t].size()))
        throw ArgumentError("meta system: action/batch size mismatch at step " +
                            std::to_string(t));
  }

  int horizon() const { return static_cast<int>(batches_.size()); }
  const std::vector<TaskBatch>& batches() const { return batches_; }
  const ActionPrior& prior() const { return prior_; }

  // opt_states gets T+1 entries: [t] is consumed by step t, [T] is the
  // optimizer state after the horizon (what an applied trajectory carries
  // forward).
  Rollout rollout(const std::vector<Eigen::VectorXd>& actions) const {
    if (actions.size() != batches_.size())
      throw ArgumentError("meta system: wrong number of actions");
    Rollout roll;
    roll.actions = actions;
    OptimizerDynamics dyn = dyn0_;
    Eigen::VectorXd x = x1_;
    roll.states.push_back(x);
    for (std::size_t t = 0; t < batches_.size(); ++t) {
      roll.opt_states.push_back(dyn);
      const BatchEval be = batch_eval(p_, x, batches_[t]);
      roll.total_cost += cost_from(be.ell, actions[t], prior_);
      x = apply_update(dyn, x, be.jac.transpose() * actions[t]);
      if (!x.allFinite())
        throw NumericError("meta system: non-finite state after step " +
                           std::to_string(t));
      roll.states.push_back(x);
    }
    roll.opt_states.push_back(std::move(dyn));
    return roll;
  }

  Rollout initial_rollout() { return rollout(init_actions_); }

  std::vector<StepExpansion> expand(const Rollout& nominal) const {
    std::vector<StepExpansion> steps(batches_.size());
    for (std::size_t t = 0; t < batches_.size(); ++t) {
      const auto ex = expand_batch(p_, nominal.states[t], batches_[t], mode_);
      steps[t].dyn =
          detail::linearize_from(nominal.opt_states[t], ex, nominal.actions[t], mode_);
      steps[t].cost =
          detail::quadraticize_from(ex, nominal.actions[t], prior_, mode_);
    }
    return steps;
  }

  Rollout rollout_controlled(const Rollout& nominal,
                             const std::vector<Controller>& ctrl,
                             double eps) const {
    Rollout roll;
    OptimizerDynamics dyn = dyn0_;
    Eigen::VectorXd x = x1_;
    roll.states.push_back(x);
    for (std::size_t t = 0; t < batches_.size(); ++t) {
      const Eigen::VectorXd u = nominal.actions[t] + eps * ctrl[t].k +
                                ctrl[t].K * (x - nominal.states[t]);
      roll.actions.push_back(u);
      roll.opt_states.push_back(dyn);
      const BatchEval be = batch_eval(p_, x, batches_[t]);
      roll.total_cost += cost_from(be.ell, u, prior_);
      x = apply_update(dyn, x, be.jac.transpose() * u);
      if (!x.allFinite())
        throw NumericError("meta system: non-finite state after step " +
                           std::to_string(t));
      roll.states.push_back(x);
    }
    roll.opt_states.push_back(std::move(dyn));
    return roll;
  }

 private:
  MetaProblem p_;
  OptimizerDynamics dyn0_;
  Eigen::VectorXd x1_;
  std::vector<TaskBatch> batches_;
  ActionPrior prior_;
  CurvatureMode mode_;
  std::vector<Eigen::VectorXd> init_actions_;
};

static_assert(TrajectorySystem<MetaWeightingSystem>);

}  // namespace tow
