#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tow/ilqr.hpp"

namespace tow {

// Finite-horizon time-varying LQ problem: x_{t+1} = A_t x + B_t u with cost
// sum_t (1/2 x'P_t x + p_t'x + 1/2 u'R_t u + r_t'u). Used as a test bed whose
// exact optimum is computable in closed form.
struct LqProblem {
  std::vector<Eigen::MatrixXd> A, B;  // D x D, D x M
  std::vector<Eigen::MatrixXd> P, R;  // D x D PSD, M x M PD
  std::vector<Eigen::VectorXd> p, r;  // D, M
  Eigen::VectorXd x1;

  int horizon() const { return static_cast<int>(A.size()); }
  int dim() const { return static_cast<int>(x1.size()); }
  int action_dim() const { return A.empty() ? 0 : static_cast<int>(B[0].cols()); }
};

inline void validate(const LqProblem& lq) {
  const std::size_t horizon = lq.A.size();
  if (horizon == 0) throw ArgumentError("lq: empty horizon");
  if (lq.B.size() != horizon || lq.P.size() != horizon || lq.R.size() != horizon ||
      lq.p.size() != horizon || lq.r.size() != horizon)
    throw ArgumentError("lq: per-step field lengths disagree");
  const int dim = lq.dim(), act = lq.action_dim();
  for (std::size_t t = 0; t < horizon; ++t)
    if (lq.A[t].rows() != dim || lq.A[t].cols() != dim || lq.B[t].rows() != dim ||
        lq.B[t].cols() != act || lq.P[t].rows() != dim || lq.P[t].cols() != dim ||
        lq.R[t].rows() != act || lq.R[t].cols() != act || lq.p[t].size() != dim ||
        lq.r[t].size() != act)
      throw ArgumentError("lq: shape mismatch at step " + std::to_string(t));
}

struct LqSolution {
  std::vector<Eigen::VectorXd> actions;
  std::vector<Eigen::VectorXd> states;  // T+1
  double cost = 0.0;
};

inline double lq_cost(const LqProblem& lq,
                      const std::vector<Eigen::VectorXd>& actions) {
  validate(lq);
  if (actions.size() != static_cast<std::size_t>(lq.horizon()))
    throw ArgumentError("lq_cost: wrong number of actions");
  double cost = 0.0;
  Eigen::VectorXd x = lq.x1;
  for (int t = 0; t < lq.horizon(); ++t) {
    const Eigen::VectorXd& u = actions[t];
    cost += 0.5 * x.dot(lq.P[t] * x) + lq.p[t].dot(x) + 0.5 * u.dot(lq.R[t] * u) +
            lq.r[t].dot(u);
    x = lq.A[t] * x + lq.B[t] * u;
  }
  return cost;
}

// Exact backward Riccati recursion in absolute coordinates followed by the
// optimal forward rollout. Demands well-posed input: a Q_uu that fails to
// factorize is an error here, never regularized.
inline LqSolution lqr_oracle(const LqProblem& lq) {
  validate(lq);
  const int horizon = lq.horizon(), dim = lq.dim();
  Eigen::MatrixXd vmat = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd vlin = Eigen::VectorXd::Zero(dim);
  std::vector<Eigen::MatrixXd> gain(horizon);
  std::vector<Eigen::VectorXd> bias(horizon);
  for (int t = horizon - 1; t >= 0; --t) {
    const Eigen::MatrixXd& a = lq.A[t];
    const Eigen::MatrixXd& b = lq.B[t];
    const Eigen::MatrixXd vb = vmat * b;
    Eigen::MatrixXd qxx = lq.P[t] + a.transpose() * vmat * a;
    qxx = 0.5 * (qxx + qxx.transpose()).eval();
    const Eigen::MatrixXd qxu = a.transpose() * vb;
    Eigen::MatrixXd quu = lq.R[t] + b.transpose() * vb;
    quu = 0.5 * (quu + quu.transpose()).eval();
    const Eigen::VectorXd qx = lq.p[t] + a.transpose() * vlin;
    const Eigen::VectorXd qu = lq.r[t] + b.transpose() * vlin;
    Eigen::LLT<Eigen::MatrixXd> llt(quu);
    if (llt.info() != Eigen::Success)
      throw NumericError("lqr_oracle: Q_uu not positive definite at step " +
                         std::to_string(t));
    gain[t] = -llt.solve(Eigen::MatrixXd(qxu.transpose()));
    bias[t] = -llt.solve(qu);
    vmat = qxx + qxu * gain[t];
    vmat = 0.5 * (vmat + vmat.transpose()).eval();
    vlin = qx + qxu * bias[t];
  }
  LqSolution sol;
  Eigen::VectorXd x = lq.x1;
  sol.states.push_back(x);
  for (int t = 0; t < horizon; ++t) {
    sol.actions.push_back(gain[t] * x + bias[t]);
    x = lq.A[t] * x + lq.B[t] * sol.actions.back();
    sol.states.push_back(x);
  }
  sol.cost = lq_cost(lq, sol.actions);
  return sol;
}

// TrajectorySystem adapter for LqProblem. With diagonal_representation the
// expansions are emitted as diagonals (requires diagonal A and P), which
// routes the backward pass through its diagonal fast path.
class LqSystem {
 public:
  LqSystem(LqProblem lq, std::vector<Eigen::VectorXd> init_actions,
           bool diagonal_representation = false)
      : lq_(std::move(lq)),
        init_actions_(std::move(init_actions)),
        diag_repr_(diagonal_representation) {
    validate(lq_);
    if (init_actions_.size() != static_cast<std::size_t>(lq_.horizon()))
      throw ArgumentError("LqSystem: wrong number of initial actions");
    if (diag_repr_)
      for (int t = 0; t < lq_.horizon(); ++t)
        if (!lq_.A[t].isDiagonal(0.0) || !lq_.P[t].isDiagonal(0.0))
          throw ArgumentError("LqSystem: diagonal representation needs diagonal A, P");
  }

  const LqProblem& problem() const { return lq_; }

  Rollout rollout(const std::vector<Eigen::VectorXd>& actions) const {
    Rollout roll;
    roll.actions = actions;
    Eigen::VectorXd x = lq_.x1;
    roll.states.push_back(x);
    for (int t = 0; t < lq_.horizon(); ++t) {
      x = lq_.A[t] * x + lq_.B[t] * actions[t];
      roll.states.push_back(x);
    }
    roll.total_cost = lq_cost(lq_, actions);
    return roll;
  }

  Rollout initial_rollout() { return rollout(init_actions_); }

  std::vector<StepExpansion> expand(const Rollout& nominal) const {
    std::vector<StepExpansion> steps(lq_.horizon());
    for (int t = 0; t < lq_.horizon(); ++t) {
      StepExpansion& s = steps[t];
      if (diag_repr_) {
        s.dyn.fx_diagonal = true;
        s.dyn.fx_diag = lq_.A[t].diagonal();
        s.cost.cxx_diagonal = true;
        s.cost.cxx_diag = lq_.P[t].diagonal();
      } else {
        s.dyn.fx_full = lq_.A[t];
        s.cost.cxx_full = lq_.P[t];
      }
      s.dyn.fu = lq_.B[t];
      s.cost.cx = lq_.P[t] * nominal.states[t] + lq_.p[t];
      s.cost.cu = lq_.R[t] * nominal.actions[t] + lq_.r[t];
      s.cost.cuu = lq_.R[t];
    }
    return steps;
  }

  Rollout rollout_controlled(const Rollout& nominal,
                             const std::vector<Controller>& ctrl,
                             double eps) const {
    std::vector<Eigen::VectorXd> actions(lq_.horizon());
    Eigen::VectorXd x = lq_.x1;
    for (int t = 0; t < lq_.horizon(); ++t) {
      actions[t] =
          nominal.actions[t] + eps * ctrl[t].k + ctrl[t].K * (x - nominal.states[t]);
      x = lq_.A[t] * x + lq_.B[t] * actions[t];
    }
    return rollout(actions);
  }

 private:
  LqProblem lq_;
  std::vector<Eigen::VectorXd> init_actions_;
  bool diag_repr_;
};

static_assert(TrajectorySystem<LqSystem>);

}  // namespace tow
