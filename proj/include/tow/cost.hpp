#pragma once

#include <vector>

#include <Eigen/Dense>

#include "tow/metalearn.hpp"

namespace tow {

// Gaussian action prior centered at mu_u * 1 with precision beta_u.
struct ActionPrior {
  double mu_u = 0.0;
  double beta_u = 10.0;
};

inline void validate(const ActionPrior& prior) {
  if (!(prior.beta_u > 0.0)) throw ConfigError("prior: beta_u must be positive");
}

inline double prior_penalty(const ActionPrior& prior, const Eigen::VectorXd& u) {
  const int n = static_cast<int>(u.size());
  return 0.5 * prior.beta_u *
         (u - Eigen::VectorXd::Constant(n, prior.mu_u)).squaredNorm();
}

// Per-step trajectory cost from precomputed task losses.
inline double cost_from(const Eigen::VectorXd& ell, const Eigen::VectorXd& u,
                        const ActionPrior& prior) {
  return ell.sum() + prior_penalty(prior, u);
}

// c(x, u) = 1' ell(x) + (beta_u / 2) ||u - mu_u 1||^2. The state cost sums the
// task losses with weight one regardless of u; only the dynamics see u.
inline double cost(const MetaProblem& p, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& u, const TaskBatch& batch,
                   const ActionPrior& prior) {
  validate(prior);
  if (u.size() != static_cast<Eigen::Index>(batch.size()))
    throw ArgumentError("cost: action size does not match batch size");
  return cost_from(validation_loss_vector(p, x, batch), u, prior);
}

// Second-order model of c about (x_hat, u_hat). The x/u cross terms of this
// cost are identically zero, so they carry no fields. C_uu is stored dense so
// the solver also serves cost models that are not beta_u I.
struct QuadraticCost {
  bool cxx_diagonal = false;
  Eigen::VectorXd cxx_diag;
  Eigen::MatrixXd cxx_full;
  Eigen::VectorXd cx;  // D
  Eigen::VectorXd cu;  // M
  Eigen::MatrixXd cuu;  // M x M
};

namespace detail {

inline QuadraticCost quadraticize_from(const std::vector<TaskExpansion>& ex,
                                       const Eigen::VectorXd& u_hat,
                                       const ActionPrior& prior,
                                       CurvatureMode mode) {
  const int n_tasks = static_cast<int>(ex.size());
  if (u_hat.size() != n_tasks)
    throw ArgumentError("quadraticize: action size does not match batch size");
  const int dim = static_cast<int>(ex[0].grad.size());
  QuadraticCost q;
  q.cx = Eigen::VectorXd::Zero(dim);
  for (const auto& e : ex) q.cx += e.grad;
  if (mode == CurvatureMode::Diag) {
    q.cxx_diagonal = true;
    q.cxx_diag = Eigen::VectorXd::Zero(dim);
    for (const auto& e : ex) q.cxx_diag += e.gn_diag;
  } else {
    q.cxx_full = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& e : ex) q.cxx_full += e.curv_full;
  }
  q.cu = prior.beta_u *
         (u_hat - Eigen::VectorXd::Constant(n_tasks, prior.mu_u));
  q.cuu = prior.beta_u * Eigen::MatrixXd::Identity(n_tasks, n_tasks);
  return q;
}

}  // namespace detail

inline QuadraticCost quadraticize(const MetaProblem& p, const Eigen::VectorXd& x_hat,
                                  const Eigen::VectorXd& u_hat,
                                  const TaskBatch& batch, const ActionPrior& prior,
                                  CurvatureMode mode) {
  validate(prior);
  return detail::quadraticize_from(expand_batch(p, x_hat, batch, mode), u_hat,
                                   prior, mode);
}

// J(u_{1:T}) = sum_t c(x_t, u_t).
inline double total_cost(const MetaProblem& p,
                         const std::vector<Eigen::VectorXd>& states,
                         const std::vector<Eigen::VectorXd>& actions,
                         const std::vector<TaskBatch>& batches,
                         const ActionPrior& prior) {
  if (states.size() != actions.size() || states.size() != batches.size())
    throw ArgumentError("total_cost: state/action/batch length mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < states.size(); ++t)
    total += cost(p, states[t], actions[t], batches[t], prior);
  return total;
}

}  // namespace tow
