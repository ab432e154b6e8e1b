#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "tow/metalearn.hpp"

namespace tow {

enum class DynKind { Sgd, Adam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One optimizer step on the weighted meta-loss is the state transition
// x' = f(x, u). For Adam the moment vectors are part of the state carried
// alongside x; step_index is the bias-correction exponent of the next update.
struct OptimizerDynamics {
  DynKind kind = DynKind::Sgd;
  double alpha = 1e-4;
  AdamParams adam;
  Eigen::VectorXd m, v;
  long long step_index = 1;
};

inline OptimizerDynamics make_sgd(double alpha) {
  OptimizerDynamics dyn;
  dyn.kind = DynKind::Sgd;
  dyn.alpha = alpha;
  return dyn;
}

inline OptimizerDynamics make_adam(double alpha, int dim, AdamParams p = {}) {
  OptimizerDynamics dyn;
  dyn.kind = DynKind::Adam;
  dyn.alpha = alpha;
  dyn.adam = p;
  dyn.m = Eigen::VectorXd::Zero(dim);
  dyn.v = Eigen::VectorXd::Zero(dim);
  return dyn;
}

// alpha = 0 is allowed here (frozen dynamics, F_x = I, F_u = 0); experiment
// configs reject it separately.
inline void validate(const OptimizerDynamics& dyn, int dim) {
  if (!(dyn.alpha >= 0.0)) throw ConfigError("dynamics: alpha must be nonnegative");
  if (dyn.kind == DynKind::Sgd) return;
  if (dyn.adam.beta1 < 0.0 || dyn.adam.beta1 >= 1.0 || dyn.adam.beta2 < 0.0 ||
      dyn.adam.beta2 >= 1.0)
    throw ConfigError("dynamics: adam betas must lie in [0, 1)");
  if (!(dyn.adam.eps > 0.0)) throw ConfigError("dynamics: adam eps must be positive");
  if (dyn.m.size() != dim || dyn.v.size() != dim)
    throw ConfigError("dynamics: adam state has wrong dimension");
  if (dyn.step_index < 1) throw ConfigError("dynamics: step_index must be >= 1");
  if ((dyn.v.array() < 0.0).any())
    throw ConfigError("dynamics: adam v must be nonnegative");
}

namespace detail {

inline void check_finite_grad(const Eigen::VectorXd& g, const char* where) {
  if (g.allFinite()) return;
  for (Eigen::Index d = 0; d < g.size(); ++d)
    if (!std::isfinite(g[d]))
      throw NumericError(std::string(where) + ": non-finite gradient entry " +
                         std::to_string(d) + " = " + std::to_string(g[d]));
}

}  // namespace detail

// Applies one optimizer update with gradient g, advancing Adam moments and
// the step counter in place.
inline Eigen::VectorXd apply_update(OptimizerDynamics& dyn, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& g) {
  detail::check_finite_grad(g, "apply_update");
  if (dyn.kind == DynKind::Sgd) return x - dyn.alpha * g;
  validate(dyn, static_cast<int>(x.size()));
  const double b1 = dyn.adam.beta1, b2 = dyn.adam.beta2;
  dyn.m = b1 * dyn.m + (1.0 - b1) * g;
  dyn.v = b2 * dyn.v + (1.0 - b2) * g.array().square().matrix();
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(dyn.step_index));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(dyn.step_index));
  ++dyn.step_index;
  const Eigen::ArrayXd mhat = dyn.m.array() / bc1;
  const Eigen::ArrayXd vhat = dyn.v.array() / bc2;
  return x.array() - dyn.alpha * mhat / (vhat.sqrt() + dyn.adam.eps);
}

// f(x, u): one optimizer step on u' ell(x).
inline Eigen::VectorXd dyn_step(const MetaProblem& p, OptimizerDynamics& dyn,
                                const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                const TaskBatch& batch) {
  if (u.size() != static_cast<Eigen::Index>(batch.size()))
    throw ArgumentError("dyn_step: action size does not match batch size");
  return apply_update(dyn, x, meta_grad_weighted(p, x, batch, u));
}

// First-order Taylor coefficients of f about a nominal (x_hat, u_hat). F_x is
// kept diagonal in Diag mode; F_u is dense D x M.
struct LinearizedDynamics {
  bool fx_diagonal = false;
  Eigen::VectorXd fx_diag;  // Diag mode
  Eigen::MatrixXd fx_full;  // Full mode
  Eigen::MatrixXd fu;       // D x M
};

namespace detail {

// d x'_d / d g_d for one optimizer step with the prior moments held fixed
// (they are state inputs, so this is the exact per-step derivative). For SGD
// the coefficient is 1. The r = 0 case forces g = 0 and the term's limit is 0.
inline Eigen::VectorXd update_gradient_coef(const OptimizerDynamics& dyn,
                                            const Eigen::VectorXd& g) {
  const int dim = static_cast<int>(g.size());
  if (dyn.kind == DynKind::Sgd) return Eigen::VectorXd::Constant(dim, dyn.alpha);
  const double b1 = dyn.adam.beta1, b2 = dyn.adam.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(dyn.step_index));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(dyn.step_index));
  Eigen::VectorXd coef(dim);
  for (int d = 0; d < dim; ++d) {
    const double mp = b1 * dyn.m[d] + (1.0 - b1) * g[d];
    const double vp = b2 * dyn.v[d] + (1.0 - b2) * g[d] * g[d];
    const double r = std::sqrt(vp / bc2);
    const double s = r + dyn.adam.eps;
    double c = (1.0 - b1) / s;
    if (r > 0.0) c -= (1.0 - b2) * mp * g[d] / (bc2 * r * s * s);
    coef[d] = dyn.alpha / bc1 * c;
  }
  return coef;
}

// Assembles F_x = I - diag(coef) H and F_u = -diag(coef) J' from precomputed
// per-task expansions; H is the u_hat-weighted curvature surrogate.
inline LinearizedDynamics linearize_from(const OptimizerDynamics& dyn,
                                         const std::vector<TaskExpansion>& ex,
                                         const Eigen::VectorXd& u_hat,
                                         CurvatureMode mode) {
  const int n_tasks = static_cast<int>(ex.size());
  if (u_hat.size() != n_tasks)
    throw ArgumentError("linearize: action size does not match batch size");
  const int dim = static_cast<int>(ex[0].grad.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
  for (int i = 0; i < n_tasks; ++i) g += u_hat[i] * ex[i].grad;
  const Eigen::VectorXd coef = update_gradient_coef(dyn, g);

  LinearizedDynamics lin;
  lin.fu.resize(dim, n_tasks);
  for (int i = 0; i < n_tasks; ++i)
    lin.fu.col(i) = -coef.cwiseProduct(ex[i].grad);
  if (mode == CurvatureMode::Diag) {
    lin.fx_diagonal = true;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < n_tasks; ++i) h += u_hat[i] * ex[i].gn_diag;
    lin.fx_diag = Eigen::VectorXd::Ones(dim) - coef.cwiseProduct(h);
  } else {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < n_tasks; ++i) h += u_hat[i] * ex[i].curv_full;
    lin.fx_full = Eigen::MatrixXd::Identity(dim, dim) - coef.asDiagonal() * h;
  }
  return lin;
}

}  // namespace detail

// Pure with respect to the optimizer state: moments are advanced locally to
// evaluate the update's derivative, never written back.
inline LinearizedDynamics linearize(const MetaProblem& p,
                                    const OptimizerDynamics& dyn,
                                    const Eigen::VectorXd& x_hat,
                                    const Eigen::VectorXd& u_hat,
                                    const TaskBatch& batch, CurvatureMode mode) {
  validate(dyn, static_cast<int>(x_hat.size()));
  return detail::linearize_from(dyn, expand_batch(p, x_hat, batch, mode), u_hat,
                                mode);
}

}  // namespace tow
