#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tow/model.hpp"

namespace tow {

enum class AdaptVariant { GradientAdaptation, Prototypical };
enum class GradOrder { FirstOrder, Full };

// Representation of curvature surrogates: Diag keeps Gauss-Newton diagonals,
// Full builds dense matrices (exact for linear models).
enum class CurvatureMode { Diag, Full };

struct InnerLoopConfig {
  double gamma = 0.01;
  int steps = 1;
  AdaptVariant variant = AdaptVariant::GradientAdaptation;
};

// Everything needed to evaluate the weighted meta-objective u' ell(x).
struct MetaProblem {
  ModelSpec model;
  InnerLoopConfig inner;
  GradOrder order = GradOrder::Full;
};

inline void validate(const MetaProblem& p) {
  validate(p.model);
  if (p.inner.gamma < 0.0) throw ConfigError("inner: gamma must be nonnegative");
  if (p.inner.steps < 0) throw ConfigError("inner: steps must be nonnegative");
  if (p.inner.variant == AdaptVariant::Prototypical &&
      p.model.loss != LossKind::CrossEntropy)
    throw ConfigError("inner: the prototypical variant requires cross-entropy");
}

namespace detail {

// All inner-loop iterates phi^0 = x .. phi^K; the intermediate points are
// needed again when differentiating through the loop.
inline std::vector<Eigen::VectorXd> inner_path(const MetaProblem& p,
                                               const Eigen::VectorXd& x,
                                               const DataSet& support) {
  std::vector<Eigen::VectorXd> path;
  path.reserve(p.inner.steps + 1);
  path.push_back(x);
  for (int k = 0; k < p.inner.steps; ++k)
    path.push_back(path.back() -
                   p.inner.gamma * loss_and_grad(p.model, path.back(), support).grad);
  return path;
}

inline int raw_class_index(const Eigen::MatrixXd& targets, int row) {
  if (targets.cols() != 1)
    throw ArgumentError("prototypical: targets must be a class-index column");
  const double raw = targets(row, 0);
  const double rounded = std::nearbyint(raw);
  if (std::abs(raw - rounded) > 1e-9 || rounded < 0.0)
    throw ArgumentError("prototypical: bad class index " + std::to_string(raw));
  return static_cast<int>(rounded);
}

// Class prototypes from the support embeddings; query logits are negative
// squared distances to each prototype.
struct ProtoEval {
  Eigen::MatrixXd support_emb;  // m_s x E
  Eigen::MatrixXd query_emb;    // m_q x E
  Eigen::MatrixXd prototypes;   // K x E
  std::vector<int> support_class, query_class;
  std::vector<int> class_size;
  Eigen::MatrixXd logits;  // m_q x K
  double loss = 0.0;
};

inline ProtoEval proto_eval(const ModelSpec& spec, const Eigen::VectorXd& x,
                            const Task& task) {
  check_dataset(spec, task.support);
  check_dataset(spec, task.query);
  ProtoEval ev;
  ev.support_emb = embed(spec, x, task.support.inputs);
  ev.query_emb = embed(spec, x, task.query.inputs);
  const int m_s = task.support.rows();
  const int m_q = task.query.rows();
  int n_class = 0;
  for (int i = 0; i < m_s; ++i) {
    ev.support_class.push_back(raw_class_index(task.support.targets, i));
    n_class = std::max(n_class, ev.support_class.back() + 1);
  }
  ev.class_size.assign(n_class, 0);
  ev.prototypes = Eigen::MatrixXd::Zero(n_class, ev.support_emb.cols());
  for (int i = 0; i < m_s; ++i) {
    ev.prototypes.row(ev.support_class[i]) += ev.support_emb.row(i);
    ++ev.class_size[ev.support_class[i]];
  }
  for (int k = 0; k < n_class; ++k) {
    if (ev.class_size[k] == 0)
      throw ArgumentError("prototypical: class " + std::to_string(k) +
                          " has no support samples");
    ev.prototypes.row(k) /= ev.class_size[k];
  }
  ev.logits.resize(m_q, n_class);
  for (int j = 0; j < m_q; ++j) {
    const int c = raw_class_index(task.query.targets, j);
    if (c >= n_class)
      throw ArgumentError("prototypical: query class not present in support");
    ev.query_class.push_back(c);
    for (int k = 0; k < n_class; ++k)
      ev.logits(j, k) =
          -(ev.query_emb.row(j) - ev.prototypes.row(k)).squaredNorm();
  }
  double total = 0.0;
  for (int j = 0; j < m_q; ++j) {
    const Eigen::VectorXd lj = ev.logits.row(j).transpose();
    const double fmax = lj.maxCoeff();
    const double lse = fmax + std::log((lj.array() - fmax).exp().sum());
    const double lij = lse - lj[ev.query_class[j]];
    total += (spec.loss_clip && lij > *spec.loss_clip) ? *spec.loss_clip : lij;
  }
  ev.loss = total / m_q;
  return ev;
}

inline Eigen::VectorXd proto_grad(const ModelSpec& spec, const Eigen::VectorXd& x,
                                  const Task& task, const ProtoEval& ev) {
  const int m_q = task.query.rows();
  const int m_s = task.support.rows();
  const int n_class = static_cast<int>(ev.class_size.size());
  Eigen::MatrixXd cot_query = Eigen::MatrixXd::Zero(m_q, ev.query_emb.cols());
  Eigen::MatrixXd cot_proto = Eigen::MatrixXd::Zero(n_class, ev.query_emb.cols());
  for (int j = 0; j < m_q; ++j) {
    const Eigen::VectorXd lj = ev.logits.row(j).transpose();
    const double fmax = lj.maxCoeff();
    const double lse = fmax + std::log((lj.array() - fmax).exp().sum());
    if (spec.loss_clip && (lse - lj[ev.query_class[j]]) > *spec.loss_clip) continue;
    Eigen::VectorXd g = softmax(lj);
    g[ev.query_class[j]] -= 1.0;
    for (int k = 0; k < n_class; ++k) {
      const Eigen::RowVectorXd diff = ev.query_emb.row(j) - ev.prototypes.row(k);
      cot_query.row(j) += g[k] * (-2.0) * diff;
      cot_proto.row(k) += g[k] * 2.0 * diff;
    }
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count(spec));
  for (int j = 0; j < m_q; ++j)
    grad += param_vjp(spec, x, task.query.inputs.row(j).transpose(),
                      cot_query.row(j).transpose());
  for (int i = 0; i < m_s; ++i) {
    const int k = ev.support_class[i];
    grad += param_vjp(spec, x, task.support.inputs.row(i).transpose(),
                      cot_proto.row(k).transpose() / ev.class_size[k]);
  }
  return grad / m_q;
}

// Generalized Gauss-Newton of the prototypical loss through the logit map;
// fills whichever of full/diag is non-null.
inline void proto_gn(const ModelSpec& spec, const Eigen::VectorXd& x,
                     const Task& task, const ProtoEval& ev, Eigen::MatrixXd* full,
                     Eigen::VectorXd* diag) {
  const int D = param_count(spec);
  const int m_q = task.query.rows();
  const int m_s = task.support.rows();
  const int n_class = static_cast<int>(ev.class_size.size());
  std::vector<Eigen::MatrixXd> class_jac(
      n_class, Eigen::MatrixXd::Zero(spec.out_dim(), D));
  for (int i = 0; i < m_s; ++i)
    class_jac[ev.support_class[i]] +=
        output_jacobian(spec, x, task.support.inputs.row(i).transpose()) /
        ev.class_size[ev.support_class[i]];
  if (full) full->setZero(D, D);
  if (diag) diag->setZero(D);
  for (int j = 0; j < m_q; ++j) {
    const Eigen::VectorXd lj = ev.logits.row(j).transpose();
    const double fmax = lj.maxCoeff();
    const double lse = fmax + std::log((lj.array() - fmax).exp().sum());
    if (spec.loss_clip && (lse - lj[ev.query_class[j]]) > *spec.loss_clip) continue;
    const Eigen::MatrixXd jq =
        output_jacobian(spec, x, task.query.inputs.row(j).transpose());
    Eigen::MatrixXd G(n_class, D);
    for (int k = 0; k < n_class; ++k)
      G.row(k) = -2.0 * (ev.query_emb.row(j) - ev.prototypes.row(k)) *
                 (jq - class_jac[k]);
    // Cross-entropy curvature over the logits.
    const Eigen::VectorXd p = softmax(lj);
    const Eigen::MatrixXd Gp = p.asDiagonal() * G;
    const Eigen::RowVectorXd mean = p.transpose() * G;
    if (full) {
      full->noalias() += G.transpose() * Gp;
      full->noalias() -= mean.transpose() * mean;
    }
    if (diag)
      *diag += ((G.array() * Gp.array()).colwise().sum() - mean.array().square())
                   .matrix()
                   .transpose();
  }
  if (full) *full /= m_q;
  if (diag) *diag /= m_q;
}

}  // namespace detail

// phi_i(x): the task-adapted parameters after the configured number of
// support-gradient steps.
inline Eigen::VectorXd inner_adapt(const MetaProblem& p, const Eigen::VectorXd& x,
                                   const DataSet& support) {
  validate(p);
  if (p.inner.variant != AdaptVariant::GradientAdaptation)
    throw ArgumentError("inner_adapt: defined for the gradient-adaptation variant");
  return detail::inner_path(p, x, support).back();
}

inline double task_validation_loss(const MetaProblem& p, const Eigen::VectorXd& x,
                                   const Task& task) {
  validate(p);
  if (p.inner.variant == AdaptVariant::Prototypical)
    return detail::proto_eval(p.model, x, task).loss;
  return loss_value(p.model, detail::inner_path(p, x, task.support).back(),
                    task.query);
}

// ell(x): entry i is task i's validation loss at its adapted parameters.
inline Eigen::VectorXd validation_loss_vector(const MetaProblem& p,
                                              const Eigen::VectorXd& x,
                                              const TaskBatch& batch) {
  if (batch.empty()) throw ArgumentError("validation_loss_vector: empty batch");
  Eigen::VectorXd ell(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    ell[i] = task_validation_loss(p, x, batch[i]);
  return ell;
}

inline double weighted_loss(const Eigen::VectorXd& u, const Eigen::VectorXd& ell) {
  if (u.size() != ell.size())
    throw ArgumentError("weighted_loss: weight/loss size mismatch");
  return u.dot(ell);
}

// d ell_i / dx. FirstOrder treats dphi/dx as the identity; Full
// back-propagates through the inner loop with one Hessian-vector product per
// inner step. The prototypical variant adapts with the identity map, so both
// orders coincide there.
inline Eigen::VectorXd task_meta_grad(const MetaProblem& p, const Eigen::VectorXd& x,
                                      const Task& task) {
  validate(p);
  if (p.inner.variant == AdaptVariant::Prototypical) {
    const auto ev = detail::proto_eval(p.model, x, task);
    return detail::proto_grad(p.model, x, task, ev);
  }
  const auto path = detail::inner_path(p, x, task.support);
  Eigen::VectorXd g = loss_and_grad(p.model, path.back(), task.query).grad;
  if (p.order == GradOrder::FirstOrder) return g;
  for (int k = p.inner.steps - 1; k >= 0; --k)
    g -= p.inner.gamma * hvp(p.model, path[k], task.support, g);
  return g;
}

inline Eigen::VectorXd meta_grad_weighted(const MetaProblem& p,
                                          const Eigen::VectorXd& x,
                                          const TaskBatch& batch,
                                          const Eigen::VectorXd& u) {
  if (batch.empty()) throw ArgumentError("meta_grad_weighted: empty batch");
  if (u.size() != static_cast<Eigen::Index>(batch.size()))
    throw ArgumentError("meta_grad_weighted: weight size mismatch");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(param_count(p.model));
  for (std::size_t i = 0; i < batch.size(); ++i)
    g += u[i] * task_meta_grad(p, x, batch[i]);
  return g;
}

// Row i is d ell_i / dx, so u' J == meta_grad_weighted(u)'.
inline Eigen::MatrixXd meta_loss_jacobian(const MetaProblem& p,
                                          const Eigen::VectorXd& x,
                                          const TaskBatch& batch) {
  if (batch.empty()) throw ArgumentError("meta_loss_jacobian: empty batch");
  Eigen::MatrixXd J(batch.size(), param_count(p.model));
  for (std::size_t i = 0; i < batch.size(); ++i)
    J.row(i) = task_meta_grad(p, x, batch[i]).transpose();
  return J;
}

// Gauss-Newton diagonal of task i's validation loss at the adapted
// parameters, with dphi/dx treated as the identity.
inline Eigen::VectorXd task_gn_diag(const MetaProblem& p, const Eigen::VectorXd& x,
                                    const Task& task) {
  validate(p);
  if (p.inner.variant == AdaptVariant::Prototypical) {
    const auto ev = detail::proto_eval(p.model, x, task);
    Eigen::VectorXd diag;
    detail::proto_gn(p.model, x, task, ev, nullptr, &diag);
    return diag;
  }
  return gauss_newton_diag(p.model, detail::inner_path(p, x, task.support).back(),
                           task.query);
}

// Dense curvature of task i's validation loss as a function of x, for linear
// models where Gauss-Newton curvature is exact. With C = dphi/dx the chain
// product over inner steps, Full order gives C'HC and FirstOrder order gives
// HC (the exact Jacobian of the first-order gradient map). The variation of C
// itself is dropped; it vanishes for MSE, whose support Hessian is constant.
inline Eigen::MatrixXd task_curvature_full(const MetaProblem& p,
                                           const Eigen::VectorXd& x,
                                           const Task& task) {
  validate(p);
  if (p.model.arch != Architecture::Linear)
    throw UnsupportedError("task_curvature_full: requires a linear model");
  if (p.inner.variant == AdaptVariant::Prototypical) {
    const auto ev = detail::proto_eval(p.model, x, task);
    Eigen::MatrixXd full;
    detail::proto_gn(p.model, x, task, ev, &full, nullptr);
    return full;
  }
  const int D = param_count(p.model);
  const auto path = detail::inner_path(p, x, task.support);
  Eigen::MatrixXd chain = Eigen::MatrixXd::Identity(D, D);
  for (int k = 0; k < p.inner.steps; ++k)
    chain = (Eigen::MatrixXd::Identity(D, D) -
             p.inner.gamma * gauss_newton_full(p.model, path[k], task.support)) *
            chain;
  const Eigen::MatrixXd hq = gauss_newton_full(p.model, path.back(), task.query);
  if (p.order == GradOrder::FirstOrder) return hq * chain;
  return chain.transpose() * hq * chain;
}

// Query accuracy at the adapted parameters (NaN for regression losses).
inline double task_query_accuracy(const MetaProblem& p, const Eigen::VectorXd& x,
                                  const Task& task) {
  validate(p);
  if (p.inner.variant == AdaptVariant::Prototypical) {
    const auto ev = detail::proto_eval(p.model, x, task);
    int hits = 0;
    for (int j = 0; j < ev.logits.rows(); ++j) {
      int argmax = 0;
      ev.logits.row(j).maxCoeff(&argmax);
      if (argmax == ev.query_class[j]) ++hits;
    }
    return static_cast<double>(hits) / ev.logits.rows();
  }
  return accuracy(p.model, detail::inner_path(p, x, task.support).back(), task.query);
}

// Validation losses and their parameter gradients for a whole batch; the
// per-task inner path is computed once and shared between the two.
struct BatchEval {
  Eigen::VectorXd ell;  // M
  Eigen::MatrixXd jac;  // M x D, row i = d ell_i / dx
};

inline BatchEval batch_eval(const MetaProblem& p, const Eigen::VectorXd& x,
                            const TaskBatch& batch) {
  if (batch.empty()) throw ArgumentError("batch_eval: empty batch");
  validate(p);
  BatchEval be;
  be.ell.resize(batch.size());
  be.jac.resize(batch.size(), param_count(p.model));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Task& task = batch[i];
    if (p.inner.variant == AdaptVariant::Prototypical) {
      const auto ev = detail::proto_eval(p.model, x, task);
      be.ell[i] = ev.loss;
      be.jac.row(i) = detail::proto_grad(p.model, x, task, ev).transpose();
      continue;
    }
    const auto path = detail::inner_path(p, x, task.support);
    auto lg = loss_and_grad(p.model, path.back(), task.query);
    be.ell[i] = lg.loss;
    if (p.order == GradOrder::Full)
      for (int k = p.inner.steps - 1; k >= 0; --k)
        lg.grad -= p.inner.gamma * hvp(p.model, path[k], task.support, lg.grad);
    be.jac.row(i) = lg.grad.transpose();
  }
  return be;
}

// Per-task pieces shared by the dynamics linearization and the cost
// quadraticization, computed once per expansion point.
struct TaskExpansion {
  double loss = 0.0;          // ell_i
  Eigen::VectorXd grad;       // d ell_i / dx
  Eigen::VectorXd gn_diag;    // Diag mode
  Eigen::MatrixXd curv_full;  // Full mode
};

inline std::vector<TaskExpansion> expand_batch(const MetaProblem& p,
                                               const Eigen::VectorXd& x,
                                               const TaskBatch& batch,
                                               CurvatureMode mode) {
  if (batch.empty()) throw ArgumentError("expand_batch: empty batch");
  validate(p);
  std::vector<TaskExpansion> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Task& task = batch[i];
    TaskExpansion& e = out[i];
    if (p.inner.variant == AdaptVariant::Prototypical) {
      const auto ev = detail::proto_eval(p.model, x, task);
      e.loss = ev.loss;
      e.grad = detail::proto_grad(p.model, x, task, ev);
      if (mode == CurvatureMode::Diag)
        detail::proto_gn(p.model, x, task, ev, nullptr, &e.gn_diag);
      else if (p.model.arch != Architecture::Linear)
        throw UnsupportedError("expand_batch: Full mode requires a linear model");
      else
        detail::proto_gn(p.model, x, task, ev, &e.curv_full, nullptr);
      continue;
    }
    const auto path = detail::inner_path(p, x, task.support);
    const auto lg = loss_and_grad(p.model, path.back(), task.query);
    e.loss = lg.loss;
    e.grad = lg.grad;
    if (p.order == GradOrder::Full)
      for (int k = p.inner.steps - 1; k >= 0; --k)
        e.grad -= p.inner.gamma * hvp(p.model, path[k], task.support, e.grad);
    if (mode == CurvatureMode::Diag) {
      e.gn_diag = gauss_newton_diag(p.model, path.back(), task.query);
    } else {
      if (p.model.arch != Architecture::Linear)
        throw UnsupportedError("expand_batch: Full mode requires a linear model");
      const int D = param_count(p.model);
      Eigen::MatrixXd chain = Eigen::MatrixXd::Identity(D, D);
      for (int k = 0; k < p.inner.steps; ++k)
        chain = (Eigen::MatrixXd::Identity(D, D) -
                 p.inner.gamma *
                     gauss_newton_full(p.model, path[k], task.support)) *
                chain;
      const Eigen::MatrixXd hq =
          gauss_newton_full(p.model, path.back(), task.query);
      e.curv_full = p.order == GradOrder::FirstOrder
                        ? Eigen::MatrixXd(hq * chain)
                        : Eigen::MatrixXd(chain.transpose() * hq * chain);
    }
  }
  return out;
}

}  // namespace tow
