#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tow/errors.hpp"
#include "tow/rng.hpp"
#include "tow/tasks.hpp"

namespace tow {

enum class Architecture { Linear, Mlp };
enum class Activation { Tanh, Relu };
enum class LossKind { Mse, CrossEntropy };

// Network plus loss description. Linear is a single bias-free layer (so a
// flattened weight matrix is the whole parameter vector); Mlp layers carry
// biases and apply the activation on hidden layers only.
struct ModelSpec {
  Architecture arch = Architecture::Linear;
  std::vector<int> layers;  // [in, hidden..., out]
  Activation activation = Activation::Tanh;
  LossKind loss = LossKind::Mse;
  std::optional<double> loss_clip;  // per-sample cap; capped samples get zero derivatives

  int in_dim() const { return layers.front(); }
  int out_dim() const { return layers.back(); }
  int layer_count() const { return static_cast<int>(layers.size()) - 1; }
  bool has_bias() const { return arch == Architecture::Mlp; }
};

inline void validate(const ModelSpec& spec) {
  if (spec.layers.size() < 2)
    throw ConfigError("model: layers needs at least [in, out]");
  if (spec.arch == Architecture::Linear && spec.layers.size() != 2)
    throw ConfigError("model: Linear takes exactly [in, out]");
  for (int s : spec.layers)
    if (s <= 0) throw ConfigError("model: layer sizes must be positive");
  if (spec.loss_clip && *spec.loss_clip <= 0.0)
    throw ConfigError("model: loss_clip must be positive");
}

inline int param_count(const ModelSpec& spec) {
  int n = 0;
  for (std::size_t l = 1; l < spec.layers.size(); ++l) {
    n += spec.layers[l] * spec.layers[l - 1];
    if (spec.has_bias()) n += spec.layers[l];
  }
  return n;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-layer views into a flat parameter vector. Layout per layer: the weight
// matrix row-major, then the bias (Mlp only).
struct LayerMaps {
  std::vector<Eigen::Map<const RowMat>> W;
  std::vector<Eigen::Map<const Eigen::VectorXd>> b;
  std::vector<int> w_offset;
  std::vector<int> b_offset;  // -1 when bias-free
};

inline LayerMaps map_params(const ModelSpec& spec, const Eigen::VectorXd& params) {
  if (params.size() != param_count(spec))
    throw ArgumentError("model: parameter vector has size " +
                        std::to_string(params.size()) + ", expected " +
                        std::to_string(param_count(spec)));
  LayerMaps maps;
  const double* base = params.data();
  int off = 0;
  for (int l = 1; l <= spec.layer_count(); ++l) {
    const int rows = spec.layers[l];
    const int cols = spec.layers[l - 1];
    maps.w_offset.push_back(off);
    maps.W.emplace_back(base + off, rows, cols);
    off += rows * cols;
    if (spec.has_bias()) {
      maps.b_offset.push_back(off);
      maps.b.emplace_back(base + off, rows);
      off += rows;
    } else {
      maps.b_offset.push_back(-1);
    }
  }
  return maps;
}

inline double activate(Activation act, double z) {
  return act == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative of the activation expressed through (z, a = act(z)).
inline double activate_prime(Activation act, double z, double a) {
  return act == Activation::Tanh ? 1.0 - a * a : (z > 0.0 ? 1.0 : 0.0);
}

// Second derivative; zero almost everywhere for relu.
inline double activate_second(Activation act, double /*z*/, double a) {
  return act == Activation::Tanh ? -2.0 * a * (1.0 - a * a) : 0.0;
}

struct SampleTrace {
  std::vector<Eigen::VectorXd> z;  // pre-activations per layer, z[0] unused
  std::vector<Eigen::VectorXd> a;  // a[0] = input, a[L] = network output
};

inline SampleTrace forward_sample(const ModelSpec& spec, const LayerMaps& maps,
                                  const Eigen::VectorXd& input) {
  const int L = spec.layer_count();
  SampleTrace tr;
  tr.z.resize(L + 1);
  tr.a.resize(L + 1);
  tr.a[0] = input;
  for (int l = 1; l <= L; ++l) {
    tr.z[l] = maps.W[l - 1] * tr.a[l - 1];
    if (spec.has_bias()) tr.z[l] += maps.b[l - 1];
    if (l < L) {
      tr.a[l] = tr.z[l].unaryExpr(
          [&](double v) { return activate(spec.activation, v); });
    } else {
      tr.a[l] = tr.z[l];
    }
  }
  return tr;
}

// Accumulates d<cotangent, f(input)>/dparams into grad.
inline void backward_sample(const ModelSpec& spec, const LayerMaps& maps,
                            const SampleTrace& tr, const Eigen::VectorXd& cotangent,
                            Eigen::VectorXd& grad) {
  const int L = spec.layer_count();
  Eigen::VectorXd e = cotangent;  // gradient w.r.t. z[l]
  for (int l = L; l >= 1; --l) {
    const int rows = spec.layers[l];
    const int cols = spec.layers[l - 1];
    Eigen::Map<RowMat> dW(grad.data() + maps.w_offset[l - 1], rows, cols);
    dW.noalias() += e * tr.a[l - 1].transpose();
    if (spec.has_bias())
      grad.segment(maps.b_offset[l - 1], rows) += e;
    if (l > 1) {
      Eigen::VectorXd pre = maps.W[l - 1].transpose() * e;
      e.resize(spec.layers[l - 1]);
      for (int i = 0; i < spec.layers[l - 1]; ++i)
        e[i] = activate_prime(spec.activation, tr.z[l - 1][i], tr.a[l - 1][i]) * pre[i];
    }
  }
}

inline int class_index(const ModelSpec& spec, const Eigen::MatrixXd& targets, int row) {
  if (targets.cols() != 1)
    throw ArgumentError("model: cross-entropy targets must be a single class-index column");
  const double raw = targets(row, 0);
  const double rounded = std::nearbyint(raw);
  if (std::abs(raw - rounded) > 1e-9 || rounded < 0.0 ||
      rounded >= static_cast<double>(spec.out_dim()))
    throw ArgumentError("model: class index " + std::to_string(raw) +
                        " out of range for " + std::to_string(spec.out_dim()) +
                        " outputs");
  return static_cast<int>(rounded);
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& f) {
  Eigen::VectorXd p = (f.array() - f.maxCoeff()).exp();
  return p / p.sum();
}

// Per-sample loss with optional first/second derivatives in the outputs.
// Returns the unclipped value; callers apply the clip rule.
inline double sample_loss(const ModelSpec& spec, const Eigen::VectorXd& f,
                          const Eigen::MatrixXd& targets, int row,
                          Eigen::VectorXd* dldf, Eigen::MatrixXd* hldff) {
  if (spec.loss == LossKind::Mse) {
    if (targets.cols() != spec.out_dim())
      throw ArgumentError("model: MSE targets must have out_dim columns");
    Eigen::VectorXd r = f - targets.row(row).transpose();
    if (dldf) *dldf = r;
    if (hldff) *hldff = Eigen::MatrixXd::Identity(f.size(), f.size());
    return 0.5 * r.squaredNorm();
  }
  const int c = class_index(spec, targets, row);
  const double fmax = f.maxCoeff();
  const double lse = fmax + std::log((f.array() - fmax).exp().sum());
  Eigen::VectorXd p = softmax(f);
  if (dldf) {
    *dldf = p;
    (*dldf)[c] -= 1.0;
  }
  if (hldff) *hldff = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
  return lse - f[c];
}

inline bool clipped(const ModelSpec& spec, double loss) {
  return spec.loss_clip && loss > *spec.loss_clip;
}

inline void check_inputs(const ModelSpec& spec, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != spec.in_dim())
    throw ArgumentError("model: inputs have " + std::to_string(inputs.cols()) +
                        " columns, expected " + std::to_string(spec.in_dim()));
}

inline void check_dataset(const ModelSpec& spec, const DataSet& data) {
  check_inputs(spec, data.inputs);
  if (data.targets.rows() != data.inputs.rows())
    throw ArgumentError("model: inputs/targets row mismatch");
  if (data.rows() < 1) throw ArgumentError("model: empty data set");
}

}  // namespace detail

inline Eigen::MatrixXd forward(const ModelSpec& spec, const Eigen::VectorXd& params,
                               const Eigen::MatrixXd& inputs) {
  validate(spec);
  detail::check_inputs(spec, inputs);
  const auto maps = detail::map_params(spec, params);
  Eigen::MatrixXd out(inputs.rows(), spec.out_dim());
  for (int i = 0; i < inputs.rows(); ++i) {
    const auto tr = detail::forward_sample(spec, maps, inputs.row(i).transpose());
    out.row(i) = tr.a.back().transpose();
  }
  return out;
}

// Final-layer features used by the metric-based variant; identical to the
// network output by construction.
inline Eigen::MatrixXd embed(const ModelSpec& spec, const Eigen::VectorXd& params,
                             const Eigen::MatrixXd& inputs) {
  return forward(spec, params, inputs);
}

inline double loss_value(const ModelSpec& spec, const Eigen::VectorXd& params,
                         const DataSet& data) {
  validate(spec);
  detail::check_dataset(spec, data);
  const auto maps = detail::map_params(spec, params);
  double total = 0.0;
  for (int i = 0; i < data.rows(); ++i) {
    const auto tr = detail::forward_sample(spec, maps, data.inputs.row(i).transpose());
    const double li = detail::sample_loss(spec, tr.a.back(), data.targets, i,
                                          nullptr, nullptr);
    total += detail::clipped(spec, li) ? *spec.loss_clip : li;
  }
  return total / data.rows();
}

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

inline LossGrad loss_and_grad(const ModelSpec& spec, const Eigen::VectorXd& params,
                              const DataSet& data) {
  validate(spec);
  detail::check_dataset(spec, data);
  const auto maps = detail::map_params(spec, params);
  LossGrad out;
  out.grad = Eigen::VectorXd::Zero(param_count(spec));
  for (int i = 0; i < data.rows(); ++i) {
    const auto tr = detail::forward_sample(spec, maps, data.inputs.row(i).transpose());
    Eigen::VectorXd dldf;
    const double li = detail::sample_loss(spec, tr.a.back(), data.targets, i,
                                          &dldf, nullptr);
    if (detail::clipped(spec, li)) {
      out.loss += *spec.loss_clip;  // capped sample: zero derivative
      continue;
    }
    out.loss += li;
    detail::backward_sample(spec, maps, tr, dldf, out.grad);
  }
  out.loss /= data.rows();
  out.grad /= data.rows();
  return out;
}

// Gradient of <cotangent, f(input)> with respect to the parameters.
inline Eigen::VectorXd param_vjp(const ModelSpec& spec, const Eigen::VectorXd& params,
                                 const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& cotangent) {
  validate(spec);
  if (input.size() != spec.in_dim() || cotangent.size() != spec.out_dim())
    throw ArgumentError("param_vjp: dimension mismatch");
  const auto maps = detail::map_params(spec, params);
  const auto tr = detail::forward_sample(spec, maps, input);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count(spec));
  detail::backward_sample(spec, maps, tr, cotangent, grad);
  return grad;
}

// Rows are d f_c / d params for one input.
inline Eigen::MatrixXd output_jacobian(const ModelSpec& spec,
                                       const Eigen::VectorXd& params,
                                       const Eigen::VectorXd& input) {
  validate(spec);
  const auto maps = detail::map_params(spec, params);
  const auto tr = detail::forward_sample(spec, maps, input);
  const int C = spec.out_dim();
  const int D = param_count(spec);
  Eigen::MatrixXd J(C, D);
  for (int c = 0; c < C; ++c) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(D);
    detail::backward_sample(spec, maps, tr, Eigen::VectorXd::Unit(C, c), grad);
    J.row(c) = grad.transpose();
  }
  return J;
}

namespace detail {

// Contraction J' H_sigma J for one sample, added into full and/or diag.
inline void accumulate_gn(const ModelSpec& spec, const Eigen::MatrixXd& J,
                          const Eigen::VectorXd& f, Eigen::MatrixXd* full,
                          Eigen::VectorXd* diag) {
  if (spec.loss == LossKind::Mse) {
    if (full) full->noalias() += J.transpose() * J;
    if (diag) *diag += J.array().square().colwise().sum().matrix().transpose();
    return;
  }
  const Eigen::VectorXd p = softmax(f);
  // H_sigma = diag(p) - p p'
  const Eigen::MatrixXd Jp = p.asDiagonal() * J;
  const Eigen::RowVectorXd mean = p.transpose() * J;
  if (full) {
    full->noalias() += J.transpose() * Jp;
    full->noalias() -= mean.transpose() * mean;
  }
  if (diag)
    *diag += ((J.array() * Jp.array()).colwise().sum() -
              mean.array().square())
                 .matrix()
                 .transpose();
}

}  // namespace detail

// Diagonal of the Gauss-Newton curvature (1/n) sum_i J_i' H_sigma_i J_i.
// Clipped samples contribute zero, matching the gradient rule.
inline Eigen::VectorXd gauss_newton_diag(const ModelSpec& spec,
                                         const Eigen::VectorXd& params,
                                         const DataSet& data) {
  validate(spec);
  detail::check_dataset(spec, data);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(param_count(spec));
  for (int i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd f =
        forward(spec, params, data.inputs.row(i)).row(0).transpose();
    const double li = detail::sample_loss(spec, f, data.targets, i, nullptr, nullptr);
    if (detail::clipped(spec, li)) continue;
    const Eigen::MatrixXd J =
        output_jacobian(spec, params, data.inputs.row(i).transpose());
    detail::accumulate_gn(spec, J, f, nullptr, &diag);
  }
  return diag / data.rows();
}

inline Eigen::MatrixXd gauss_newton_full(const ModelSpec& spec,
                                         const Eigen::VectorXd& params,
                                         const DataSet& data) {
  validate(spec);
  detail::check_dataset(spec, data);
  const int D = param_count(spec);
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd f =
        forward(spec, params, data.inputs.row(i)).row(0).transpose();
    const double li = detail::sample_loss(spec, f, data.targets, i, nullptr, nullptr);
    if (detail::clipped(spec, li)) continue;
    const Eigen::MatrixXd J =
        output_jacobian(spec, params, data.inputs.row(i).transpose());
    detail::accumulate_gn(spec, J, f, &full, nullptr);
  }
  return full / data.rows();
}

// Exact Hessian of the mean loss; defined for the Linear architecture, where
// the output is linear in the parameters and the Hessian has the Kronecker
// form (1/n) sum_i H_sigma_i (x) s_i s_i'.
inline Eigen::MatrixXd hessian_exact(const ModelSpec& spec,
                                     const Eigen::VectorXd& params,
                                     const DataSet& data) {
  validate(spec);
  if (spec.arch != Architecture::Linear)
    throw UnsupportedError("hessian_exact: only defined for the Linear architecture");
  detail::check_dataset(spec, data);
  const int in = spec.in_dim();
  const int out = spec.out_dim();
  const int D = param_count(spec);
  const auto maps = detail::map_params(spec, params);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd s = data.inputs.row(i).transpose();
    const Eigen::VectorXd f = maps.W[0] * s;
    Eigen::MatrixXd hs;
    const double li = detail::sample_loss(spec, f, data.targets, i, nullptr, &hs);
    if (detail::clipped(spec, li)) continue;
    const Eigen::MatrixXd outer = s * s.transpose();
    for (int c = 0; c < out; ++c)
      for (int k = 0; k < out; ++k)
        H.block(c * in, k * in, in, in) += hs(c, k) * outer;
  }
  return H / data.rows();
}

// Exact Hessian-vector product of the mean loss, computed with a tangent
// (forward-over-reverse) pass per sample; works for any architecture.
inline Eigen::VectorXd hvp(const ModelSpec& spec, const Eigen::VectorXd& params,
                           const DataSet& data, const Eigen::VectorXd& v) {
  validate(spec);
  detail::check_dataset(spec, data);
  const int D = param_count(spec);
  if (v.size() != D) throw ArgumentError("hvp: direction has wrong size");
  const auto maps = detail::map_params(spec, params);
  const auto vmaps = detail::map_params(spec, v);
  const int L = spec.layer_count();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(D);

  for (int i = 0; i < data.rows(); ++i) {
    // Tangent-augmented forward pass.
    auto tr = detail::forward_sample(spec, maps, data.inputs.row(i).transpose());
    std::vector<Eigen::VectorXd> rz(L + 1), ra(L + 1);
    ra[0] = Eigen::VectorXd::Zero(spec.in_dim());
    for (int l = 1; l <= L; ++l) {
      rz[l] = vmaps.W[l - 1] * tr.a[l - 1] + maps.W[l - 1] * ra[l - 1];
      if (spec.has_bias()) rz[l] += vmaps.b[l - 1];
      if (l < L) {
        ra[l].resize(spec.layers[l]);
        for (int j = 0; j < spec.layers[l]; ++j)
          ra[l][j] = detail::activate_prime(spec.activation, tr.z[l][j], tr.a[l][j]) *
                     rz[l][j];
      } else {
        ra[l] = rz[l];
      }
    }

    Eigen::VectorXd dldf;
    Eigen::MatrixXd hldff;
    const double li =
        detail::sample_loss(spec, tr.a.back(), data.targets, i, &dldf, &hldff);
    if (detail::clipped(spec, li)) continue;

    // Tangent-augmented backward pass.
    Eigen::VectorXd e = dldf;
    Eigen::VectorXd re = hldff * ra[L];
    for (int l = L; l >= 1; --l) {
      const int rows = spec.layers[l];
      const int cols = spec.layers[l - 1];
      Eigen::Map<detail::RowMat> rdW(out.data() + maps.w_offset[l - 1], rows, cols);
      rdW.noalias() += re * tr.a[l - 1].transpose();
      rdW.noalias() += e * ra[l - 1].transpose();
      if (spec.has_bias()) out.segment(maps.b_offset[l - 1], rows) += re;
      if (l > 1) {
        const Eigen::VectorXd pre = maps.W[l - 1].transpose() * e;
        const Eigen::VectorXd rpre =
            vmaps.W[l - 1].transpose() * e + maps.W[l - 1].transpose() * re;
        e.resize(cols);
        re.resize(cols);
        for (int j = 0; j < cols; ++j) {
          const double ap =
              detail::activate_prime(spec.activation, tr.z[l - 1][j], tr.a[l - 1][j]);
          const double as =
              detail::activate_second(spec.activation, tr.z[l - 1][j], tr.a[l - 1][j]);
          e[j] = ap * pre[j];
          re[j] = as * rz[l - 1][j] * pre[j] + ap * rpre[j];
        }
      }
    }
  }
  return out / data.rows();
}

// Fraction of query points whose argmax output matches the class index;
// NaN for regression losses where accuracy has no meaning.
inline double accuracy(const ModelSpec& spec, const Eigen::VectorXd& params,
                       const DataSet& data) {
  validate(spec);
  if (spec.loss != LossKind::CrossEntropy)
    return std::numeric_limits<double>::quiet_NaN();
  detail::check_dataset(spec, data);
  const Eigen::MatrixXd f = forward(spec, params, data.inputs);
  int hits = 0;
  for (int i = 0; i < data.rows(); ++i) {
    int argmax = 0;
    f.row(i).maxCoeff(&argmax);
    if (argmax == detail::class_index(spec, data.targets, i)) ++hits;
  }
  return static_cast<double>(hits) / data.rows();
}

// Weight entries ~ N(0, 1/fan_in), biases zero; the draw order (layer by
// layer, weights row-major, then bias) is part of the reproducibility contract.
inline Eigen::VectorXd init_params(const ModelSpec& spec, SeedStream& stream) {
  validate(spec);
  Eigen::VectorXd params(param_count(spec));
  int off = 0;
  for (int l = 1; l <= spec.layer_count(); ++l) {
    const int rows = spec.layers[l];
    const int cols = spec.layers[l - 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) params[off++] = scale * stream.normal();
    if (spec.has_bias())
      for (int r = 0; r < rows; ++r) params[off++] = 0.0;
  }
  return params;
}

}  // namespace tow
