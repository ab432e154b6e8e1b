#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tow/weighting.hpp"

namespace tow {

// Parsed key-value config: [section] headers, key = value lines, '#' comments.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace detail

inline ConfigMap parse_config_text(std::istream& in, const std::string& origin) {
  ConfigMap kv;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      kv[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value inside a section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) +
                                       ": empty key");
    kv[section][key] = value;
  }
  return kv;
}

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config_text(in, path);
}

// section.key=value
inline void apply_override(ConfigMap& kv, const std::string& spec) {
  const auto eq = spec.find('=');
  const auto dot = spec.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + spec);
  kv[detail::trim(spec.substr(0, dot))][detail::trim(spec.substr(dot + 1, eq - dot - 1))] =
      detail::trim(spec.substr(eq + 1));
}

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& kv) : kv_(kv) {
    for (const auto& [sec, entries] : kv_)
      for (const auto& [key, value] : entries) unused_.insert(sec + "." + key);
  }

  std::optional<std::string> raw(const std::string& sec, const std::string& key) {
    const auto s = kv_.find(sec);
    if (s == kv_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    unused_.erase(sec + "." + key);
    return k->second;
  }

  std::string str(const std::string& sec, const std::string& key,
                  const std::string& fallback) {
    return raw(sec, key).value_or(fallback);
  }

  double num(const std::string& sec, const std::string& key, double fallback) {
    const auto v = raw(sec, key);
    if (!v) return fallback;
    return parse_num(*v, sec + "." + key);
  }

  long long integer(const std::string& sec, const std::string& key,
                    long long fallback) {
    const auto v = raw(sec, key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const long long n = std::stoll(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return n;
    } catch (const std::exception&) {
      throw ConfigError(sec + "." + key + ": expected an integer, got '" + *v + "'");
    }
  }

  bool boolean(const std::string& sec, const std::string& key, bool fallback) {
    const auto v = raw(sec, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(sec + "." + key + ": expected a boolean, got '" + *v + "'");
  }

  std::vector<double> numbers(const std::string& sec, const std::string& key) {
    const auto v = raw(sec, key);
    if (!v) return {};
    return parse_num_list(*v, sec + "." + key);
  }

  double parse_num(const std::string& text, const std::string& where) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(where + ": expected a number, got '" + text + "'");
    }
  }

  std::vector<double> parse_num_list(const std::string& text,
                                     const std::string& where) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(parse_num(tok, where));
    return out;
  }

  // Unknown keys are config bugs, not silently ignored extras.
  void reject_unused() const {
    if (unused_.empty()) return;
    std::string msg = "unknown config keys:";
    for (const auto& k : unused_) msg += " " + k;
    throw ConfigError(msg);
  }

 private:
  const ConfigMap& kv_;
  std::set<std::string> unused_;
};

}  // namespace detail

struct ExperimentConfig {
  StrategyKind strategy = StrategyKind::Uniform;
  double kappa = 1.2;
  int iterations = 100;
  std::uint64_t seed = 1;
  int horizon = 5;     // T
  int batch_size = 5;  // M
  int eval_every = 10;
  int eval_tasks = 200;
  bool meta_update_last = false;  // apply x_T instead of x_{T+1}
  bool deterministic_timing = false;

  TaskEnvironment env;
  Eigen::VectorXd eval_family_probs;  // empty = uniform over families

  MetaProblem problem;

  DynKind dyn_kind = DynKind::Adam;
  double alpha = 1e-4;
  AdamParams adam;

  ActionPrior prior{/*mu_u=*/0.0, /*beta_u=*/10.0};
  bool mu_u_auto = true;  // mu_u tracks 1/M
  IlqrConfig ilqr;
  CurvatureMode curvature = CurvatureMode::Diag;
  bool random_nominal = false;

  std::string sweep_param;
  std::vector<double> sweep_values;
};

namespace detail {

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.iterations < 0) throw ConfigError("experiment.iterations must be >= 0");
  if (cfg.horizon < 1) throw ConfigError("experiment.horizon must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("experiment.batch_size must be >= 1");
  if (cfg.eval_every < 1) throw ConfigError("experiment.eval_every must be >= 1");
  if (cfg.eval_tasks < 2) throw ConfigError("experiment.eval_tasks must be >= 2");
  if (!(cfg.alpha > 0.0)) throw ConfigError("dynamics.alpha must be positive");
  validate(cfg.env);
  validate(cfg.problem);
  validate(cfg.prior);
  validate(cfg.ilqr);
  if (cfg.strategy == StrategyKind::Exploration ||
      cfg.strategy == StrategyKind::Exploitation)
    if (!(cfg.kappa > 1.0)) throw ConfigError("weighting.kappa must exceed 1");
  if (cfg.eval_family_probs.size() != 0 &&
      cfg.eval_family_probs.size() != family_count(cfg.env))
    throw ConfigError("env.eval_family_probs length must match the family count");

  // Model shape against the environment.
  const bool proto = cfg.problem.inner.variant == AdaptVariant::Prototypical;
  if (const auto* sine = std::get_if<SineRegression>(&cfg.env.kind)) {
    (void)sine;
    if (cfg.problem.model.in_dim() != 1 ||
        (!proto && cfg.problem.model.out_dim() != 1))
      throw ConfigError("model shape does not match the sine environment");
  } else {
    const auto& cluster = std::get<ClusterClassification>(cfg.env.kind);
    if (cfg.problem.model.in_dim() != cluster.input_dim())
      throw ConfigError("model input dim does not match the cluster environment");
    if (!proto && cfg.problem.model.out_dim() != cluster.n_way)
      throw ConfigError("model output dim does not match n_way");
  }
}

inline StrategyKind parse_strategy(const std::string& name) {
  if (name == "uniform") return StrategyKind::Uniform;
  if (name == "exploration") return StrategyKind::Exploration;
  if (name == "exploitation") return StrategyKind::Exploitation;
  if (name == "tow") return StrategyKind::Tow;
  throw ConfigError("unknown strategy: " + name);
}

// Builds the typed config. Unknown keys, malformed values, and cross-field
// violations all throw ConfigError.
inline ExperimentConfig build_config(const ConfigMap& kv) {
  detail::ConfigReader r(kv);
  ExperimentConfig cfg;

  cfg.strategy = parse_strategy(r.str("experiment", "strategy", "uniform"));
  cfg.iterations = static_cast<int>(r.integer("experiment", "iterations", 100));
  cfg.seed = static_cast<std::uint64_t>(r.integer("experiment", "seed", 1));
  cfg.horizon = static_cast<int>(r.integer("experiment", "horizon", 5));
  cfg.batch_size = static_cast<int>(r.integer("experiment", "batch_size", 5));
  cfg.eval_every = static_cast<int>(r.integer("experiment", "eval_every", 10));
  cfg.eval_tasks = static_cast<int>(r.integer("experiment", "eval_tasks", 200));
  const std::string update = r.str("experiment", "meta_update", "next");
  if (update != "next" && update != "last")
    throw ConfigError("experiment.meta_update must be next or last");
  cfg.meta_update_last = update == "last";
  cfg.deterministic_timing =
      r.boolean("experiment", "deterministic_timing", false);

  // Environment.
  const std::string env_kind = r.str("env", "kind", "sine");
  cfg.env.m_support = static_cast<int>(r.integer("env", "m_support", 5));
  cfg.env.m_query = static_cast<int>(r.integer("env", "m_query", 15));
  cfg.env.noise_std = r.num("env", "noise_std", 0.0);
  if (env_kind == "sine") {
    SineRegression sine;
    const auto range = r.numbers("env", "input_range");
    if (!range.empty()) {
      if (range.size() != 2) throw ConfigError("env.input_range needs 2 numbers");
      sine.input_min = range[0];
      sine.input_max = range[1];
    }
    const std::string fams =
        r.str("env", "families", "0.1 5.0 0.0 6.283185307179586");
    for (const auto& part : detail::split(fams, ';')) {
      const auto nums = r.parse_num_list(part, "env.families");
      if (nums.size() != 4)
        throw ConfigError("env.families: each family needs amp_lo amp_hi phase_lo phase_hi");
      sine.families.push_back(SineFamily{nums[0], nums[1], nums[2], nums[3]});
    }
    cfg.env.kind = sine;
  } else if (env_kind == "cluster") {
    ClusterClassification cluster;
    cluster.n_way = static_cast<int>(r.integer("env", "n_way", 2));
    cluster.task_jitter = r.num("env", "task_jitter", 0.5);
    const auto centers = r.raw("env", "centers");
    if (!centers) throw ConfigError("env.centers is required for cluster");
    for (const auto& family : detail::split(*centers, '|')) {
      std::vector<std::vector<double>> rows;
      for (const auto& row : detail::split(family, ';'))
        rows.push_back(r.parse_num_list(row, "env.centers"));
      if (rows.empty() || rows[0].empty())
        throw ConfigError("env.centers: empty family block");
      Eigen::MatrixXd m(rows.size(), rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
          throw ConfigError("env.centers: ragged rows");
        m.row(i) = detail::to_vector(rows[i]).transpose();
      }
      cluster.centers.push_back(std::move(m));
    }
    cfg.env.kind = cluster;
  } else {
    throw ConfigError("env.kind must be sine or cluster");
  }
  const auto probs = r.numbers("env", "family_probs");
  const int n_fam = family_count(cfg.env);
  cfg.env.family_probs = probs.empty()
                             ? Eigen::VectorXd::Constant(n_fam, 1.0 / n_fam)
                             : detail::to_vector(probs);
  const auto eval_probs_raw = r.raw("env", "eval_family_probs");
  if (eval_probs_raw && *eval_probs_raw != "uniform")
    cfg.eval_family_probs =
        detail::to_vector(r.parse_num_list(*eval_probs_raw, "env.eval_family_probs"));

  // Model.
  const std::string arch = r.str("model", "arch", "mlp");
  if (arch == "linear")
    cfg.problem.model.arch = Architecture::Linear;
  else if (arch == "mlp")
    cfg.problem.model.arch = Architecture::Mlp;
  else
    throw ConfigError("model.arch must be linear or mlp");
  const auto layers = r.numbers("model", "layers");
  if (layers.empty()) throw ConfigError("model.layers is required");
  cfg.problem.model.layers.clear();
  for (const double layer : layers) {
    if (layer < 1 || layer != static_cast<int>(layer))
      throw ConfigError("model.layers must be positive integers");
    cfg.problem.model.layers.push_back(static_cast<int>(layer));
  }
  const std::string act = r.str("model", "activation", "tanh");
  if (act == "tanh")
    cfg.problem.model.activation = Activation::Tanh;
  else if (act == "relu")
    cfg.problem.model.activation = Activation::Relu;
  else
    throw ConfigError("model.activation must be tanh or relu");
  const std::string loss = r.str("model", "loss", "mse");
  if (loss == "mse")
    cfg.problem.model.loss = LossKind::Mse;
  else if (loss == "cross_entropy")
    cfg.problem.model.loss = LossKind::CrossEntropy;
  else
    throw ConfigError("model.loss must be mse or cross_entropy");
  if (const auto clip = r.raw("model", "loss_clip"))
    cfg.problem.model.loss_clip = r.parse_num(*clip, "model.loss_clip");

  // Inner loop and meta-gradient order.
  cfg.problem.inner.gamma = r.num("inner", "gamma", 0.01);
  cfg.problem.inner.steps = static_cast<int>(r.integer("inner", "steps", 1));
  const std::string variant = r.str("inner", "variant", "gradient");
  if (variant == "gradient")
    cfg.problem.inner.variant = AdaptVariant::GradientAdaptation;
  else if (variant == "prototypical")
    cfg.problem.inner.variant = AdaptVariant::Prototypical;
  else
    throw ConfigError("inner.variant must be gradient or prototypical");
  const std::string order = r.str("inner", "order", "full");
  if (order == "first")
    cfg.problem.order = GradOrder::FirstOrder;
  else if (order == "full")
    cfg.problem.order = GradOrder::Full;
  else
    throw ConfigError("inner.order must be first or full");

  // Dynamics.
  const std::string dyn = r.str("dynamics", "kind", "adam");
  if (dyn == "sgd")
    cfg.dyn_kind = DynKind::Sgd;
  else if (dyn == "adam")
    cfg.dyn_kind = DynKind::Adam;
  else
    throw ConfigError("dynamics.kind must be sgd or adam");
  cfg.alpha = r.num("dynamics", "alpha", 1e-4);
  cfg.adam.beta1 = r.num("dynamics", "beta1", 0.9);
  cfg.adam.beta2 = r.num("dynamics", "beta2", 0.999);
  cfg.adam.eps = r.num("dynamics", "eps_adam", 1e-8);

  // Weighting.
  cfg.kappa = r.num("weighting", "kappa", 1.2);
  const std::string mu = r.str("weighting", "mu_u", "auto");
  if (mu == "auto") {
    cfg.mu_u_auto = true;
  } else {
    cfg.mu_u_auto = false;
    cfg.prior.mu_u = r.parse_num(mu, "weighting.mu_u");
  }
  cfg.prior.beta_u = r.num("weighting", "beta_u", 10.0);
  cfg.ilqr.n_ilqr = static_cast<int>(r.integer("weighting", "n_ilqr", 2));
  const std::string vmode = r.str("weighting", "v_mode", "diag");
  if (vmode == "diag")
    cfg.ilqr.full_v = false;
  else if (vmode == "full")
    cfg.ilqr.full_v = true;
  else
    throw ConfigError("weighting.v_mode must be diag or full");
  const std::string curv = r.str("weighting", "curvature", "diag");
  if (curv == "diag")
    cfg.curvature = CurvatureMode::Diag;
  else if (curv == "full")
    cfg.curvature = CurvatureMode::Full;
  else
    throw ConfigError("weighting.curvature must be diag or full");
  cfg.ilqr.eps_min = r.num("weighting", "eps_min", cfg.ilqr.eps_min);
  cfg.ilqr.max_ls_trials =
      static_cast<int>(r.integer("weighting", "max_ls_trials", 40));
  cfg.ilqr.accept_slack = r.num("weighting", "accept_slack", cfg.ilqr.accept_slack);
  cfg.random_nominal = r.boolean("weighting", "random_nominal", false);

  // Sweep.
  cfg.sweep_param = r.str("sweep", "param", "");
  cfg.sweep_values = r.numbers("sweep", "values");

  r.reject_unused();
  if (cfg.mu_u_auto) cfg.prior.mu_u = 1.0 / cfg.batch_size;
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  return build_config(parse_config_file(path));
}

}  // namespace tow
