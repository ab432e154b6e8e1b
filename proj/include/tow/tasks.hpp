#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "tow/errors.hpp"
#include "tow/rng.hpp"

namespace tow {

// One (inputs, targets) set. Regression targets are real vectors; for
// classification the class index sits in column 0.
struct DataSet {
  Eigen::MatrixXd inputs;   // n x in_dim
  Eigen::MatrixXd targets;  // n x target_dim

  int rows() const { return static_cast<int>(inputs.rows()); }
};

struct Task {
  DataSet support;
  DataSet query;
  int family = 0;
};

using TaskBatch = std::vector<Task>;

struct SineFamily {
  double amp_min = 0.1;
  double amp_max = 5.0;
  double phase_min = 0.0;
  double phase_max = 3.141592653589793;
};

struct SineRegression {
  std::vector<SineFamily> families;
  double input_min = -5.0;
  double input_max = 5.0;
};

struct ClusterClassification {
  int n_way = 2;
  std::vector<Eigen::MatrixXd> centers;  // per family: n_way x input_dim
  double task_jitter = 0.5;              // per-task center perturbation scale

  int input_dim() const {
    return centers.empty() ? 0 : static_cast<int>(centers[0].cols());
  }
};

struct TaskEnvironment {
  std::variant<SineRegression, ClusterClassification> kind;
  Eigen::VectorXd family_probs;
  int m_support = 5;
  int m_query = 15;
  double noise_std = 0.0;
};

inline int family_count(const TaskEnvironment& env) {
  if (const auto* s = std::get_if<SineRegression>(&env.kind))
    return static_cast<int>(s->families.size());
  return static_cast<int>(std::get<ClusterClassification>(env.kind).centers.size());
}

inline void validate(const TaskEnvironment& env) {
  const int fams = family_count(env);
  if (fams < 1) throw ConfigError("environment: needs at least one task family");
  if (env.family_probs.size() != fams)
    throw ConfigError("environment: family_probs size must match family count");
  if (env.family_probs.minCoeff() < 0.0)
    throw ConfigError("environment: family_probs must be nonnegative");
  if (std::abs(env.family_probs.sum() - 1.0) > 1e-9)
    throw ConfigError("environment: family_probs must sum to 1");
  if (env.m_support < 1 || env.m_query < 1)
    throw ConfigError("environment: m_support and m_query must be at least 1");
  if (env.noise_std < 0.0) throw ConfigError("environment: noise_std must be nonnegative");
  if (const auto* s = std::get_if<SineRegression>(&env.kind)) {
    if (!(s->input_min < s->input_max))
      throw ConfigError("environment: input_min must be below input_max");
    for (const auto& f : s->families) {
      if (!(f.amp_min <= f.amp_max) || !(f.phase_min <= f.phase_max))
        throw ConfigError("environment: malformed sine family range");
      if (f.amp_min <= 0.0) throw ConfigError("environment: amplitudes must be positive");
    }
  } else {
    const auto& c = std::get<ClusterClassification>(env.kind);
    if (c.n_way < 2) throw ConfigError("environment: n_way must be at least 2");
    if (c.task_jitter < 0.0) throw ConfigError("environment: task_jitter must be nonnegative");
    for (const auto& m : c.centers) {
      if (m.rows() != c.n_way || m.cols() != c.input_dim())
        throw ConfigError("environment: inconsistent cluster center shapes");
    }
    if (env.m_support % c.n_way != 0 || env.m_query % c.n_way != 0)
      throw ConfigError("environment: m_support and m_query must be divisible by n_way");
  }
}

// First m_support rows become the support set, the remaining m_query rows the
// query set. The row count must match exactly.
inline std::pair<DataSet, DataSet> split_support_query(const DataSet& all,
                                                       int m_support, int m_query) {
  if (m_support < 1 || m_query < 1)
    throw ArgumentError("split_support_query: set sizes must be positive");
  if (all.rows() != m_support + m_query)
    throw ArgumentError("split_support_query: got " + std::to_string(all.rows()) +
                        " rows, expected " + std::to_string(m_support + m_query));
  if (all.targets.rows() != all.inputs.rows())
    throw ArgumentError("split_support_query: inputs/targets row mismatch");
  DataSet support{all.inputs.topRows(m_support), all.targets.topRows(m_support)};
  DataSet query{all.inputs.bottomRows(m_query), all.targets.bottomRows(m_query)};
  return {std::move(support), std::move(query)};
}

inline Task sample_task(const TaskEnvironment& env, SeedStream& stream) {
  validate(env);
  const int fam = stream.categorical(env.family_probs);
  if (const auto* sine = std::get_if<SineRegression>(&env.kind)) {
    const SineFamily& f = sine->families[fam];
    const double amp = stream.uniform(f.amp_min, f.amp_max);
    const double phase = stream.uniform(f.phase_min, f.phase_max);
    const int n = env.m_support + env.m_query;
    DataSet all;
    all.inputs = stream.uniform_vector(n, sine->input_min, sine->input_max);
    all.targets.resize(n, 1);
    for (int i = 0; i < n; ++i)
      all.targets(i, 0) = amp * std::sin(all.inputs(i, 0) + phase) +
                          env.noise_std * stream.normal();
    auto [support, query] = split_support_query(all, env.m_support, env.m_query);
    return Task{std::move(support), std::move(query), fam};
  }

  const auto& cluster = std::get<ClusterClassification>(env.kind);
  const int dim = cluster.input_dim();
  const int per_class_s = env.m_support / cluster.n_way;
  const int per_class_q = env.m_query / cluster.n_way;
  Eigen::MatrixXd centers =
      cluster.centers[fam] + cluster.task_jitter * stream.normal_matrix(cluster.n_way, dim);
  Task task;
  task.family = fam;
  task.support.inputs.resize(env.m_support, dim);
  task.support.targets.resize(env.m_support, 1);
  task.query.inputs.resize(env.m_query, dim);
  task.query.targets.resize(env.m_query, 1);
  for (int k = 0; k < cluster.n_way; ++k) {
    DataSet block;
    block.inputs = stream.normal_matrix(per_class_s + per_class_q, dim) * env.noise_std;
    block.inputs.rowwise() += centers.row(k);
    block.targets = Eigen::MatrixXd::Constant(per_class_s + per_class_q, 1, k);
    auto [sup, qry] = split_support_query(block, per_class_s, per_class_q);
    task.support.inputs.middleRows(k * per_class_s, per_class_s) = sup.inputs;
    task.support.targets.middleRows(k * per_class_s, per_class_s) = sup.targets;
    task.query.inputs.middleRows(k * per_class_q, per_class_q) = qry.inputs;
    task.query.targets.middleRows(k * per_class_q, per_class_q) = qry.targets;
  }
  return task;
}

inline TaskBatch sample_task_batch(const TaskEnvironment& env, SeedStream& stream,
                                   int batch_size) {
  if (batch_size < 1) throw ArgumentError("sample_task_batch: batch_size must be positive");
  TaskBatch batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) batch.push_back(sample_task(env, stream));
  return batch;
}

}  // namespace tow
