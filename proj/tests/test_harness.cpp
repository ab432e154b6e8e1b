#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tow/train.hpp"

using namespace tow;

namespace {

std::string temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tow_harness_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

ExperimentConfig sine_config() {
  ExperimentConfig cfg;
  cfg.strategy = StrategyKind::Uniform;
  cfg.iterations = 3;
  cfg.seed = 11;
  cfg.horizon = 1;
  cfg.batch_size = 3;
  cfg.eval_every = 100;  // no evaluations unless a test lowers it
  cfg.eval_tasks = 16;
  cfg.deterministic_timing = true;

  SineRegression sine;
  sine.families.push_back(SineFamily{0.5, 2.0, 0.0, 3.14});
  cfg.env.kind = sine;
  cfg.env.family_probs = Eigen::VectorXd::Ones(1);
  cfg.env.m_support = 4;
  cfg.env.m_query = 6;

  cfg.problem.model.arch = Architecture::Mlp;
  cfg.problem.model.layers = {1, 8, 1};
  cfg.problem.model.activation = Activation::Tanh;
  cfg.problem.model.loss = LossKind::Mse;
  cfg.problem.inner.gamma = 0.01;
  cfg.problem.inner.steps = 1;
  cfg.problem.order = GradOrder::Full;

  cfg.dyn_kind = DynKind::Sgd;
  cfg.alpha = 1e-3;
  cfg.prior.mu_u = 1.0 / cfg.batch_size;
  cfg.prior.beta_u = 10.0;
  return cfg;
}

}  // namespace

TEST_CASE("uniform training equals a hand-rolled loop", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.iterations = 4;
  const TrainLog log = train(cfg);
  REQUIRE(log.records.size() == 4);
  REQUIRE_FALSE(log.aborted);

  // Replay: same named substreams, same sampling order, same updates.
  SeedStream master(cfg.seed);
  SeedStream init_stream = master.substream("init");
  SeedStream task_stream = master.substream("tasks");
  Eigen::VectorXd x = init_params(cfg.problem.model, init_stream);
  OptimizerDynamics dyn = make_sgd(cfg.alpha);
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<TaskBatch> batches;
    for (int t = 0; t < cfg.horizon; ++t)
      batches.push_back(sample_task_batch(cfg.env, task_stream, cfg.batch_size));
    for (int t = 0; t < cfg.horizon; ++t) {
      const BatchEval be = batch_eval(cfg.problem, x, batches[t]);
      x = apply_update(dyn, x, be.jac.transpose() *
                                   uniform_weights(cfg.batch_size));
    }
  }
  REQUIRE((log.final_params - x).cwiseAbs().maxCoeff() == 0.0);

  for (const auto& rec : log.records) {
    REQUIRE(rec.weights.size() == 1);
    REQUIRE((rec.weights[0] - uniform_weights(3)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(rec.delta_emp == 0.0);
    REQUIRE(std::isnan(rec.theta1));
    REQUIRE_FALSE(rec.evaluated);
    REQUIRE(std::isnan(rec.val_loss));
    REQUIRE(rec.wall_ms == 0.0);
  }
}

TEST_CASE("zero iterations return the untouched initialization", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.iterations = 0;
  const TrainLog log = train(cfg);
  REQUIRE(log.records.empty());
  REQUIRE_FALSE(log.aborted);

  SeedStream master(cfg.seed);
  SeedStream init_stream = master.substream("init");
  const Eigen::VectorXd x0 = init_params(cfg.problem.model, init_stream);
  REQUIRE((log.final_params - x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("repeated runs are bitwise identical", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.strategy = StrategyKind::Tow;
  cfg.dyn_kind = DynKind::Adam;
  cfg.alpha = 1e-3;
  cfg.horizon = 2;
  cfg.iterations = 3;
  cfg.eval_every = 2;
  const TrainLog a = train(cfg);
  const TrainLog b = train(cfg);
  REQUIRE((a.final_params - b.final_params).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    for (std::size_t t = 0; t < ra.weights.size(); ++t)
      REQUIRE((ra.weights[t] - rb.weights[t]).cwiseAbs().maxCoeff() == 0.0);
    if (ra.evaluated) REQUIRE(ra.val_loss == rb.val_loss);
  }
}

TEST_CASE("one iteration emits one row per task and step", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.iterations = 1;
  cfg.horizon = 5;
  cfg.batch_size = 5;
  cfg.prior.mu_u = 0.2;
  const TrainLog log = train(cfg);
  const std::string path = temp_file("rows.csv");
  emit_metrics(log, path);
  const auto rows = parse_metrics(path);
  REQUIRE(rows.size() == 25);
  int idx = 0;
  for (int t = 0; t < 5; ++t)
    for (int i = 0; i < 5; ++i) {
      REQUIRE(rows[idx].iteration == 1);
      REQUIRE(rows[idx].step == t);
      REQUIRE(rows[idx].task_index == i);
      REQUIRE(rows[idx].weight == 0.2);
      ++idx;
    }
}

TEST_CASE("metrics files round-trip bit-faithfully", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.iterations = 2;
  cfg.horizon = 2;
  cfg.eval_every = 2;
  cfg.eval_tasks = 8;
  const TrainLog log = train(cfg);
  const std::string path = temp_file("roundtrip.csv");
  emit_metrics(log, path);
  const auto rows = parse_metrics(path);
  REQUIRE(rows.size() == 2 * 2 * 3);

  // Unevaluated iterations carry NaN; evaluated ones round-trip exactly.
  REQUIRE(std::isnan(rows[0].val_loss));
  const auto& last = rows.back();
  REQUIRE(last.iteration == 2);
  REQUIRE(last.val_loss == log.records[1].val_loss);
  REQUIRE(rows[0].weight == 1.0 / 3.0);

  // Emitting a parsed-equal log twice produces identical bytes.
  const std::string again = temp_file("roundtrip2.csv");
  emit_metrics(log, again);
  std::ifstream f1(path), f2(again);
  const std::string s1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  REQUIRE(s1 == s2);
}

TEST_CASE("empty logs produce a header-only file", "[harness]") {
  const std::string path = temp_file("empty.csv");
  emit_metrics(TrainLog{}, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line ==
          "iteration,step,task_index,weight,val_loss,val_accuracy,theta1,"
          "epsilon_accepted,ls_trials,delta_emp,wall_ms");
  REQUIRE_FALSE(std::getline(in, line));
  REQUIRE(parse_metrics(path).empty());
}

TEST_CASE("confidence halves when the sample quadruples", "[harness]") {
  ExperimentConfig cfg = sine_config();
  SeedStream master(3);
  SeedStream init_stream = master.substream("init");
  const Eigen::VectorXd x = init_params(cfg.problem.model, init_stream);

  SeedStream s1 = master.substream("a");
  SeedStream s2 = master.substream("b");
  const EvalResult small = evaluate(cfg.problem, x, cfg.env, 400, s1);
  const EvalResult big = evaluate(cfg.problem, x, cfg.env, 1600, s2);
  REQUIRE(small.ci_loss > 0.0);
  const double ratio = small.ci_loss / big.ci_loss;
  REQUIRE(ratio > 1.8);
  REQUIRE(ratio < 2.2);

  SeedStream s3 = master.substream("c");
  REQUIRE_THROWS_AS(evaluate(cfg.problem, x, cfg.env, 1, s3), ArgumentError);
}

TEST_CASE("well-separated clusters score perfect accuracy", "[harness]") {
  MetaProblem p;
  p.model.arch = Architecture::Linear;
  p.model.layers = {2, 2};
  p.model.loss = LossKind::CrossEntropy;
  p.inner.variant = AdaptVariant::Prototypical;

  TaskEnvironment env;
  ClusterClassification cluster;
  cluster.n_way = 2;
  Eigen::MatrixXd centers(2, 2);
  centers << -5.0, 0.0, 5.0, 0.0;
  cluster.centers.push_back(centers);
  cluster.task_jitter = 0.0;
  env.kind = cluster;
  env.family_probs = Eigen::VectorXd::Ones(1);
  env.m_support = 4;
  env.m_query = 6;
  env.noise_std = 0.01;

  Eigen::VectorXd identity(4);
  identity << 1, 0, 0, 1;
  SeedStream stream(7);
  const EvalResult ev = evaluate(p, identity, env, 50, stream);
  REQUIRE(ev.mean_accuracy == 1.0);
  REQUIRE(ev.ci_accuracy == 0.0);
  REQUIRE(ev.mean_loss < 0.1);
}

TEST_CASE("a stronger prior keeps the weights nearer uniform", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.strategy = StrategyKind::Tow;
  cfg.dyn_kind = DynKind::Adam;
  cfg.alpha = 1e-3;
  cfg.horizon = 3;
  cfg.iterations = 10;
  cfg.problem.model.arch = Architecture::Mlp;

  double prev = std::numeric_limits<double>::infinity();
  for (const double beta : {1.0, 10.0, 100.0}) {
    cfg.prior.beta_u = beta;
    const TrainLog log = train(cfg);
    REQUIRE_FALSE(log.aborted);
    double mean_delta = 0.0;
    for (const auto& rec : log.records) mean_delta += rec.delta_emp;
    mean_delta /= log.records.size();
    REQUIRE(mean_delta <= prev + 1e-12);
    prev = mean_delta;
  }
}

TEST_CASE("numeric blowups abort cleanly with a message", "[harness]") {
  ExperimentConfig cfg = sine_config();
  cfg.problem.model.arch = Architecture::Linear;
  cfg.problem.model.layers = {1, 1};
  cfg.alpha = 1e12;  // divergent SGD on an unbounded linear model
  cfg.iterations = 50;
  const TrainLog log = train(cfg);
  REQUIRE(log.aborted);
  REQUIRE_FALSE(log.abort_message.empty());
  REQUIRE(log.records.size() < 50);
}

TEST_CASE("evaluation curves apply the smoothing only on file output", "[harness]") {
  TrainLog log;
  for (int i = 0; i < 3; ++i) {
    IterationRecord rec;
    rec.iteration = i + 1;
    rec.evaluated = true;
    rec.val_loss = 1.0 + i;
    rec.val_accuracy = 0.5;
    log.records.push_back(rec);
  }
  IterationRecord skipped;
  skipped.iteration = 4;
  log.records.push_back(skipped);

  const std::string path = temp_file("curve.csv");
  emit_curve(log, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "iteration,val_loss,val_loss_ema,val_accuracy,val_accuracy_ema");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string item;
    std::istringstream ls(line);
    while (std::getline(ls, item, ',')) f.push_back(item);
    rows.push_back(f);
  }
  REQUIRE(rows.size() == 3);  // the unevaluated record is skipped
  REQUIRE(std::stod(rows[0][2]) == 1.0);
  REQUIRE(std::stod(rows[1][2]) == Catch::Approx(1.1).epsilon(1e-12));
  REQUIRE(std::stod(rows[2][2]) == Catch::Approx(0.1 * 3.0 + 0.9 * 1.1).epsilon(1e-12));
}

TEST_CASE("parameter files reload bit-exactly", "[harness]") {
  SeedStream stream(17);
  const Eigen::VectorXd x = stream.normal_vector(10);
  const std::string path = temp_file("params.txt");
  save_params(x, path);
  const Eigen::VectorXd back = load_params(path);
  REQUIRE(back.size() == 10);
  REQUIRE((back - x).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(load_params(temp_file("missing.txt")), ConfigError);
}
