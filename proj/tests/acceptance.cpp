// Acceptance gate: each criterion exercises an end-to-end guarantee of the
// library and prints one pass/fail line. Exit status is nonzero if any
// selected criterion fails. Usage: tow_acceptance [1-9|all]
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tow/tow.hpp"

#include "oracle_utils.hpp"

using namespace tow;

namespace {

int g_failed = 0;

bool expect(bool ok, const std::string& detail) {
  if (!ok) {
    std::printf("    failed: %s\n", detail.c_str());
    ++g_failed;
  }
  return ok;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

double rel_inf(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).lpNorm<Eigen::Infinity>() /
         (1.0 + want.lpNorm<Eigen::Infinity>());
}

std::string repo_config(const char* name) {
  return std::string(TOW_SOURCE_DIR) + "/configs/" + name;
}

std::string scratch_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tow_acceptance";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Random LQ instance with PD action cost and a negative linear action term,
// which biases the optimum toward positive actions.
LqProblem random_lq(SeedStream& stream, int dim, int act, int horizon) {
  LqProblem lq;
  for (int t = 0; t < horizon; ++t) {
    lq.A.push_back(0.4 * stream.normal_matrix(dim, dim));
    lq.B.push_back(stream.normal_matrix(dim, act));
    const Eigen::MatrixXd sp = stream.normal_matrix(dim, dim);
    lq.P.push_back(0.5 * sp.transpose() * sp);
    const Eigen::MatrixXd sr = stream.normal_matrix(act, act);
    lq.R.push_back(0.25 * sr.transpose() * sr +
                   Eigen::MatrixXd::Identity(act, act));
    lq.p.push_back(0.1 * stream.normal_vector(dim));
    Eigen::VectorXd r(act);
    for (int i = 0; i < act; ++i) r[i] = -stream.uniform(0.2, 1.0);
    lq.r.push_back(r);
  }
  lq.x1 = 0.3 * stream.normal_vector(dim);
  return lq;
}

std::vector<Eigen::VectorXd> zero_actions(const LqProblem& lq) {
  return std::vector<Eigen::VectorXd>(lq.horizon(),
                                      Eigen::VectorXd::Zero(lq.action_dim()));
}

// --- criterion 1: one ilqr sweep reproduces the exact LQ optimum -----------

bool criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  SeedStream stream(101);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    LqProblem lq;
    LqSolution sol;
    int attempt = 0;
    for (;; ++attempt) {
      if (!expect(attempt < 400, "criterion 1: no interior-optimum problem found"))
        return false;
      const int dim = 1 + stream.uniform_int(6);
      const int act = 1 + stream.uniform_int(3);
      const int horizon = 1 + stream.uniform_int(8);
      lq = random_lq(stream, dim, act, horizon);
      sol = lqr_oracle(lq);
      double lo = std::numeric_limits<double>::infinity();
      for (const auto& u : sol.actions) lo = std::min(lo, u.minCoeff());
      if (lo >= 1e-6) break;
    }
    LqSystem sys(lq, zero_actions(lq));
    IlqrConfig cfg;
    cfg.n_ilqr = 1;
    cfg.full_v = true;
    const IlqrResult res = ilqr_solve(sys, cfg);
    expect(res.iters.size() == 1 && res.iters[0].accepted,
           "criterion 1: single sweep was not accepted");
    double err = 0.0;
    for (int t = 0; t < lq.horizon(); ++t)
      err = std::max(err, (res.trajectory.actions[t] - sol.actions[t])
                              .lpNorm<Eigen::Infinity>());
    worst = std::max(worst, err);
    expect(err < 1e-8, "criterion 1: action error " + std::to_string(err));
  }
  const double elapsed = seconds_since(t0);
  expect(elapsed < 1.0, "criterion 1: took " + std::to_string(elapsed) + " s");
  std::printf("    20 problems, worst action error %.2e, %.3f s\n", worst,
              elapsed);
  return true;
}

// --- criterion 2: analytic derivatives vs central finite differences -------

bool criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_grad = 0, worst_fu = 0, worst_cx = 0, worst_hvp = 0;
  for (int seed = 1; seed <= 10; ++seed) {
    SeedStream stream(200 + seed);
    TaskEnvironment env;
    SineRegression sine;
    sine.families.push_back(SineFamily{0.5, 2.0, 0.0, 3.14});
    env.kind = sine;
    env.family_probs = Eigen::VectorXd::Ones(1);
    env.m_support = 5;
    env.m_query = 10;

    MetaProblem p;
    p.model.arch = Architecture::Mlp;
    p.model.layers = {1, 6, 1};
    p.model.activation = Activation::Tanh;
    p.model.loss = LossKind::Mse;
    p.inner.gamma = 0.05;
    p.inner.steps = 1;
    p.order = GradOrder::Full;
    const int dim = param_count(p.model);

    const TaskBatch batch = sample_task_batch(env, stream, 3);
    const Eigen::VectorXd x = init_params(p.model, stream);

    // Meta-gradient through the adapted parameters.
    const auto vloss = [&](const Eigen::VectorXd& z) {
      return task_validation_loss(p, z, batch[0]);
    };
    worst_grad = std::max(
        worst_grad,
        rel_inf(task_meta_grad(p, x, batch[0]), oracle::fd_gradient(vloss, x)));

    // Action Jacobian of a warmed optimizer step.
    OptimizerDynamics dyn = make_adam(1e-3, dim);
    const Eigen::VectorXd u0 = stream.uniform_vector(3, 0.1, 0.6);
    for (int w = 0; w < 2; ++w) dyn_step(p, dyn, x, u0, batch);
    const LinearizedDynamics lin =
        linearize(p, dyn, x, u0, batch, CurvatureMode::Diag);
    for (int i = 0; i < 3; ++i) {
      const double h = 1e-6 * (1.0 + std::abs(u0[i]));
      OptimizerDynamics da = dyn, db = dyn;
      Eigen::VectorXd ua = u0, ub = u0;
      ua[i] += h;
      ub[i] -= h;
      const Eigen::VectorXd col =
          (dyn_step(p, da, x, ua, batch) - dyn_step(p, db, x, ub, batch)) /
          (2.0 * h);
      worst_fu = std::max(worst_fu, rel_inf(lin.fu.col(i), col));
    }

    // State gradient of the stage cost.
    const ActionPrior prior{0.3, 7.0};
    const QuadraticCost q =
        quadraticize(p, x, u0, batch, prior, CurvatureMode::Diag);
    const auto cfun = [&](const Eigen::VectorXd& z) {
      return cost(p, z, u0, batch, prior);
    };
    worst_cx = std::max(worst_cx, rel_inf(q.cx, oracle::fd_gradient(cfun, x)));

    // Hessian-vector product of the raw model loss.
    const Eigen::VectorXd v = stream.normal_vector(dim);
    const double h = 1e-5 / (1.0 + v.lpNorm<Eigen::Infinity>());
    const Eigen::VectorXd want_hv =
        (loss_and_grad(p.model, x + h * v, batch[0].query).grad -
         loss_and_grad(p.model, x - h * v, batch[0].query).grad) /
        (2.0 * h);
    worst_hvp = std::max(
        worst_hvp, rel_inf(hvp(p.model, x, batch[0].query, v), want_hv));
  }
  expect(worst_grad < 1e-4, "criterion 2: meta-gradient error");
  expect(worst_fu < 1e-4, "criterion 2: F_u column error");
  expect(worst_cx < 1e-4, "criterion 2: c_x error");
  expect(worst_hvp < 1e-4, "criterion 2: hvp error");
  const double elapsed = seconds_since(t0);
  expect(elapsed < 30.0, "criterion 2: took " + std::to_string(elapsed) + " s");
  std::printf(
      "    10 seeds, rel errors: grad %.2e, fu %.2e, cx %.2e, hvp %.2e, %.3f s\n",
      worst_grad, worst_fu, worst_cx, worst_hvp, elapsed);
  return true;
}

// --- criterion 3: GN diagonal is the exact Hessian diagonal (linear) -------

bool criterion3() {
  double worst = 0.0;
  for (int seed = 1; seed <= 10; ++seed) {
    SeedStream stream(300 + seed);

    ModelSpec mse;
    mse.arch = Architecture::Linear;
    mse.layers = {3, 2};
    mse.loss = LossKind::Mse;
    DataSet dm;
    dm.inputs = stream.normal_matrix(6, 3);
    dm.targets = stream.normal_matrix(6, 2);
    const Eigen::VectorXd xm = stream.normal_vector(param_count(mse));
    worst = std::max(
        worst, rel_inf(gauss_newton_diag(mse, xm, dm),
                       hessian_exact(mse, xm, dm).diagonal()));

    ModelSpec ce;
    ce.arch = Architecture::Linear;
    ce.layers = {3, 3};
    ce.loss = LossKind::CrossEntropy;
    DataSet dc;
    dc.inputs = stream.normal_matrix(6, 3);
    dc.targets.resize(6, 1);
    for (int i = 0; i < 6; ++i) dc.targets(i, 0) = stream.uniform_int(3);
    const Eigen::VectorXd xc = stream.normal_vector(param_count(ce));
    worst = std::max(
        worst, rel_inf(gauss_newton_diag(ce, xc, dc),
                       hessian_exact(ce, xc, dc).diagonal()));
  }
  expect(worst < 1e-8, "criterion 3: diagonal mismatch " + std::to_string(worst));
  std::printf("    10 seeds, worst rel error %.2e\n", worst);
  return true;
}

// --- criterion 4: reference run honors the solver's guarantees -------------

bool criterion4() {
  const ExperimentConfig cfg =
      build_config(parse_config_file(repo_config("reference_sine.ini")));
  const TrainLog log = train(cfg);
  expect(!log.aborted, "criterion 4: run aborted: " + log.abort_message);
  expect(log.records.size() == 200, "criterion 4: expected 200 iterations");

  int n_accepted = 0, n_active = 0;
  double min_weight = std::numeric_limits<double>::infinity();
  for (const auto& rec : log.records) {
    for (const auto& w : rec.weights)
      min_weight = std::min(min_weight, w.minCoeff());
    for (const auto& d : rec.ilqr_iters) {
      expect(d.theta1 <= 0.0, "criterion 4: positive theta1");
      if (d.max_qu_norm > 1e-8) {
        ++n_active;
        expect(d.theta1 < 0.0,
               "criterion 4: theta1 not negative at a non-stationary nominal");
      }
      if (d.accepted) {
        ++n_accepted;
        const double slack = 1e-9 * (1.0 + std::abs(d.j_nominal));
        expect(d.j_final - d.j_nominal <=
                   0.5 * d.eps_accepted * d.theta1 + slack,
               "criterion 4: accepted step misses half the predicted decrease");
      }
    }
  }
  expect(min_weight >= 0.0, "criterion 4: negative weight");
  expect(n_accepted > 0, "criterion 4: no accepted solver iterations");
  std::printf(
      "    200 iterations, %d accepted solver steps, %d active, min weight "
      "%.3e\n",
      n_accepted, n_active, min_weight);
  return true;
}

// --- criterion 5: a huge action prior collapses TOW onto uniform -----------

bool criterion5() {
  ConfigMap kv = parse_config_file(repo_config("reference_sine.ini"));
  apply_override(kv, "experiment.iterations=50");
  ConfigMap kv_tow = kv;
  apply_override(kv_tow, "weighting.beta_u=1e6");
  ConfigMap kv_uni = kv;
  apply_override(kv_uni, "experiment.strategy=uniform");

  const TrainLog tow_log = train(build_config(kv_tow));
  const TrainLog uni_log = train(build_config(kv_uni));
  expect(!tow_log.aborted && !uni_log.aborted, "criterion 5: a run aborted");
  expect(tow_log.records.size() == uni_log.records.size(),
         "criterion 5: iteration counts differ");

  double max_dev = 0.0, max_loss_gap = 0.0;
  for (std::size_t i = 0; i < tow_log.records.size(); ++i) {
    const auto& rt = tow_log.records[i];
    for (const auto& w : rt.weights)
      max_dev = std::max(
          max_dev, (w - uniform_weights(static_cast<int>(w.size())))
                       .lpNorm<Eigen::Infinity>());
    const auto& ru = uni_log.records[i];
    expect(rt.evaluated == ru.evaluated, "criterion 5: evaluation grids differ");
    if (rt.evaluated && ru.evaluated)
      max_loss_gap = std::max(max_loss_gap, std::abs(rt.val_loss - ru.val_loss));
  }
  expect(max_dev < 1e-3, "criterion 5: weights left uniform by " +
                             std::to_string(max_dev));
  expect(max_loss_gap <= 1e-6, "criterion 5: loss traces differ by " +
                                   std::to_string(max_loss_gap));
  std::printf("    max weight deviation %.2e, max val-loss gap %.2e\n", max_dev,
              max_loss_gap);
  return true;
}

// --- criterion 6: baselines against brute-force simplex search -------------

bool criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  Eigen::VectorXd ell2(2), ell3(3);
  ell2 << 2.0, 1.0;
  ell3 << 2.5, 1.0, 0.4;

  double worst = 0.0;
  for (const StrategyKind kind :
       {StrategyKind::Exploration, StrategyKind::Exploitation}) {
    const double sign = kind == StrategyKind::Exploration ? -1.0 : 1.0;
    for (const double kappa : {1.2, 5.0}) {
      const auto objective2 = [&](const Eigen::VectorXd& u) {
        return sign * u.dot(ell2) - (kappa - 1.0) * u.array().log().sum();
      };
      const Eigen::VectorXd grid2 = oracle::simplex_grid_search(objective2, 2);
      worst = std::max(worst, (baseline_weights(ell2, kind, kappa) - grid2)
                                  .lpNorm<Eigen::Infinity>());
      const Eigen::VectorXd grid3 =
          oracle::baseline_grid_search3(ell3, sign, kappa);
      worst = std::max(worst, (baseline_weights(ell3, kind, kappa) - grid3)
                                  .lpNorm<Eigen::Infinity>());
    }
    const Eigen::VectorXd flat = baseline_weights(ell3, kind, 1e6);
    expect((flat - uniform_weights(3)).lpNorm<Eigen::Infinity>() < 1e-3,
           "criterion 6: huge kappa did not flatten the weights");
  }
  expect(worst <= 2e-4,
         "criterion 6: grid disagreement " + std::to_string(worst));

  // Monotonicity: exploration orders weights with the losses, exploitation
  // against them.
  SeedStream stream(606);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + stream.uniform_int(3);
    Eigen::VectorXd ell(n);
    double acc = 0.3;
    for (int i = 0; i < n; ++i) {
      acc += 0.05 + stream.uniform(0.0, 1.0);
      ell[i] = acc;
    }
    const Eigen::VectorXd we = baseline_weights(ell, StrategyKind::Exploration, 1.5);
    const Eigen::VectorXd wx =
        baseline_weights(ell, StrategyKind::Exploitation, 1.5);
    for (int i = 0; i + 1 < n; ++i) {
      expect(we[i + 1] > we[i], "criterion 6: exploration order violated");
      expect(wx[i + 1] < wx[i], "criterion 6: exploitation order violated");
    }
  }
  std::printf("    worst grid gap %.2e, 100 orderings checked, %.3f s\n", worst,
              seconds_since(t0));
  return true;
}

// --- criterion 7: imbalanced clusters, TOW vs uniform ----------------------

struct FinalScores {
  double accuracy = 0.0;
  double loss = 0.0;
  double best_loss = 0.0;
};

FinalScores final_scores(const TrainLog& log) {
  FinalScores out;
  out.best_loss = std::numeric_limits<double>::infinity();
  for (const auto& rec : log.records)
    if (rec.evaluated) {
      out.accuracy = rec.val_accuracy;
      out.loss = rec.val_loss;
      out.best_loss = std::min(out.best_loss, rec.val_loss);
    }
  return out;
}

bool criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  const ConfigMap base = parse_config_file(repo_config("cluster_imbalanced.ini"));
  std::vector<double> acc_tow, acc_uni;
  int reached = 0;
  for (int seed = 1; seed <= 10; ++seed) {
    ConfigMap kv_tow = base;
    apply_override(kv_tow, "experiment.seed=" + std::to_string(seed));
    ConfigMap kv_uni = kv_tow;
    apply_override(kv_uni, "experiment.strategy=uniform");
    const TrainLog tow_log = train(build_config(kv_tow));
    const TrainLog uni_log = train(build_config(kv_uni));
    expect(!tow_log.aborted && !uni_log.aborted,
           "criterion 7: a run aborted at seed " + std::to_string(seed));
    const FinalScores st = final_scores(tow_log);
    const FinalScores su = final_scores(uni_log);
    acc_tow.push_back(st.accuracy);
    acc_uni.push_back(su.accuracy);
    if (st.best_loss <= su.loss) ++reached;
  }

  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (const double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double mt = mean(acc_tow), mu = mean(acc_uni);
  const double se = std::sqrt(var(acc_tow) / 10.0 + var(acc_uni) / 10.0);
  expect(mt >= mu - se, "criterion 7: balanced accuracy dropped below uniform");
  expect(reached >= 6, "criterion 7: reached uniform's final loss on only " +
                           std::to_string(reached) + "/10 seeds");
  const double elapsed = seconds_since(t0);
  expect(elapsed < 600.0, "criterion 7: took " + std::to_string(elapsed) + " s");
  std::printf(
      "    balanced accuracy tow %.4f vs uniform %.4f (pooled se %.4f), "
      "reached on %d/10 seeds, %.1f s\n",
      mt, mu, se, reached, elapsed);
  return true;
}

// --- criterion 8: byte-identical repeated runs ------------------------------

bool criterion8() {
  const ExperimentConfig cfg =
      build_config(parse_config_file(repo_config("reference_sine.ini")));
  const TrainLog a = train(cfg);
  const TrainLog b = train(cfg);
  expect((a.final_params - b.final_params).cwiseAbs().maxCoeff() == 0.0,
         "criterion 8: final parameters differ");

  const std::string ma = scratch_file("metrics_a.csv");
  const std::string mb = scratch_file("metrics_b.csv");
  const std::string ca = scratch_file("curve_a.csv");
  const std::string cb = scratch_file("curve_b.csv");
  emit_metrics(a, ma);
  emit_metrics(b, mb);
  emit_curve(a, ca);
  emit_curve(b, cb);
  expect(read_file(ma) == read_file(mb), "criterion 8: metrics files differ");
  expect(read_file(ca) == read_file(cb), "criterion 8: curve files differ");
  std::printf("    two full runs, metrics and curves byte-identical\n");
  return true;
}

// --- criterion 9: diagonal vs dense value recursion on decoupled LQ --------

bool criterion9() {
  SeedStream stream(909);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const int dim = 1 + stream.uniform_int(6);
    const int horizon = 1 + stream.uniform_int(6);
    LqProblem lq;
    for (int t = 0; t < horizon; ++t) {
      Eigen::VectorXd a(dim), b(dim), pd(dim), rd(dim), r(dim);
      for (int i = 0; i < dim; ++i) {
        a[i] = stream.uniform(-0.9, 0.9);
        b[i] = stream.uniform(0.5, 1.5);
        pd[i] = stream.uniform(0.1, 2.0);
        rd[i] = stream.uniform(0.5, 2.0);
        r[i] = -stream.uniform(0.2, 1.0);
      }
      lq.A.push_back(Eigen::MatrixXd(a.asDiagonal()));
      lq.B.push_back(Eigen::MatrixXd(b.asDiagonal()));
      lq.P.push_back(Eigen::MatrixXd(pd.asDiagonal()));
      lq.R.push_back(Eigen::MatrixXd(rd.asDiagonal()));
      lq.p.push_back(0.1 * stream.normal_vector(dim));
      lq.r.push_back(r);
    }
    lq.x1 = 0.3 * stream.normal_vector(dim);

    LqSystem sys_diag(lq, zero_actions(lq), /*diagonal_representation=*/true);
    LqSystem sys_full(lq, zero_actions(lq), /*diagonal_representation=*/false);
    IlqrConfig cfg_diag;
    cfg_diag.full_v = false;
    IlqrConfig cfg_full;
    cfg_full.full_v = true;

    // Same nominal, both backward passes: identical controllers.
    const Rollout nominal = sys_full.initial_rollout();
    const BackwardResult bd = ilqr_backward(sys_diag.expand(nominal), cfg_diag);
    const BackwardResult bf = ilqr_backward(sys_full.expand(nominal), cfg_full);
    for (int t = 0; t < horizon; ++t) {
      worst = std::max(worst, (bd.controllers[t].k - bf.controllers[t].k)
                                  .lpNorm<Eigen::Infinity>());
      worst = std::max(worst, (bd.controllers[t].K - bf.controllers[t].K)
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    worst = std::max(worst, std::abs(bd.theta1 - bf.theta1));

    // Full solves land on the same trajectory.
    const IlqrResult sd = ilqr_solve(sys_diag, cfg_diag);
    const IlqrResult sf = ilqr_solve(sys_full, cfg_full);
    for (int t = 0; t < horizon; ++t)
      worst = std::max(worst, (sd.trajectory.actions[t] - sf.trajectory.actions[t])
                                  .lpNorm<Eigen::Infinity>());
  }
  expect(worst <= 1e-10,
         "criterion 9: representations disagree by " + std::to_string(worst));
  std::printf("    20 decoupled problems, worst controller gap %.2e\n", worst);
  return true;
}

struct Criterion {
  int id;
  const char* label;
  bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "one ilqr sweep reproduces exact lqr solutions", criterion1},
    {2, "analytic derivatives match central finite differences", criterion2},
    {3, "gauss-newton diagonal equals the exact hessian diagonal", criterion3},
    {4, "reference run keeps acceptance and descent guarantees", criterion4},
    {5, "a large action prior collapses tow onto uniform", criterion5},
    {6, "baseline weights match brute-force simplex search", criterion6},
    {7, "tow holds balanced accuracy on imbalanced clusters", criterion7},
    {8, "repeated reference runs are byte-identical", criterion8},
    {9, "diagonal and dense value recursions agree when decoupled", criterion9},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1 && std::strcmp(argv[1], "all") != 0) only = std::atoi(argv[1]);
  if (argc > 1 && only == 0 && std::strcmp(argv[1], "all") != 0) {
    std::fprintf(stderr, "usage: %s [1-9|all]\n", argv[0]);
    return 2;
  }

  int failed_criteria = 0;
  for (const Criterion& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    const int before = g_failed;
    bool ok = false;
    try {
      ok = c.fn() && g_failed == before;
    } catch (const std::exception& e) {
      std::printf("    exception: %s\n", e.what());
      ok = false;
    }
    if (g_failed > before) ok = false;
    std::printf("criterion %d: %s - %s\n", c.id, ok ? "pass" : "FAIL", c.label);
    if (!ok) ++failed_criteria;
  }
  return failed_criteria == 0 ? 0 : 1;
}
