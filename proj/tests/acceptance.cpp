// Acceptance harness for the whole toolkit. Runs the ten checks the project
// promises -- solver correctness, integrator order, gradient exactness,
// training quality, closed-loop stabilization, near-optimality, constraint
// satisfaction, speedup ordering, horizon-sweep shape, and the cost-estimation
// degradation report -- and prints exactly one verdict line per criterion on
// stdout. Everything else (progress, cache notes) goes to stderr; artifacts
// land in ./acceptance_out. The process exits nonzero iff a gated criterion
// fails; criterion 10 is report-only by design.
//
// The heavy artifacts (raw solve corpora, trained nets) are cached in
// acceptance_out and reused when their provenance matches the requested
// configuration exactly, so reruns only repeat the closed-loop portion.
// Setting NHMPC_FULL_SCALE=1 switches criterion 4 from the scaled corpus
// (5000/1000 samples) to the full-scale one (25000/5000, 2500 epochs).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nhmpc/config.hpp"
#include "nhmpc/control.hpp"
#include "nhmpc/datagen.hpp"
#include "nhmpc/dynamics.hpp"
#include "nhmpc/neural.hpp"
#include "nhmpc/nlp.hpp"
#include "nhmpc/ocp.hpp"
#include "nhmpc/rng.hpp"

namespace fs = std::filesystem;
using namespace nhmpc;

namespace {

// ---------------------------------------------------------------------------
// Pinned thresholds. Every number a criterion is judged against lives here.

constexpr double kQpMatchTol = 1e-8;        // criterion 1, vs KKT oracle
constexpr double kClosedLoopKktTol = 1e-6;  // criterion 1, converged solves
constexpr double kRk4RatioLo = 14.0;        // criterion 2
constexpr double kRk4RatioHi = 18.0;
constexpr double kGradRelTol = 1e-5;        // criterion 3
constexpr double kR2StateScaled = 0.98;     // criterion 4, scaled corpus
constexpr double kR2CostScaled = 0.97;
constexpr double kR2ImitationScaled = 0.93;
constexpr double kR2StateFull = 0.992 - 0.01;  // criterion 4, full corpus:
constexpr double kR2CostFull = 0.988 - 0.01;   // within 0.01 below the target
constexpr double kR2ImitationFull = 0.951 - 0.01;  // band's lower edge
constexpr double kStabilizedNorm = 0.05;    // criterion 5, success bound
constexpr double kFailedNorm = 0.5;         // criteria 5/9, failure bound
constexpr double kCostMatchRel = 0.05;      // criterion 6
constexpr double kAssumptionFraction = 0.99;  // criterion 7
constexpr double kSpeedupRatio = 0.6;       // criterion 8
constexpr double kImitationRatio = 0.01;
constexpr double kSweepCostSlack = 1.10;    // criterion 9

constexpr int kScaledTrain = 5000;
constexpr int kScaledValidation = 1000;
constexpr int kScaledEpochs = 400;
constexpr int kFullTrain = 25000;
constexpr int kFullValidation = 5000;
constexpr int kFullEpochs = 2500;

constexpr int kStateSeeds = 3;
constexpr int kStateKeep = 2;
constexpr int kCostSeeds = 10;
constexpr int kImitationSeeds = 2;

// ---------------------------------------------------------------------------
// Reporting plumbing.

struct Verdict {
  int id = 0;
  bool pass = false;
  bool gated = true;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

const auto t_start = std::chrono::steady_clock::now();

std::ostream& note() {
  const double s = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t_start)
                       .count();
  std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] "
            << std::defaultfloat;
  return std::cerr;
}

// ---------------------------------------------------------------------------
// Criterion 1: random convex QPs through the public solver vs a direct
// KKT-system solve, plus the KKT residuals of the converged closed-loop
// baseline solves (checked in main once that run exists).

struct QpSuiteResult {
  int n_cases = 0;
  int n_matched = 0;
  double max_err = 0.0;
  std::string first_failure;
};

QpSuiteResult run_qp_suite() {
  QpSuiteResult out;
  Rng rng(2024);
  const int n_cases = 24;
  for (int k = 0; k < n_cases; ++k) {
    const int n = 2 + static_cast<int>(rng.below(19));  // 2..20 variables
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
    const Eigen::MatrixXd H =
        (M.transpose() * M) / n +
        (0.5 + rng.uniform01()) * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = rng.uniform(-1.0, 1.0);

    const bool with_eq = (k % 3) != 0;  // a third of the suite unconstrained
    const int m = with_eq ? 1 + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(n / 2)))
                          : 0;
    Eigen::MatrixXd A(m, n);
    Eigen::VectorXd b(m);
    if (m > 0) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
      Eigen::VectorXd z0(n);
      for (int i = 0; i < n; ++i) z0[i] = rng.uniform(-1.0, 1.0);
      b = A * z0;
    }

    // Direct KKT oracle: [H A'; A 0] [z; y] = [-g; b].
    Eigen::VectorXd z_star(n);
    if (m == 0) {
      z_star = H.ldlt().solve(-g);
    } else {
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
      kkt.topLeftCorner(n, n) = H;
      kkt.topRightCorner(n, m) = A.transpose();
      kkt.bottomLeftCorner(m, n) = A;
      Eigen::VectorXd rhs(n + m);
      rhs.head(n) = -g;
      rhs.tail(m) = b;
      z_star = kkt.fullPivLu().solve(rhs).head(n);
    }

    NlpProblem p;
    p.n_vars = n;
    p.objective = [H, g](const Eigen::VectorXd& z) {
      return 0.5 * z.dot(H * z) + g.dot(z);
    };
    p.objective_grad = [H, g](const Eigen::VectorXd& z) {
      return Eigen::VectorXd(H * z + g);
    };
    if (m > 0) {
      p.n_eq = m;
      p.eq = [A, b](const Eigen::VectorXd& z) {
        return Eigen::VectorXd(A * z - b);
      };
      p.eq_jac = [A](const Eigen::VectorXd&) { return A; };
    }
    p.lower = Eigen::VectorXd::Constant(n, -kInfinity);
    p.upper = Eigen::VectorXd::Constant(n, kInfinity);
    p.hessian_seed = H;

    SolverConfig sc;
    sc.kkt_tol = 1e-9;
    sc.max_iter = 50;
    const SolverResult res = solve(p, sc, Eigen::VectorXd::Zero(n));

    const double err = (res.primal - z_star).lpNorm<Eigen::Infinity>() /
                       (1.0 + z_star.lpNorm<Eigen::Infinity>());
    out.n_cases++;
    out.max_err = std::max(out.max_err, err);
    if (res.status == SolveStatus::converged && err <= kQpMatchTol) {
      out.n_matched++;
    } else if (out.first_failure.empty()) {
      out.first_failure = "case " + std::to_string(k) + " (n=" +
                          std::to_string(n) + ", m=" + std::to_string(m) +
                          "): status=" + to_string(res.status) +
                          ", err=" + num(err, 3);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 2: RK4 error vs a fine-step reference must shrink by ~2^4 under
// step halving.

struct Rk4Result {
  bool pass = true;
  double min_ratio = 1e300;
  double max_ratio = 0.0;
};

Rk4Result run_rk4_order() {
  Rk4Result out;
  const ModelParams mp;
  Rng rng(7);
  const double dt = 0.05;
  for (int k = 0; k < 10; ++k) {
    const State x{rng.uniform(-1.0, 1.0), rng.uniform(-kPi, kPi),
                  rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const Input u{rng.uniform(-20.0, 20.0)};

    State ref = x;
    const IntegratorConfig fine{dt / 1024};
    for (int i = 0; i < 1024; ++i) ref = rk4_step(ref, u, fine, mp);

    const State one = rk4_step(x, u, IntegratorConfig{dt}, mp);
    State two = rk4_step(x, u, IntegratorConfig{dt / 2}, mp);
    two = rk4_step(two, u, IntegratorConfig{dt / 2}, mp);

    const double e1 = (one.vec() - ref.vec()).lpNorm<Eigen::Infinity>();
    const double e2 = (two.vec() - ref.vec()).lpNorm<Eigen::Infinity>();
    const double ratio = e1 / e2;
    out.min_ratio = std::min(out.min_ratio, ratio);
    out.max_ratio = std::max(out.max_ratio, ratio);
    if (!(e2 > 1e-14) || ratio < kRk4RatioLo || ratio > kRk4RatioHi) {
      out.pass = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 3: analytic parameter gradients and input Jacobians vs central
// finite differences on the three production shapes.

struct GradResult {
  bool pass = true;
  double worst_grad = 0.0;
  double worst_jac = 0.0;
};

GradResult run_gradient_suite() {
  GradResult out;
  const std::vector<std::vector<int>> shapes = {
      {4, 32, 32, 32, 88}, {4, 32, 32, 32, 2}, {4, 32, 32, 32, 1}};
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    Rng rng(31 + static_cast<std::uint64_t>(s));
    Mlp net = Mlp::glorot(shapes[s], rng);
    const int batch = 6;
    Eigen::MatrixXd X(net.n_in(), batch), Y(net.n_out(), batch);
    for (int i = 0; i < X.size(); ++i)
      X.data()[i] = rng.uniform(-1.5, 1.5);
    for (int i = 0; i < Y.size(); ++i)
      Y.data()[i] = rng.uniform(-1.0, 1.0);

    std::vector<Eigen::MatrixXd> gw;
    std::vector<Eigen::VectorXd> gb;
    mse_gradient(net, X, Y, gw, gb);

    double gnorm = 0.0, gdiff = 0.0;
    const double h = 1e-5;
    auto fd_probe = [&](double& param, double analytic) {
      const double orig = param;
      param = orig + h;
      const double lp = mse_loss(net, X, Y);
      param = orig - h;
      const double lm = mse_loss(net, X, Y);
      param = orig;
      const double fd = (lp - lm) / (2.0 * h);
      gnorm = std::max(gnorm, std::abs(analytic));
      gdiff = std::max(gdiff, std::abs(fd - analytic));
    };
    for (int j = 0; j < net.n_layers(); ++j) {
      for (int i = 0; i < net.weights[j].size(); ++i)
        fd_probe(net.weights[j].data()[i], gw[j].data()[i]);
      for (int i = 0; i < net.biases[j].size(); ++i)
        fd_probe(net.biases[j].data()[i], gb[j].data()[i]);
    }
    const double grad_rel = gdiff / std::max(gnorm, 1e-12);
    out.worst_grad = std::max(out.worst_grad, grad_rel);
    if (grad_rel > kGradRelTol) out.pass = false;

    for (int trial = 0; trial < 3; ++trial) {
      Eigen::VectorXd x(net.n_in());
      for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);
      const Eigen::MatrixXd J = input_jacobian(net, x);
      Eigen::MatrixXd Jfd(net.n_out(), net.n_in());
      for (int c = 0; c < net.n_in(); ++c) {
        Eigen::VectorXd xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        Jfd.col(c) = (forward(net, xp) - forward(net, xm)) / (2.0 * h);
      }
      const double jac_rel =
          (Jfd - J).cwiseAbs().maxCoeff() /
          std::max(J.cwiseAbs().maxCoeff(), 1e-12);
      out.worst_jac = std::max(out.worst_jac, jac_rel);
      if (jac_rel > kGradRelTol) out.pass = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared pipeline: corpora, datasets, trained nets. Cached under
// acceptance_out keyed by the exact provenance fields.

RawCorpus corpus_or_generate(const fs::path& file, int count,
                             const RunConfig& cfg, std::uint64_t seed) {
  const OcpWeights w = cfg.weights();
  if (fs::exists(file)) {
    try {
      RawCorpus c = load_raw(file.string());
      if (static_cast<int>(c.samples.size()) == count && c.seed == seed &&
          c.gamma == cfg.tightening_margin &&
          c.horizons.full_horizon == cfg.horizons.full_horizon &&
          c.horizons.short_horizon == cfg.horizons.short_horizon &&
          c.horizons.dt == cfg.horizons.dt &&
          weights_fingerprint(c.weights) == weights_fingerprint(w)) {
        note() << "reusing cached corpus " << file << " (" << count
               << " samples)\n";
        return c;
      }
      note() << "cached corpus " << file << " does not match, regenerating\n";
    } catch (const std::exception& e) {
      note() << "cached corpus " << file << " unreadable (" << e.what()
             << "), regenerating\n";
    }
  }
  GenOptions opts;
  opts.model = cfg.model;
  opts.solver = cfg.solver;
  opts.min_retention = cfg.dataset.min_retention;
  opts.progress = [&](int retained, int attempted) {
    if (attempted % 500 == 0) {
      note() << file.filename().string() << ": " << retained << "/" << count
             << " retained after " << attempted << " attempts\n";
    }
  };
  RawCorpus c = generate_raw(count, cfg.tightening_margin, cfg.horizons, w,
                             cfg.bounds, seed, opts);
  save_raw(c, file.string());
  note() << "generated " << file << " (" << c.samples.size() << " samples)\n";
  return c;
}

Model model_or_train(const fs::path& file, const Dataset& train_ds,
                     const std::vector<int>& layers, std::uint64_t rng_seed,
                     int epochs) {
  const std::uint64_t want_hash = dataset_fingerprint(train_ds);
  if (fs::exists(file)) {
    try {
      Model m = load_model(file.string());
      if (m.meta.dataset_hash == want_hash && m.meta.seed == rng_seed &&
          m.meta.epochs == epochs && m.net.layer_sizes == layers) {
        note() << "reusing cached model " << file << "\n";
        return m;
      }
      note() << "cached model " << file << " does not match, retraining\n";
    } catch (const std::exception& e) {
      note() << "cached model " << file << " unreadable (" << e.what()
             << "), retraining\n";
    }
  }
  TrainConfig tc;
  tc.epochs = epochs;
  tc.rng_seed = rng_seed;
  Model m = train(train_ds.features, train_ds.labels, layers, tc);
  m.meta.dataset_hash = want_hash;
  m.meta.role = to_string(train_ds.role);
  save_model(m, file.string());
  return m;
}

// ---------------------------------------------------------------------------
// Closed-loop helpers.

ControllerSpec make_spec(const RunConfig& cfg, ControllerKind kind) {
  ControllerSpec spec;
  spec.kind = kind;
  spec.horizons = cfg.horizons;
  spec.weights = cfg.weights();
  spec.bounds = cfg.bounds;
  spec.model = cfg.model;
  spec.solver = cfg.solver;
  return spec;
}

struct RunOutcome {
  ClosedLoopRecord record;
  Metrics metrics;
};

RunOutcome run_closed_loop(const RunConfig& cfg, const ControllerSpec& spec,
                           const fs::path& csv) {
  Controller controller(spec);
  RunOutcome out;
  out.record = simulate(controller, cfg.x0(), cfg.scenario.duration);
  out.metrics = compute_metrics(out.record, spec.weights, spec.bounds);
  write_run_csv(out.record, csv.string());
  return out;
}

bool stabilized(const Metrics& m) {
  return m.completed && m.final_state_norm < kStabilizedNorm;
}

bool sweep_success(const SweepRow& row) {
  return row.completed && row.final_state_norm < kFailedNorm;
}

}  // namespace

int main() {
  const fs::path out_dir = "acceptance_out";
  fs::create_directories(out_dir);

  const RunConfig cfg = default_config();
  const OcpWeights weights = cfg.weights();
  const bool full_scale = []() {
    const char* v = std::getenv("NHMPC_FULL_SCALE");
    return v != nullptr && std::string(v) == "1";
  }();

  const int n_train = full_scale ? kFullTrain : kScaledTrain;
  const int n_val = full_scale ? kFullValidation : kScaledValidation;
  const int epochs = full_scale ? kFullEpochs : kScaledEpochs;
  const double r2_state_min = full_scale ? kR2StateFull : kR2StateScaled;
  const double r2_cost_min = full_scale ? kR2CostFull : kR2CostScaled;
  const double r2_imitation_min =
      full_scale ? kR2ImitationFull : kR2ImitationScaled;

  note() << "acceptance harness, " << (full_scale ? "full-scale" : "scaled")
         << " corpus: " << n_train << "/" << n_val << " samples, " << epochs
         << " epochs\n";

  std::vector<Verdict> verdicts;

  // --- fast numerical criteria -------------------------------------------
  note() << "criterion 1: random QP suite\n";
  const QpSuiteResult qp = run_qp_suite();

  note() << "criterion 2: integrator order\n";
  const Rk4Result rk4 = run_rk4_order();
  verdicts.push_back(
      {2, rk4.pass,
       true,
       "halving ratios in [" + num(rk4.min_ratio) + ", " +
           num(rk4.max_ratio) + "] over 10 random states (need [" +
           num(kRk4RatioLo) + ", " + num(kRk4RatioHi) + "])"});

  note() << "criterion 3: gradient suite\n";
  const GradResult grad = run_gradient_suite();
  verdicts.push_back(
      {3, grad.pass,
       true,
       "worst parameter-gradient rel err " + num(grad.worst_grad, 3) +
           ", worst input-Jacobian rel err " + num(grad.worst_jac, 3) +
           " across shapes 4-32-32-32-{88,2,1} (need <= " +
           num(kGradRelTol) + ")"});

  // --- shared pipeline ----------------------------------------------------
  note() << "generating/loading corpora\n";
  const RawCorpus train_corpus = corpus_or_generate(
      out_dir / "raw_train.bin", n_train, cfg, cfg.dataset.seed);
  const RawCorpus val_corpus = corpus_or_generate(
      out_dir / "raw_validation.bin", n_val, cfg, cfg.dataset.validation_seed);

  const Dataset state_train =
      derive_dataset(train_corpus, DatasetRole::state_sequence);
  const Dataset state_val =
      derive_dataset(val_corpus, DatasetRole::state_sequence);
  const Dataset cost_train = derive_dataset(train_corpus, DatasetRole::cost_pair);
  const Dataset cost_val = derive_dataset(val_corpus, DatasetRole::cost_pair);
  const Dataset imit_train = derive_dataset(train_corpus, DatasetRole::imitation);
  const Dataset imit_val = derive_dataset(val_corpus, DatasetRole::imitation);

  std::ofstream report_csv(out_dir / "training_report.csv");
  report_csv << "role,seed_index,rng_seed,validation_r2\n";

  auto train_role = [&](const Dataset& train_ds, const Dataset& val_ds,
                        const std::string& tag, int n_seeds,
                        std::uint64_t seed_base, std::vector<Model>& models,
                        std::vector<double>& r2s) {
    const std::vector<int> layers = {
        static_cast<int>(train_ds.features.cols()), 32, 32, 32,
        static_cast<int>(train_ds.labels.cols())};
    for (int i = 0; i < n_seeds; ++i) {
      const std::uint64_t seed = seed_base + static_cast<std::uint64_t>(i);
      const fs::path file =
          out_dir / ("model_" + tag + "_seed" + std::to_string(i) + ".bin");
      note() << "training " << tag << " seed " << i << "\n";
      Model m = model_or_train(file, train_ds, layers, seed, epochs);
      const double r2 = r2_score(m, val_ds.features, val_ds.labels);
      report_csv << tag << "," << i << "," << seed << "," << num(r2, 6)
                 << "\n";
      note() << tag << " seed " << i << ": validation R^2 = " << num(r2, 5)
             << "\n";
      models.push_back(std::move(m));
      r2s.push_back(r2);
    }
  };

  std::vector<Model> state_models, cost_models, imit_models;
  std::vector<double> state_r2, cost_r2, imit_r2;
  train_role(state_train, state_val, "state", kStateSeeds, 100, state_models,
             state_r2);
  train_role(cost_train, cost_val, "cost", kCostSeeds, 200, cost_models,
             cost_r2);
  train_role(imit_train, imit_val, "imitation", kImitationSeeds, 300,
             imit_models, imit_r2);
  report_csv.close();

  auto rank_desc = [](const std::vector<double>& vals) {
    std::vector<int> order(vals.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return vals[a] > vals[b]; });
    return order;
  };
  const std::vector<int> state_order = rank_desc(state_r2);
  std::vector<int> kept_state(state_order.begin(),
                              state_order.begin() +
                                  std::min<std::size_t>(kStateKeep,
                                                        state_order.size()));
  std::sort(kept_state.begin(), kept_state.end());
  const int best_state = state_order.front();
  const int best_imitation = rank_desc(imit_r2).front();

  const double best_state_r2 = state_r2[best_state];
  const double best_cost_r2 = *std::max_element(cost_r2.begin(), cost_r2.end());
  const double best_imit_r2 = imit_r2[best_imitation];
  const bool c4_pass = best_state_r2 >= r2_state_min &&
                       best_cost_r2 >= r2_cost_min &&
                       best_imit_r2 >= r2_imitation_min;
  verdicts.push_back(
      {4, c4_pass,
       true,
       std::string(full_scale ? "full-scale" : "scaled") + " corpus " +
           std::to_string(n_train) + "/" + std::to_string(n_val) +
           ": best validation R^2 state " + num(best_state_r2, 4) +
           " (need >= " + num(r2_state_min) + "), cost " +
           num(best_cost_r2, 4) + " (>= " + num(r2_cost_min) +
           "), imitation " + num(best_imit_r2, 4) + " (>= " +
           num(r2_imitation_min) + ")"});

  // --- closed-loop runs ---------------------------------------------------
  note() << "closed-loop: baseline\n";
  const RunOutcome base =
      run_closed_loop(cfg, make_spec(cfg, ControllerKind::baseline),
                      out_dir / "run_baseline.csv");
  note() << "baseline: completed=" << base.metrics.completed
         << " cost=" << num(base.metrics.trajectory_cost, 6)
         << " final=" << num(base.metrics.final_state_norm, 4) << "\n";

  note() << "closed-loop: short\n";
  const RunOutcome short_run =
      run_closed_loop(cfg, make_spec(cfg, ControllerKind::short_horizon),
                      out_dir / "run_short.csv");

  std::vector<RunOutcome> nh_runs;
  for (const int k : kept_state) {
    note() << "closed-loop: neural_horizon (state seed " << k << ")\n";
    ControllerSpec spec = make_spec(cfg, ControllerKind::neural_horizon);
    spec.net = state_models[k].deployed();
    nh_runs.push_back(run_closed_loop(
        cfg, spec,
        out_dir / ("run_neural_horizon_seed" + std::to_string(k) + ".csv")));
    note() << "neural_horizon seed " << k
           << ": completed=" << nh_runs.back().metrics.completed
           << " cost=" << num(nh_runs.back().metrics.trajectory_cost, 6)
           << " final=" << num(nh_runs.back().metrics.final_state_norm, 4)
           << "\n";
  }

  note() << "closed-loop: neural_horizon_unbounded (state seed " << best_state
         << ")\n";
  ControllerSpec nhu_spec =
      make_spec(cfg, ControllerKind::neural_horizon_unbounded);
  nhu_spec.net = state_models[best_state].deployed();
  const RunOutcome nhu = run_closed_loop(
      cfg, nhu_spec, out_dir / "run_neural_horizon_unbounded.csv");

  note() << "closed-loop: imitation (seed " << best_imitation << ")\n";
  ControllerSpec imit_spec = make_spec(cfg, ControllerKind::imitation);
  imit_spec.net = imit_models[best_imitation].deployed();
  const RunOutcome imit =
      run_closed_loop(cfg, imit_spec, out_dir / "run_imitation.csv");

  std::vector<RunOutcome> cost_runs;
  {
    std::ofstream deg(out_dir / "cost_estimation_degradation.csv");
    deg << "seed_index,completed,cost,final_state_norm\n";
    for (int k = 0; k < static_cast<int>(cost_models.size()); ++k) {
      note() << "closed-loop: cost_estimation (seed " << k << ")\n";
      ControllerSpec spec = make_spec(cfg, ControllerKind::cost_estimation);
      spec.net = cost_models[k].deployed();
      cost_runs.push_back(run_closed_loop(
          cfg, spec,
          out_dir / ("run_cost_estimation_seed" + std::to_string(k) +
                     ".csv")));
      const Metrics& m = cost_runs.back().metrics;
      deg << k << "," << (m.completed ? 1 : 0) << ","
          << num(m.trajectory_cost, 10) << "," << num(m.final_state_norm, 10)
          << "\n";
    }
  }

  // The best kept neural-horizon run anchors the comparisons below.
  const auto best_nh_pos = static_cast<std::size_t>(
      std::find(kept_state.begin(), kept_state.end(), best_state) -
      kept_state.begin());
  const RunOutcome& nh_best =
      best_nh_pos < nh_runs.size() ? nh_runs[best_nh_pos] : nh_runs.front();

  // --- criterion 1 (now that the baseline run exists) ---------------------
  {
    int n_conv = 0;
    double max_kkt = 0.0;
    for (const StepDiagnostics& d : base.record.diagnostics) {
      if (d.status == SolveStatus::converged) {
        ++n_conv;
        max_kkt = std::max(max_kkt, d.kkt_residual);
      }
    }
    const bool qp_ok = qp.n_matched == qp.n_cases;
    const bool kkt_ok = n_conv > 0 && max_kkt <= kClosedLoopKktTol;
    std::string detail = std::to_string(qp.n_matched) + "/" +
                         std::to_string(qp.n_cases) +
                         " QPs match the KKT oracle (worst rel err " +
                         num(qp.max_err, 3) + ", need <= " +
                         num(kQpMatchTol) + ")";
    if (!qp.first_failure.empty()) detail += "; first miss: " + qp.first_failure;
    detail += "; " + std::to_string(n_conv) +
              " converged closed-loop solves, worst KKT residual " +
              num(max_kkt, 3) + " (need <= " + num(kClosedLoopKktTol) + ")";
    verdicts.push_back({1, qp_ok && kkt_ok, true, detail});
  }

  // --- criterion 5: stabilization ----------------------------------------
  {
    bool pass = stabilized(base.metrics);
    std::string detail =
        "baseline final |x|_inf = " + num(base.metrics.final_state_norm, 4) +
        (base.metrics.completed ? "" : " (run failed)") + " (need < " +
        num(kStabilizedNorm) + ")";
    for (std::size_t i = 0; i < nh_runs.size(); ++i) {
      const Metrics& m = nh_runs[i].metrics;
      pass = pass && stabilized(m);
      detail += "; neural_horizon seed " + std::to_string(kept_state[i]) +
                " final " + num(m.final_state_norm, 4) +
                (m.completed ? "" : " (run failed)");
    }
    const bool short_fails = !short_run.metrics.completed ||
                             short_run.metrics.final_state_norm > kFailedNorm;
    pass = pass && short_fails;
    detail += "; short ";
    if (!short_run.metrics.completed) {
      detail += "infeasible at t=" + num(short_run.record.failure_time, 3) +
                " s";
    } else {
      detail += "final " + num(short_run.metrics.final_state_norm, 4) +
                (short_fails ? " (> " + num(kFailedNorm) + " as required)"
                             : " -- unexpectedly stabilized");
    }
    verdicts.push_back({5, pass, true, detail});
  }

  // --- criterion 6: near-optimality --------------------------------------
  {
    bool pass = base.metrics.completed;
    std::string detail;
    for (std::size_t i = 0; i < nh_runs.size(); ++i) {
      const double rel = base.metrics.trajectory_cost > 0.0
                             ? std::abs(nh_runs[i].metrics.trajectory_cost -
                                        base.metrics.trajectory_cost) /
                                   base.metrics.trajectory_cost
                             : kInfinity;
      pass = pass && nh_runs[i].metrics.completed && rel <= kCostMatchRel;
      if (!detail.empty()) detail += "; ";
      detail += "seed " + std::to_string(kept_state[i]) + " cost " +
                num(nh_runs[i].metrics.trajectory_cost, 6) + " vs baseline " +
                num(base.metrics.trajectory_cost, 6) + " (" +
                num(100.0 * rel, 3) + "%, need <= " +
                num(100.0 * kCostMatchRel) + "%)";
    }
    verdicts.push_back({6, pass, true, detail});
  }

  // --- criterion 7: constraint satisfaction + assumption report -----------
  {
    std::size_t n_viol = base.metrics.violations.size() +
                         short_run.metrics.violations.size() +
                         nhu.metrics.violations.size();
    for (const RunOutcome& r : nh_runs) n_viol += r.metrics.violations.size();
    for (const RunOutcome& r : cost_runs)
      n_viol += r.metrics.violations.size();

    const AssumptionReport rep = assumption_check(
        state_models[best_state], state_val, cfg.tightening_margin,
        cfg.bounds);
    const bool pass = n_viol == 0 &&
                      rep.fraction_within >= kAssumptionFraction &&
                      rep.all_contained;
    verdicts.push_back(
        {7, pass,
         true,
         std::to_string(n_viol) +
             " bound violations across optimization-based runs (need 0); "
             "tail-prediction report on " +
             std::to_string(rep.n_points) + " validation points: " +
             num(100.0 * rep.fraction_within, 5) + "% within gamma=" +
             num(cfg.tightening_margin) + " (need >= " +
             num(100.0 * kAssumptionFraction) + "%), containment " +
             num(100.0 * rep.containment, 5) + "% (need 100%), max error " +
             num(rep.max_error, 4)});
  }

  // --- criterion 8: speedup ordering --------------------------------------
  {
    const double base_ms = base.metrics.mean_solve_ms;
    const double nh_ms = nh_best.metrics.mean_solve_ms;
    const double nhu_ms = nhu.metrics.mean_solve_ms;
    const double imit_ms = imit.metrics.mean_solve_ms;
    const double ratio = nh_ms / base_ms;
    const bool pass = ratio <= kSpeedupRatio && nhu_ms <= nh_ms &&
                      imit_ms <= kImitationRatio * nh_ms;
    verdicts.push_back(
        {8, pass,
         true,
         "mean solve ms: baseline " + num(base_ms, 4) + ", neural_horizon " +
             num(nh_ms, 4) + " (ratio " + num(ratio, 3) + ", need <= " +
             num(kSpeedupRatio) + "), without tail bounds " + num(nhu_ms, 4) +
             " (need <= with-bounds), imitation " + num(imit_ms, 4) +
             " (need <= " + num(kImitationRatio) + " x neural_horizon)"});
  }

  // --- criterion 9: horizon sweep -----------------------------------------
  note() << "horizon sweep over " << cfg.sweep_horizons.size()
         << " horizons\n";
  {
    const std::vector<SweepRow> rows = horizon_sweep(
        cfg.sweep_horizons, cfg.x0(), cfg.scenario.duration,
        make_spec(cfg, ControllerKind::baseline));
    std::ofstream sweep_csv(out_dir / "horizon_sweep.csv");
    sweep_csv << "horizon,completed,cost,failure_time,final_state_norm\n";
    for (const SweepRow& r : rows) {
      sweep_csv << r.horizon << "," << (r.completed ? 1 : 0) << ","
                << num(r.cost, 10) << "," << num(r.failure_time, 10) << ","
                << num(r.final_state_norm, 10) << "\n";
    }

    int n_star = -1;
    bool split_clean = true;
    for (const SweepRow& r : rows) {
      if (sweep_success(r)) {
        if (n_star < 0) n_star = r.horizon;
      } else if (n_star >= 0) {
        split_clean = false;  // failure after the first success
      }
    }
    bool costs_ok = true;
    std::optional<double> prev_cost;
    for (const SweepRow& r : rows) {
      if (n_star < 0 || r.horizon < n_star + 3 || !sweep_success(r)) continue;
      if (prev_cost && r.cost > kSweepCostSlack * *prev_cost)
        costs_ok = false;
      prev_cost = r.cost;
    }
    const bool pass = n_star > 0 && split_clean && costs_ok;
    std::string detail;
    if (n_star < 0) {
      detail = "no horizon in the sweep stabilized";
    } else {
      detail = "single success threshold N* = " + std::to_string(n_star) +
               " (success = completed with final |x|_inf < " +
               num(kFailedNorm) + ")";
      if (!split_clean) detail += ", but a longer horizon failed above N*";
      detail += "; costs for N >= N*+3 non-increasing within " +
                num(100.0 * (kSweepCostSlack - 1.0), 3) + "%: " +
                (costs_ok ? "yes" : "no");
    }
    verdicts.push_back({9, pass, true, detail});
  }

  // --- criterion 10: cost-estimation degradation (report only) -------------
  {
    int n_success = 0;
    double success_cost_sum = 0.0;
    for (const RunOutcome& r : cost_runs) {
      if (r.metrics.completed && r.metrics.final_state_norm < kFailedNorm) {
        ++n_success;
        success_cost_sum += r.metrics.trajectory_cost;
      }
    }
    std::string detail = std::to_string(n_success) + "/" +
                         std::to_string(cost_runs.size()) +
                         " cost-estimation seeds stabilized";
    if (n_success > 0) {
      const double mean_cost = success_cost_sum / n_success;
      detail += "; mean cost of stabilizing seeds " + num(mean_cost, 6) +
                " vs neural_horizon " +
                num(nh_best.metrics.trajectory_cost, 6);
      if (nh_best.metrics.trajectory_cost > 0.0) {
        detail += " (" +
                  num(100.0 * (mean_cost / nh_best.metrics.trajectory_cost -
                               1.0),
                      3) +
                  "%)";
      }
    }
    verdicts.push_back({10, true, false, detail});
  }

  // --- emit ----------------------------------------------------------------
  std::sort(verdicts.begin(), verdicts.end(),
            [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int gated_failures = 0;
  for (const Verdict& v : verdicts) {
    const char* status = v.gated ? (v.pass ? "PASS" : "FAIL") : "INFO";
    if (v.gated && !v.pass) ++gated_failures;
    std::cout << "criterion " << v.id << ": " << status << " -- " << v.detail
              << "\n";
  }
  std::cout << "acceptance: " << (verdicts.size() - 1 - gated_failures) << "/"
            << (verdicts.size() - 1) << " gated criteria passed\n";
  return gated_failures == 0 ? 0 : 1;
}
