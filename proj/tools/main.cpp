#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nhmpc/config.hpp"
#include "nhmpc/control.hpp"
#include "nhmpc/datagen.hpp"
#include "nhmpc/neural.hpp"
#include "nhmpc/util.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using namespace nhmpc;

namespace {

// Exit codes: 0 success, 1 user error, 2 numerical failure.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

RunConfig load_config_checked(const std::string& path) {
  if (!fs::exists(path)) {
    throw UserError("config not found: " + path +
                    " (run `nhmpc init` to create one)");
  }
  try {
    return load_config(path);
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) {
    throw UserError("missing file: " + path + " (" + hint + ")");
  }
}

std::vector<DatasetRole> parse_roles(const std::string& arg) {
  if (arg == "all") {
    return {DatasetRole::state_sequence, DatasetRole::cost_pair,
            DatasetRole::imitation};
  }
  try {
    return {dataset_role_from_string(arg)};
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

DatasetRole role_for_kind(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::neural_horizon:
    case ControllerKind::neural_horizon_unbounded:
      return DatasetRole::state_sequence;
    case ControllerKind::cost_estimation: return DatasetRole::cost_pair;
    case ControllerKind::imitation: return DatasetRole::imitation;
    default:
      throw UserError(std::string("controller ") + to_string(kind) +
                      " does not use a model");
  }
}

bool kind_uses_model(ControllerKind kind) {
  return kind == ControllerKind::neural_horizon ||
         kind == ControllerKind::neural_horizon_unbounded ||
         kind == ControllerKind::cost_estimation ||
         kind == ControllerKind::imitation;
}

ControllerKind controller_for_role(DatasetRole role) {
  switch (role) {
    case DatasetRole::state_sequence: return ControllerKind::neural_horizon;
    case DatasetRole::cost_pair: return ControllerKind::cost_estimation;
    case DatasetRole::imitation: return ControllerKind::imitation;
  }
  throw std::logic_error("unreachable");
}

ControllerSpec make_spec(const RunConfig& cfg, ControllerKind kind,
                         const Model* model) {
  ControllerSpec spec;
  spec.kind = kind;
  spec.horizons = cfg.horizons;
  spec.weights = cfg.weights();
  spec.bounds = cfg.bounds;
  spec.model = cfg.model;
  spec.solver = cfg.solver;
  if (model != nullptr) spec.net = model->deployed();
  return spec;
}

std::string run_csv_path_seeded(const RunConfig& cfg, ControllerKind kind,
                                int seed_index) {
  std::string p = cfg.output_dir + "/run_" + to_string(kind);
  if (seed_index >= 0) p += "_seed" + std::to_string(seed_index);
  return p + ".csv";
}

// ---------------------------------------------------------------------------
// Training report: one row per trained seed, ranked selection flagged.
// ---------------------------------------------------------------------------

struct ReportRow {
  int seed_index = 0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double r2 = 0.0;
  double closed_loop_cost = 0.0;
  bool completed = false;
  int survived_steps = 0;  // ranking only, not persisted
  bool kept = false;
};

// Stabilized cheap runs first by cost; failed runs last by survival.
bool outranks(const ReportRow& a, const ReportRow& b) {
  if (a.completed != b.completed) return a.completed;
  if (a.completed) return a.closed_loop_cost < b.closed_loop_cost;
  return a.survived_steps > b.survived_steps;
}

void write_training_report(const std::string& path,
                           const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "seed_index,seed,train_loss,val_loss,r2,closed_loop_cost,completed,"
         "kept\n";
  for (const auto& r : rows) {
    out << r.seed_index << ',' << r.seed << ',' << format_double(r.train_loss)
        << ',' << format_double(r.val_loss) << ',' << format_double(r.r2)
        << ',' << format_double(r.closed_loop_cost) << ','
        << (r.completed ? 1 : 0) << ',' << (r.kept ? 1 : 0) << "\n";
  }
}

std::vector<ReportRow> read_training_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) {
      throw std::runtime_error("malformed training report row in " + path);
    }
    ReportRow r;
    r.seed_index = std::stoi(cells[0]);
    r.seed = std::stoull(cells[1]);
    r.train_loss = std::stod(cells[2]);
    r.val_loss = std::stod(cells[3]);
    r.r2 = std::stod(cells[4]);
    r.closed_loop_cost = std::stod(cells[5]);
    r.completed = cells[6] == "1";
    r.kept = cells[7] == "1";
    rows.push_back(r);
  }
  return rows;
}

std::vector<int> kept_seed_indices(const RunConfig& cfg, DatasetRole role) {
  const std::string report = training_report_path(cfg, role);
  require_file(report, std::string("run `nhmpc train --role ") +
                           to_string(role) + "` first");
  std::vector<ReportRow> rows = read_training_report(report);
  std::vector<ReportRow> kept;
  for (const auto& r : rows) {
    if (r.kept) kept.push_back(r);
  }
  if (kept.empty()) {
    throw UserError("no kept models in " + report + "; re-run `nhmpc train`");
  }
  std::sort(kept.begin(), kept.end(), outranks);
  std::vector<int> idx;
  for (const auto& r : kept) idx.push_back(r.seed_index);
  return idx;
}

Model load_model_checked(const RunConfig& cfg, DatasetRole role,
                         int seed_index) {
  const std::string path = model_path(cfg, role, seed_index);
  require_file(path, std::string("run `nhmpc train --role ") +
                         to_string(role) + "` first");
  return load_model(path);
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

int cmd_init(const std::string& path, bool force) {
  if (fs::exists(path) && !force) {
    throw UserError("refusing to overwrite " + path +
                    " (pass --force to replace it)");
  }
  save_config(default_config(), path);
  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

RawCorpus generate_with_stats(const RunConfig& cfg, int count,
                              std::uint64_t seed, const char* tag) {
  GenOptions opts;
  opts.model = cfg.model;
  opts.solver = cfg.solver;
  opts.min_retention = cfg.dataset.min_retention;
  int attempts = 0;
  opts.progress = [&attempts](int, int attempted) { attempts = attempted; };

  const auto t0 = Clock::now();
  RawCorpus corpus = generate_raw(count, cfg.tightening_margin, cfg.horizons,
                                  cfg.weights(), cfg.bounds, seed, opts);
  const double secs = seconds_since(t0);
  const double retention =
      attempts > 0 ? 100.0 * static_cast<double>(count) / attempts : 100.0;
  std::printf("%s: %d samples, retention %.1f%% (%d attempts), %.1f s\n", tag,
              count, retention, attempts, secs);
  return corpus;
}

int cmd_gen_data(const std::string& config_path, const std::string& role_arg,
                 int count_override, int validation_override,
                 bool export_csv) {
  RunConfig cfg = load_config_checked(config_path);
  if (count_override > 0) cfg.dataset.train_count = count_override;
  if (validation_override > 0) cfg.dataset.validation_count = validation_override;
  const std::vector<DatasetRole> roles = parse_roles(role_arg);
  fs::create_directories(cfg.output_dir);

  RawCorpus train_corpus = generate_with_stats(
      cfg, cfg.dataset.train_count, cfg.dataset.seed, "training corpus");
  save_raw(train_corpus, raw_corpus_path(cfg, false));
  RawCorpus val_corpus =
      generate_with_stats(cfg, cfg.dataset.validation_count,
                          cfg.dataset.validation_seed, "validation corpus");
  save_raw(val_corpus, raw_corpus_path(cfg, true));

  for (DatasetRole role : roles) {
    for (bool validation : {false, true}) {
      Dataset ds =
          derive_dataset(validation ? val_corpus : train_corpus, role);
      const std::string base = dataset_base_path(cfg, role, validation);
      save_dataset(ds, base);
      if (export_csv) export_dataset_csv(ds, base + ".csv");
      std::cout << "wrote " << base << ".bin (" << ds.features.rows()
                << " rows, labels " << ds.labels.cols() << "-wide)\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& role_arg,
              int seeds_override, int epochs_override) {
  RunConfig cfg = load_config_checked(config_path);
  if (seeds_override > 0) {
    cfg.training.seeds = seeds_override;
    cfg.training.keep_best = std::min(cfg.training.keep_best, seeds_override);
  }
  if (epochs_override > 0) cfg.training.epochs = epochs_override;
  const std::vector<DatasetRole> roles = parse_roles(role_arg);
  fs::create_directories(cfg.output_dir);

  for (DatasetRole role : roles) {
    const std::string train_base = dataset_base_path(cfg, role, false);
    const std::string val_base = dataset_base_path(cfg, role, true);
    require_file(train_base + ".bin", "run `nhmpc gen-data` first");
    require_file(val_base + ".bin", "run `nhmpc gen-data` first");
    const Dataset train_ds = load_dataset(train_base);
    const Dataset val_ds = load_dataset(val_base);

    TrainConfig tc;
    tc.epochs = cfg.training.epochs;
    tc.batch_size = cfg.training.batch_size;
    tc.learning_rate = cfg.training.learning_rate;
    tc.beta1 = cfg.training.beta1;
    tc.beta2 = cfg.training.beta2;
    tc.eps = cfg.training.epsilon;
    tc.validation_fraction = cfg.training.validation_fraction;
    const std::vector<int> layers = cfg.net_layers(role);

    std::vector<ReportRow> rows;
    for (int k = 0; k < cfg.training.seeds; ++k) {
      tc.rng_seed = cfg.training.seed_base + static_cast<std::uint64_t>(k);
      const auto t0 = Clock::now();
      TrainHistory history;
      Model model = train(train_ds.features, train_ds.labels, layers, tc,
                          &history);
      model.meta.role = to_string(role);
      save_model(model, model_path(cfg, role, k));

      ReportRow row;
      row.seed_index = k;
      row.seed = tc.rng_seed;
      row.train_loss = history.train_loss.back();
      row.val_loss = history.val_loss.back();
      row.r2 = r2_score(model, val_ds.features, val_ds.labels);

      Controller controller(
          make_spec(cfg, controller_for_role(role), &model));
      const ClosedLoopRecord rec =
          simulate(controller, cfg.x0(), cfg.scenario.duration);
      row.closed_loop_cost = closed_loop_cost(rec, cfg.weights());
      row.completed = rec.termination == Termination::completed;
      row.survived_steps = static_cast<int>(rec.inputs.size());
      rows.push_back(row);
      std::printf(
          "%s seed %d: val_loss=%.3e r2=%.4f closed-loop %s cost=%.2f "
          "(%.1f s)\n",
          to_string(role), k, row.val_loss, row.r2,
          row.completed ? "ok" : "failed", row.closed_loop_cost,
          seconds_since(t0));
    }

    std::vector<int> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&rows](int a, int b) { return outranks(rows[a], rows[b]); });
    for (int i = 0; i < cfg.training.keep_best &&
                    i < static_cast<int>(order.size());
         ++i) {
      rows[order[i]].kept = true;
    }
    write_training_report(training_report_path(cfg, role), rows);
    std::cout << "wrote " << training_report_path(cfg, role) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

void write_trajectory_svg(const std::string& path,
                          const ClosedLoopRecord& rec,
                          ControllerKind kind) {
  std::vector<svg::Series> series(4);
  const char* names[4] = {"x_cart [m]", "theta [rad]", "v [m/s]",
                          "omega [rad/s]"};
  const char* colors[4] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  for (int j = 0; j < 4; ++j) {
    series[j].label = names[j];
    series[j].color = colors[j];
    for (std::size_t i = 0; i < rec.states.size(); ++i) {
      series[j].x.push_back(static_cast<double>(i) * rec.dt);
      series[j].y.push_back(rec.states[i].vec()[j]);
    }
  }
  svg::write_line_plot(path, std::string("swing-up: ") + to_string(kind),
                       "t [s]", "state", series);
}

// Controllers meant to stabilize must do so for a clean exit; the rest are
// reported as observed.
bool must_stabilize(ControllerKind kind) {
  return kind == ControllerKind::baseline ||
         kind == ControllerKind::neural_horizon ||
         kind == ControllerKind::neural_horizon_unbounded;
}

int cmd_simulate(const std::string& config_path, const std::string& kind_arg,
                 const std::string& model_override, double duration_override,
                 const std::string& output_override,
                 const std::string& svg_path) {
  RunConfig cfg = load_config_checked(config_path);
  ControllerKind kind;
  try {
    kind = controller_kind_from_string(kind_arg);
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  if (duration_override >= 0.0) cfg.scenario.duration = duration_override;
  fs::create_directories(cfg.output_dir);

  std::optional<Model> model;
  if (kind_uses_model(kind)) {
    if (!model_override.empty()) {
      require_file(model_override, "pass an existing model file to --model");
      model = load_model(model_override);
    } else {
      const DatasetRole role = role_for_kind(kind);
      const int best = kept_seed_indices(cfg, role).front();
      model = load_model_checked(cfg, role, best);
      std::cout << "using " << model_path(cfg, role, best) << "\n";
    }
  }

  Controller controller(
      make_spec(cfg, kind, model ? &*model : nullptr));
  const ClosedLoopRecord rec =
      simulate(controller, cfg.x0(), cfg.scenario.duration);
  const Metrics m = compute_metrics(rec, cfg.weights(), cfg.bounds);

  const std::string out_path =
      output_override.empty() ? run_csv_path(cfg, kind) : output_override;
  write_run_csv(rec, out_path);
  std::cout << "wrote " << out_path << "\n";
  if (!svg_path.empty()) {
    write_trajectory_svg(svg_path, rec, kind);
    std::cout << "wrote " << svg_path << "\n";
  }

  std::printf(
      "%s: %s, %d steps, cost %.2f, final |x|_inf %.4f, solve %.2f +- %.2f "
      "ms, %zu bound violations\n",
      to_string(kind), m.completed ? "completed" : "infeasible", m.n_steps,
      m.trajectory_cost, m.final_state_norm, m.mean_solve_ms, m.std_solve_ms,
      m.violations.size());

  if (must_stabilize(kind) && (!m.completed || m.final_state_norm >= 0.05)) {
    std::cerr << "error: " << to_string(kind)
              << " failed to stabilize the swing-up\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct RunOutcome {
  Metrics metrics;
  ClosedLoopRecord record;
};

RunOutcome run_one(const RunConfig& cfg, ControllerKind kind,
                   const Model* model, int seed_index) {
  Controller controller(make_spec(cfg, kind, model));
  RunOutcome out;
  out.record = simulate(controller, cfg.x0(), cfg.scenario.duration);
  out.metrics = compute_metrics(out.record, cfg.weights(), cfg.bounds);
  write_run_csv(out.record, run_csv_path_seeded(cfg, kind, seed_index));
  return out;
}

struct SummaryRow {
  ControllerKind kind;
  std::vector<Metrics> runs;
};

void write_summary_csv(const std::string& path,
                       const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "controller,runs,completed,cost_min,cost_mean,cost_max,"
         "final_norm_max,mean_solve_ms,std_solve_ms,violations\n";
  for (const auto& row : rows) {
    int completed = 0;
    double cmin = kInfinity, cmax = -kInfinity, csum = 0.0, fmax = 0.0;
    double ms_sum = 0.0, ms_sq = 0.0;
    long n_ms = 0;
    std::size_t violations = 0;
    for (const auto& m : row.runs) {
      completed += m.completed ? 1 : 0;
      cmin = std::min(cmin, m.trajectory_cost);
      cmax = std::max(cmax, m.trajectory_cost);
      csum += m.trajectory_cost;
      fmax = std::max(fmax, m.final_state_norm);
      violations += m.violations.size();
      // Pool steps across runs for the timing moments.
      n_ms += m.n_steps == 0 ? 0 : m.n_steps;
      ms_sum += m.mean_solve_ms * m.n_steps;
      ms_sq += (m.std_solve_ms * m.std_solve_ms * std::max(0, m.n_steps - 1)) +
               m.mean_solve_ms * m.mean_solve_ms * m.n_steps;
    }
    const double n_runs = static_cast<double>(row.runs.size());
    const double mean_ms = n_ms > 0 ? ms_sum / n_ms : 0.0;
    const double var_ms =
        n_ms > 1 ? std::max(0.0, (ms_sq - n_ms * mean_ms * mean_ms) /
                                     (n_ms - 1))
                 : 0.0;
    out << to_string(row.kind) << ',' << row.runs.size() << ',' << completed
        << ',' << format_double(cmin) << ',' << format_double(csum / n_runs)
        << ',' << format_double(cmax) << ',' << format_double(fmax) << ','
        << format_double(mean_ms) << ',' << format_double(std::sqrt(var_ms))
        << ',' << violations << "\n";
  }
}

int cmd_benchmark(const std::string& config_path) {
  RunConfig cfg = load_config_checked(config_path);
  fs::create_directories(cfg.output_dir);

  const std::vector<int> state_seeds =
      kept_seed_indices(cfg, DatasetRole::state_sequence);
  const std::vector<int> cost_seeds =
      kept_seed_indices(cfg, DatasetRole::cost_pair);
  const std::vector<int> imitation_seeds =
      kept_seed_indices(cfg, DatasetRole::imitation);

  std::vector<SummaryRow> summary;
  bool acceptance_failure = false;

  {
    SummaryRow row{ControllerKind::baseline, {}};
    const RunOutcome out = run_one(cfg, ControllerKind::baseline, nullptr, -1);
    row.runs.push_back(out.metrics);
    if (!out.metrics.completed || out.metrics.final_state_norm >= 0.05) {
      acceptance_failure = true;
    }
    summary.push_back(row);
  }
  {
    SummaryRow row{ControllerKind::short_horizon, {}};
    row.runs.push_back(
        run_one(cfg, ControllerKind::short_horizon, nullptr, -1).metrics);
    summary.push_back(row);
  }
  for (ControllerKind kind : {ControllerKind::neural_horizon,
                              ControllerKind::neural_horizon_unbounded}) {
    SummaryRow row{kind, {}};
    for (int k : state_seeds) {
      const Model model =
          load_model_checked(cfg, DatasetRole::state_sequence, k);
      const RunOutcome out = run_one(cfg, kind, &model, k);
      row.runs.push_back(out.metrics);
      if (kind == ControllerKind::neural_horizon &&
          (!out.metrics.completed || out.metrics.final_state_norm >= 0.05)) {
        acceptance_failure = true;
      }
    }
    summary.push_back(row);
  }
  {
    SummaryRow row{ControllerKind::cost_estimation, {}};
    for (int k : cost_seeds) {
      const Model model = load_model_checked(cfg, DatasetRole::cost_pair, k);
      row.runs.push_back(
          run_one(cfg, ControllerKind::cost_estimation, &model, k).metrics);
    }
    summary.push_back(row);
  }
  {
    SummaryRow row{ControllerKind::imitation, {}};
    for (int k : imitation_seeds) {
      const Model model = load_model_checked(cfg, DatasetRole::imitation, k);
      row.runs.push_back(
          run_one(cfg, ControllerKind::imitation, &model, k).metrics);
    }
    summary.push_back(row);
  }

  write_summary_csv(benchmark_summary_path(cfg), summary);
  std::cout << "wrote " << benchmark_summary_path(cfg) << "\n";
  for (const auto& row : summary) {
    double cmean = 0.0, msmean = 0.0;
    int completed = 0;
    for (const auto& m : row.runs) {
      cmean += m.trajectory_cost / row.runs.size();
      msmean += m.mean_solve_ms / row.runs.size();
      completed += m.completed ? 1 : 0;
    }
    std::printf("  %-26s %zu run(s), %d completed, mean cost %.2f, mean "
                "solve %.2f ms\n",
                to_string(row.kind), row.runs.size(), completed, cmean,
                msmean);
  }

  // Every trained tail-cost net, kept or not: how often the cost-estimation
  // variant stabilizes, and at what cost.
  {
    std::ofstream deg(cfg.output_dir + "/cost_estimation_degradation.csv",
                      std::ios::trunc);
    deg << "seed_index,completed,cost,final_state_norm\n";
    int n_seeds = 0, n_ok = 0;
    for (int k = 0;; ++k) {
      const std::string path =
          model_path(cfg, DatasetRole::cost_pair, k);
      if (!fs::exists(path)) break;
      const Model model = load_model(path);
      Controller controller(
          make_spec(cfg, ControllerKind::cost_estimation, &model));
      const ClosedLoopRecord rec =
          simulate(controller, cfg.x0(), cfg.scenario.duration);
      const Metrics m = compute_metrics(rec, cfg.weights(), cfg.bounds);
      const bool ok = m.completed && m.final_state_norm < 0.05;
      deg << k << ',' << (ok ? 1 : 0) << ','
          << format_double(m.trajectory_cost) << ','
          << format_double(m.final_state_norm) << "\n";
      ++n_seeds;
      n_ok += ok ? 1 : 0;
    }
    std::printf(
        "  cost_estimation stabilized %d/%d seeds (see "
        "cost_estimation_degradation.csv)\n",
        n_ok, n_seeds);
  }

  {
    const auto t0 = Clock::now();
    ControllerSpec base = make_spec(cfg, ControllerKind::baseline, nullptr);
    const std::vector<SweepRow> sweep = horizon_sweep(
        cfg.sweep_horizons, cfg.x0(), cfg.scenario.duration, base);
    std::ofstream out(horizon_sweep_path(cfg), std::ios::trunc);
    out << "horizon,completed,cost,failure_time,final_state_norm\n";
    for (const auto& r : sweep) {
      out << r.horizon << ',' << (r.completed ? 1 : 0) << ','
          << format_double(r.cost) << ',' << format_double(r.failure_time)
          << ',' << format_double(r.final_state_norm) << "\n";
    }
    std::printf("wrote %s (%.1f s)\n", horizon_sweep_path(cfg).c_str(),
                seconds_since(t0));
  }

  if (acceptance_failure) {
    std::cerr << "error: a controller expected to stabilize did not\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"short-horizon MPC with learned horizon tails on a cart-pole"};
  app.require_subcommand(1);

  std::string config_path = "nhmpc.json";
  bool force = false;
  std::string role_arg = "all";
  std::string kind_arg;
  std::string model_override;
  std::string output_override;
  std::string svg_path;
  int count_override = -1;
  int validation_override = -1;
  int seeds_override = -1;
  int epochs_override = -1;
  double duration_override = -1.0;
  bool export_csv = false;

  std::function<int()> action;

  CLI::App* init = app.add_subcommand("init", "write a default config file");
  init->add_option("-c,--config", config_path, "config file to create")
      ->capture_default_str();
  init->add_flag("--force", force, "overwrite an existing file");
  init->callback([&] { action = [&] { return cmd_init(config_path, force); }; });

  CLI::App* gen = app.add_subcommand(
      "gen-data", "solve tightened programs and derive training datasets");
  gen->add_option("-c,--config", config_path, "config file")
      ->capture_default_str();
  gen->add_option("--role", role_arg, "all|state|cost|imitation")
      ->capture_default_str();
  gen->add_option("--count", count_override, "override training sample count");
  gen->add_option("--validation-count", validation_override,
                  "override validation sample count");
  gen->add_flag("--csv", export_csv, "also export datasets as CSV");
  gen->callback([&] {
    action = [&] {
      return cmd_gen_data(config_path, role_arg, count_override,
                          validation_override, export_csv);
    };
  });

  CLI::App* train_cmd =
      app.add_subcommand("train", "train networks and rank them closed-loop");
  train_cmd->add_option("-c,--config", config_path, "config file")
      ->capture_default_str();
  train_cmd->add_option("--role", role_arg, "all|state|cost|imitation")
      ->capture_default_str();
  train_cmd->add_option("--seeds", seeds_override,
                        "override number of seeds to train");
  train_cmd->add_option("--epochs", epochs_override, "override epoch count");
  train_cmd->callback([&] {
    action = [&] {
      return cmd_train(config_path, role_arg, seeds_override, epochs_override);
    };
  });

  CLI::App* sim = app.add_subcommand("simulate", "run one closed-loop scenario");
  sim->add_option("-c,--config", config_path, "config file")
      ->capture_default_str();
  sim->add_option("--controller", kind_arg,
                  "baseline|short|neural_horizon|neural_horizon_unbounded|"
                  "cost_estimation|imitation")
      ->required();
  sim->add_option("--model", model_override,
                  "model file (default: best kept seed)");
  sim->add_option("--duration", duration_override, "override run length [s]");
  sim->add_option("--output", output_override, "override run CSV path");
  sim->add_option("--svg", svg_path, "also write a trajectory plot");
  sim->callback([&] {
    action = [&] {
      return cmd_simulate(config_path, kind_arg, model_override,
                          duration_override, output_override, svg_path);
    };
  });

  CLI::App* bench = app.add_subcommand(
      "benchmark", "run all controllers plus the horizon sweep");
  bench->add_option("-c,--config", config_path, "config file")
      ->capture_default_str();
  bench->callback([&] { action = [&] { return cmd_benchmark(config_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    return action();
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
