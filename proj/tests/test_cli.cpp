#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nhmpc/config.hpp"

using namespace nhmpc;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Runs the installed binary with `args` from inside `dir`.
CliResult run_cli(const fs::path& dir, const std::string& args) {
  static int counter = 0;
  const fs::path log = dir / ("cli_log_" + std::to_string(counter++) + ".txt");
  const std::string cmd = "cd \"" + dir.string() + "\" && \"" NHMPC_CLI_PATH
                          "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = (raw != -1 && WIFEXITED(raw)) ? WEXITSTATUS(raw) : -1;
  r.output = slurp(log);
  return r;
}

// Fresh scratch directory, removed when the guard dies.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() /
          ("nhmpc_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

std::vector<std::string> non_empty_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// Small enough to run the whole pipeline in seconds while still exercising
// every command: a near-upright scenario with a 12/4 horizon split.
RunConfig miniature_config() {
  RunConfig cfg = default_config();
  cfg.horizons.full_horizon = 12;
  cfg.horizons.short_horizon = 4;
  cfg.dataset.train_count = 8;
  cfg.dataset.validation_count = 4;
  cfg.dataset.min_retention = 0.05;
  cfg.training.hidden_layers = {16, 16};
  cfg.training.epochs = 40;
  cfg.training.batch_size = 16;
  cfg.training.seeds = 1;
  cfg.training.keep_best = 1;
  cfg.scenario.x0 << 0.0, 0.25, 0.0, 0.0;
  cfg.scenario.duration = 1.5;
  cfg.sweep_horizons = {4, 6};
  cfg.output_dir = "out";
  return cfg;
}

}  // namespace

TEST_CASE("help and argument errors map to exit codes 0 and 1") {
  Scratch s("parse");

  const CliResult help = run_cli(s.dir, "--help");
  CHECK(help.code == 0);
  for (const char* verb :
       {"init", "gen-data", "train", "simulate", "benchmark"}) {
    CHECK(contains(help.output, verb));
  }

  CHECK(run_cli(s.dir, "").code == 1);
  CHECK(run_cli(s.dir, "frobnicate").code == 1);
  // simulate without its required --controller option
  CHECK(run_cli(s.dir, "simulate").code == 1);
}

TEST_CASE("init writes a loadable default config and respects --force") {
  Scratch s("init");

  const CliResult first = run_cli(s.dir, "init");
  CHECK(first.code == 0);
  CHECK(contains(first.output, "wrote"));
  REQUIRE(fs::exists(s.dir / "nhmpc.json"));

  const RunConfig loaded = load_config((s.dir / "nhmpc.json").string());
  CHECK_NOTHROW(loaded.validate());
  const RunConfig defaults = default_config();
  CHECK(loaded.horizons.full_horizon == defaults.horizons.full_horizon);
  CHECK(loaded.input_weight == defaults.input_weight);
  CHECK(loaded.slow_channel_weight == defaults.slow_channel_weight);
  CHECK((loaded.state_weight_diag - defaults.state_weight_diag).norm() == 0.0);

  const CliResult second = run_cli(s.dir, "init");
  CHECK(second.code == 1);
  CHECK(contains(second.output, "refusing"));
  CHECK(run_cli(s.dir, "init --force").code == 0);

  // A custom path via -c works too.
  CHECK(run_cli(s.dir, "init -c other.json").code == 0);
  CHECK(fs::exists(s.dir / "other.json"));
}

TEST_CASE("missing inputs are reported as user errors with exit code 1") {
  Scratch s("usererr");

  const CliResult gen = run_cli(s.dir, "gen-data");
  CHECK(gen.code == 1);
  CHECK(contains(gen.output, "config not found"));

  REQUIRE(run_cli(s.dir, "init").code == 0);

  const CliResult train = run_cli(s.dir, "train");
  CHECK(train.code == 1);
  CHECK(contains(train.output, "gen-data"));

  const CliResult sim = run_cli(s.dir, "simulate --controller warp_drive");
  CHECK(sim.code == 1);

  const CliResult model =
      run_cli(s.dir, "simulate --controller imitation --model missing.bin");
  CHECK(model.code == 1);
  CHECK(contains(model.output, "missing.bin"));

  // No trained model on disk yet for a model-backed controller.
  const CliResult untrained =
      run_cli(s.dir, "simulate --controller neural_horizon");
  CHECK(untrained.code == 1);
  CHECK(contains(untrained.output, "train"));

  const CliResult bench = run_cli(s.dir, "benchmark");
  CHECK(bench.code == 1);

  const CliResult badrole = run_cli(s.dir, "gen-data --role everything");
  CHECK(badrole.code == 1);
}

TEST_CASE("a stabilizing controller that fails reports exit code 2") {
  Scratch s("exit2");
  REQUIRE(run_cli(s.dir, "init").code == 0);

  // 0.2 s is nowhere near enough to swing up, so baseline must end far from
  // the origin; the run CSV must still be written before the verdict.
  const CliResult r =
      run_cli(s.dir, "simulate --controller baseline --duration 0.2");
  CHECK(r.code == 2);
  CHECK(contains(r.output, "failed to stabilize"));

  const fs::path csv = s.dir / "out" / "run_baseline.csv";
  REQUIRE(fs::exists(csv));
  const std::string text = slurp(csv);
  CHECK(text.rfind("t,x_cart,theta,v,omega,F,stage_cost,solve_ms,status", 0) ==
        0);
  // 0.2 s at dt = 0.02 -> header, 10 input rows, and the terminal state row.
  CHECK(non_empty_lines(text).size() == 12);
}

TEST_CASE("the full pipeline runs end to end on a miniature problem") {
  Scratch s("pipeline");
  save_config(miniature_config(), (s.dir / "nhmpc.json").string());
  const RunConfig cfg = load_config((s.dir / "nhmpc.json").string());

  SUBCASE("gen-data honors the role filter") {
    const CliResult gen =
        run_cli(s.dir, "gen-data --role state --count 2 --validation-count 1");
    REQUIRE(gen.code == 0);
    CHECK(fs::exists(s.dir / "out" / "dataset_state.bin"));
    CHECK(!fs::exists(s.dir / "out" / "dataset_cost.bin"));
    CHECK(!fs::exists(s.dir / "out" / "dataset_imitation.bin"));
  }

  SUBCASE("gen-data, train, simulate, benchmark chain together") {
    const CliResult gen = run_cli(s.dir, "gen-data --csv");
    REQUIRE(gen.code == 0);
    CHECK(contains(gen.output, "training corpus"));
    CHECK(contains(gen.output, "validation corpus"));
    for (const char* base :
         {"dataset_state", "dataset_cost", "dataset_imitation"}) {
      CHECK(fs::exists(s.dir / "out" / (std::string(base) + ".bin")));
      CHECK(fs::exists(s.dir / "out" / (std::string(base) + ".json")));
      CHECK(fs::exists(s.dir / "out" / (std::string(base) + ".csv")));
      CHECK(fs::exists(s.dir / "out" /
                       (std::string(base) + "_validation.bin")));
    }
    CHECK(fs::exists(s.dir / "out" / "raw_train.bin"));
    CHECK(fs::exists(s.dir / "out" / "raw_validation.bin"));

    const CliResult train = run_cli(s.dir, "train");
    REQUIRE(train.code == 0);
    for (const char* role : {"state", "cost", "imitation"}) {
      const fs::path report =
          s.dir / "out" / ("training_report_" + std::string(role) + ".csv");
      REQUIRE(fs::exists(report));
      const std::vector<std::string> lines = non_empty_lines(slurp(report));
      REQUIRE(lines.size() == 2);  // header + one seed
      CHECK(lines[0] ==
            "seed_index,seed,train_loss,val_loss,r2,closed_loop_cost,"
            "completed,kept");
      CHECK(lines[1].back() == '1');  // the only seed is kept
      CHECK(fs::exists(s.dir / "out" /
                       ("model_" + std::string(role) + "_seed0.bin")));
    }

    // short is not required to stabilize, so this exits cleanly.
    const CliResult sim =
        run_cli(s.dir, "simulate --controller short --output short.csv");
    REQUIRE(sim.code == 0);
    CHECK(fs::exists(s.dir / "short.csv"));

    // Model-backed controller resolves its net from the training report.
    const CliResult imit = run_cli(s.dir, "simulate --controller imitation");
    REQUIRE(imit.code == 0);
    CHECK(contains(imit.output, "model_imitation_seed0.bin"));
    CHECK(fs::exists(s.dir / "out" / "run_imitation.csv"));

    // The SVG plot option produces a file alongside the CSV.
    const CliResult svg = run_cli(
        s.dir, "simulate --controller short --svg plot.svg --duration 0.3");
    REQUIRE(svg.code == 0);
    CHECK(fs::exists(s.dir / "plot.svg"));
    CHECK(contains(slurp(s.dir / "plot.svg"), "<svg"));

    // benchmark may exit 0 or 2 (nets trained on 8 points owe us nothing),
    // but it must always leave complete artifacts behind.
    const CliResult bench = run_cli(s.dir, "benchmark");
    const bool bench_ok = bench.code == 0 || bench.code == 2;
    CHECK(bench_ok);

    const fs::path summary = s.dir / "out" / "benchmark_summary.csv";
    REQUIRE(fs::exists(summary));
    const std::vector<std::string> rows = non_empty_lines(slurp(summary));
    REQUIRE(rows.size() == 7);  // header + six controllers
    CHECK(rows[0].rfind("controller,runs,completed", 0) == 0);
    for (const char* kind :
         {"baseline", "short", "neural_horizon", "neural_horizon_unbounded",
          "cost_estimation", "imitation"}) {
      bool found = false;
      for (const auto& row : rows) {
        if (row.rfind(std::string(kind) + ",", 0) == 0) found = true;
      }
      CHECK_MESSAGE(found, "missing summary row for ", kind);
    }

    const fs::path sweep = s.dir / "out" / "horizon_sweep.csv";
    REQUIRE(fs::exists(sweep));
    const std::vector<std::string> sweep_rows = non_empty_lines(slurp(sweep));
    REQUIRE(sweep_rows.size() == 1 + cfg.sweep_horizons.size());
    CHECK(sweep_rows[0] ==
          "horizon,completed,cost,failure_time,final_state_norm");
    CHECK(sweep_rows[1].rfind("4,", 0) == 0);
    CHECK(sweep_rows[2].rfind("6,", 0) == 0);

    CHECK(fs::exists(s.dir / "out" / "cost_estimation_degradation.csv"));
    CHECK(fs::exists(s.dir / "out" / "run_baseline.csv"));
    CHECK(fs::exists(s.dir / "out" / "run_short.csv"));
    CHECK(fs::exists(s.dir / "out" / "run_neural_horizon_seed0.csv"));
  }
}
