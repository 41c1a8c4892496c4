#include "nhmpc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nhmpc {

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::Vector4d& v) {
  return json::array({v[0], v[1], v[2], v[3]});
}

json vec_to_json(const std::vector<int>& v) { return json(v); }

Eigen::Vector4d vec4_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) {
    throw std::invalid_argument("config: " + where +
                                " must be an array of 4 numbers");
  }
  Eigen::Vector4d out;
  for (int i = 0; i < 4; ++i) {
    if (!j[i].is_number()) {
      throw std::invalid_argument("config: " + where + " must be numeric");
    }
    out[i] = j[i].get<double>();
  }
  return out;
}

double num_from_json(const json& j, const std::string& where) {
  if (!j.is_number()) {
    throw std::invalid_argument("config: " + where + " must be a number");
  }
  return j.get<double>();
}

int int_from_json(const json& j, const std::string& where) {
  if (!j.is_number_integer()) {
    throw std::invalid_argument("config: " + where + " must be an integer");
  }
  return j.get<int>();
}

std::uint64_t u64_from_json(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) {
    throw std::invalid_argument("config: " + where +
                                " must be a non-negative integer");
  }
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) {
    throw std::invalid_argument("config: " + where +
                                " must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

std::vector<int> int_list_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw std::invalid_argument("config: " + where +
                                " must be a non-empty array of integers");
  }
  std::vector<int> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(int_from_json(e, where));
  return out;
}

// Rejects keys outside `known`; keys starting with '_' carry documentation
// and are skipped.
void check_keys(const json& obj, const std::string& section,
                const std::set<std::string>& known) {
  if (!obj.is_object()) {
    throw std::invalid_argument("config: " + section + " must be an object");
  }
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    if (!key.empty() && key[0] == '_') continue;
    if (known.find(key) == known.end()) {
      throw std::invalid_argument("config: unknown key " + section + "." +
                                  key);
    }
  }
}

}  // namespace

OcpWeights RunConfig::weights() const {
  OcpWeights w;
  w.Q = state_weight_diag.asDiagonal().toDenseMatrix();
  const Eigen::Vector4d slow{0.0, 0.0, 1.0, -model.pend_length};
  w.Q += slow_channel_weight * slow * slow.transpose();
  w.R = input_weight;
  return w;
}

State RunConfig::x0() const { return State::from_vec(scenario.x0); }

std::vector<int> RunConfig::net_layers(DatasetRole role) const {
  std::vector<int> layers;
  layers.push_back(4);
  for (int h : training.hidden_layers) layers.push_back(h);
  switch (role) {
    case DatasetRole::state_sequence:
      layers.push_back(4 *
                       (horizons.full_horizon - horizons.short_horizon));
      break;
    case DatasetRole::cost_pair: layers.push_back(2); break;
    case DatasetRole::imitation: layers.push_back(1); break;
  }
  return layers;
}

void RunConfig::validate() const {
  if (!model.valid()) throw std::invalid_argument("config: invalid model parameters");
  if (!bounds.valid()) throw std::invalid_argument("config: invalid bounds");
  if (!(slow_channel_weight >= 0.0)) {
    throw std::invalid_argument("config: weights.slow_channel must be >= 0");
  }
  if (!weights().valid()) throw std::invalid_argument("config: invalid weights");
  if (!horizons.valid()) {
    throw std::invalid_argument(
        "config: horizons require 0 < short < full and dt > 0");
  }
  if (!(tightening_margin >= 0.0)) {
    throw std::invalid_argument("config: tightening_margin must be >= 0");
  }
  try {
    (void)TightenedBox{bounds, tightening_margin}.tightened();
  } catch (const std::exception& e) {
    throw std::invalid_argument(
        std::string("config: tightening_margin too large: ") + e.what());
  }
  if (dataset.train_count < 1 || dataset.validation_count < 1) {
    throw std::invalid_argument("config: dataset counts must be positive");
  }
  if (!(dataset.min_retention > 0.0 && dataset.min_retention <= 1.0)) {
    throw std::invalid_argument("config: dataset.min_retention must be in (0, 1]");
  }
  if (dataset.seed == dataset.validation_seed) {
    throw std::invalid_argument(
        "config: dataset.seed and dataset.validation_seed must differ");
  }
  if (training.hidden_layers.empty()) {
    throw std::invalid_argument("config: training.hidden_layers must be non-empty");
  }
  for (int h : training.hidden_layers) {
    if (h < 1) {
      throw std::invalid_argument("config: hidden layer widths must be positive");
    }
  }
  if (training.epochs < 1 || training.batch_size < 1) {
    throw std::invalid_argument(
        "config: training epochs and batch_size must be positive");
  }
  if (!(training.learning_rate > 0.0)) {
    throw std::invalid_argument("config: training.learning_rate must be > 0");
  }
  if (!(training.beta1 >= 0.0 && training.beta1 < 1.0) ||
      !(training.beta2 >= 0.0 && training.beta2 < 1.0)) {
    throw std::invalid_argument("config: Adam betas must lie in [0, 1)");
  }
  if (!(training.epsilon > 0.0)) {
    throw std::invalid_argument("config: training.epsilon must be > 0");
  }
  if (!(training.validation_fraction > 0.0 &&
        training.validation_fraction < 1.0)) {
    throw std::invalid_argument(
        "config: training.validation_fraction must lie in (0, 1)");
  }
  if (training.seeds < 1) {
    throw std::invalid_argument("config: training.seeds must be >= 1");
  }
  if (training.keep_best < 1 || training.keep_best > training.seeds) {
    throw std::invalid_argument(
        "config: training.keep_best must lie in [1, training.seeds]");
  }
  if (!scenario.x0.allFinite()) {
    throw std::invalid_argument("config: scenario.x0 must be finite");
  }
  if (!(scenario.duration >= 0.0)) {
    throw std::invalid_argument("config: scenario.duration must be >= 0");
  }
  if (sweep_horizons.empty()) {
    throw std::invalid_argument("config: sweep.horizons must be non-empty");
  }
  for (int n : sweep_horizons) {
    if (n < 2) {
      throw std::invalid_argument("config: sweep horizons must be >= 2");
    }
  }
  if (!(solver.kkt_tol > 0.0)) {
    throw std::invalid_argument("config: solver.kkt_tolerance must be > 0");
  }
  if (solver.max_iter < 1) {
    throw std::invalid_argument("config: solver.max_iterations must be >= 1");
  }
  if (output_dir.empty()) {
    throw std::invalid_argument("config: output_dir must be non-empty");
  }
}

RunConfig default_config() { return RunConfig{}; }

std::string config_to_json(const RunConfig& cfg, bool with_notes) {
  json j = json::object();
  if (with_notes) {
    j["_notes"] = {
        {"model", "cart-pole parameters: cart mass, pole mass, pole length, gravity"},
        {"bounds", "box limits on [x_cart, theta, v, omega] and on the force F"},
        {"weights",
         "quadratic stage cost: diagonal of Q, scalar R, and an extra penalty "
         "on (v - pend_length*omega)^2, the velocity combination the force "
         "cannot reach near the upright"},
        {"horizons", "full prediction horizon N, truncated horizon M, sample period dt"},
        {"tightening_margin", "uniform margin subtracted from state boxes when generating training data"},
        {"dataset", "sample counts and seeds for the training/validation corpora"},
        {"training", "MLP shape and Adam settings; seeds nets are trained per role, keep_best survive selection"},
        {"scenario", "closed-loop run: initial state [x_cart, theta, v, omega] and duration in seconds"},
        {"sweep", "full-horizon values explored by the baseline horizon sweep"},
        {"solver", "SQP stopping rule and Hessian mode (quasi_newton or exact)"},
        {"output_dir", "directory receiving datasets, models, and CSV reports"},
    };
  }
  j["model"] = {{"cart_mass", cfg.model.cart_mass},
                {"pend_mass", cfg.model.pend_mass},
                {"pend_length", cfg.model.pend_length},
                {"gravity", cfg.model.gravity}};
  j["bounds"] = {{"state_lower", vec_to_json(cfg.bounds.state_lower)},
                 {"state_upper", vec_to_json(cfg.bounds.state_upper)},
                 {"terminal_lower", vec_to_json(cfg.bounds.terminal_lower)},
                 {"terminal_upper", vec_to_json(cfg.bounds.terminal_upper)},
                 {"input_lower", cfg.bounds.input_lower},
                 {"input_upper", cfg.bounds.input_upper}};
  j["weights"] = {{"state_diag", vec_to_json(cfg.state_weight_diag)},
                  {"input", cfg.input_weight},
                  {"slow_channel", cfg.slow_channel_weight}};
  j["horizons"] = {{"full", cfg.horizons.full_horizon},
                   {"short", cfg.horizons.short_horizon},
                   {"dt", cfg.horizons.dt}};
  j["tightening_margin"] = cfg.tightening_margin;
  j["dataset"] = {{"train_count", cfg.dataset.train_count},
                  {"validation_count", cfg.dataset.validation_count},
                  {"seed", cfg.dataset.seed},
                  {"validation_seed", cfg.dataset.validation_seed},
                  {"min_retention", cfg.dataset.min_retention}};
  j["training"] = {{"hidden_layers", vec_to_json(cfg.training.hidden_layers)},
                   {"epochs", cfg.training.epochs},
                   {"batch_size", cfg.training.batch_size},
                   {"learning_rate", cfg.training.learning_rate},
                   {"beta1", cfg.training.beta1},
                   {"beta2", cfg.training.beta2},
                   {"epsilon", cfg.training.epsilon},
                   {"validation_fraction", cfg.training.validation_fraction},
                   {"seeds", cfg.training.seeds},
                   {"keep_best", cfg.training.keep_best},
                   {"seed_base", cfg.training.seed_base}};
  j["scenario"] = {{"x0", vec_to_json(cfg.scenario.x0)},
                   {"duration", cfg.scenario.duration}};
  j["sweep"] = {{"horizons", vec_to_json(cfg.sweep_horizons)}};
  const char* hessian =
      cfg.solver.hessian_mode == HessianMode::exact ? "exact" : "quasi_newton";
  j["solver"] = {{"kkt_tolerance", cfg.solver.kkt_tol},
                 {"max_iterations", cfg.solver.max_iter},
                 {"hessian", hessian}};
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") +
                                e.what());
  }
  check_keys(j, "<root>",
             {"model", "bounds", "weights", "horizons", "tightening_margin",
              "dataset", "training", "scenario", "sweep", "solver",
              "output_dir"});

  RunConfig cfg;
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model",
               {"cart_mass", "pend_mass", "pend_length", "gravity"});
    if (m.contains("cart_mass"))
      cfg.model.cart_mass = num_from_json(m["cart_mass"], "model.cart_mass");
    if (m.contains("pend_mass"))
      cfg.model.pend_mass = num_from_json(m["pend_mass"], "model.pend_mass");
    if (m.contains("pend_length"))
      cfg.model.pend_length =
          num_from_json(m["pend_length"], "model.pend_length");
    if (m.contains("gravity"))
      cfg.model.gravity = num_from_json(m["gravity"], "model.gravity");
  }
  if (j.contains("bounds")) {
    const json& b = j["bounds"];
    check_keys(b, "bounds",
               {"state_lower", "state_upper", "terminal_lower",
                "terminal_upper", "input_lower", "input_upper"});
    if (b.contains("state_lower"))
      cfg.bounds.state_lower =
          vec4_from_json(b["state_lower"], "bounds.state_lower");
    if (b.contains("state_upper"))
      cfg.bounds.state_upper =
          vec4_from_json(b["state_upper"], "bounds.state_upper");
    if (b.contains("terminal_lower"))
      cfg.bounds.terminal_lower =
          vec4_from_json(b["terminal_lower"], "bounds.terminal_lower");
    if (b.contains("terminal_upper"))
      cfg.bounds.terminal_upper =
          vec4_from_json(b["terminal_upper"], "bounds.terminal_upper");
    if (b.contains("input_lower"))
      cfg.bounds.input_lower =
          num_from_json(b["input_lower"], "bounds.input_lower");
    if (b.contains("input_upper"))
      cfg.bounds.input_upper =
          num_from_json(b["input_upper"], "bounds.input_upper");
  }
  if (j.contains("weights")) {
    const json& w = j["weights"];
    check_keys(w, "weights", {"state_diag", "input", "slow_channel"});
    if (w.contains("state_diag"))
      cfg.state_weight_diag =
          vec4_from_json(w["state_diag"], "weights.state_diag");
    if (w.contains("input"))
      cfg.input_weight = num_from_json(w["input"], "weights.input");
    if (w.contains("slow_channel"))
      cfg.slow_channel_weight =
          num_from_json(w["slow_channel"], "weights.slow_channel");
  }
  if (j.contains("horizons")) {
    const json& h = j["horizons"];
    check_keys(h, "horizons", {"full", "short", "dt"});
    if (h.contains("full"))
      cfg.horizons.full_horizon = int_from_json(h["full"], "horizons.full");
    if (h.contains("short"))
      cfg.horizons.short_horizon = int_from_json(h["short"], "horizons.short");
    if (h.contains("dt"))
      cfg.horizons.dt = num_from_json(h["dt"], "horizons.dt");
  }
  if (j.contains("tightening_margin")) {
    cfg.tightening_margin =
        num_from_json(j["tightening_margin"], "tightening_margin");
  }
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, "dataset",
               {"train_count", "validation_count", "seed", "validation_seed",
                "min_retention"});
    if (d.contains("train_count"))
      cfg.dataset.train_count =
          int_from_json(d["train_count"], "dataset.train_count");
    if (d.contains("validation_count"))
      cfg.dataset.validation_count =
          int_from_json(d["validation_count"], "dataset.validation_count");
    if (d.contains("seed"))
      cfg.dataset.seed = u64_from_json(d["seed"], "dataset.seed");
    if (d.contains("validation_seed"))
      cfg.dataset.validation_seed =
          u64_from_json(d["validation_seed"], "dataset.validation_seed");
    if (d.contains("min_retention"))
      cfg.dataset.min_retention =
          num_from_json(d["min_retention"], "dataset.min_retention");
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    check_keys(t, "training",
               {"hidden_layers", "epochs", "batch_size", "learning_rate",
                "beta1", "beta2", "epsilon", "validation_fraction", "seeds",
                "keep_best", "seed_base"});
    if (t.contains("hidden_layers"))
      cfg.training.hidden_layers =
          int_list_from_json(t["hidden_layers"], "training.hidden_layers");
    if (t.contains("epochs"))
      cfg.training.epochs = int_from_json(t["epochs"], "training.epochs");
    if (t.contains("batch_size"))
      cfg.training.batch_size =
          int_from_json(t["batch_size"], "training.batch_size");
    if (t.contains("learning_rate"))
      cfg.training.learning_rate =
          num_from_json(t["learning_rate"], "training.learning_rate");
    if (t.contains("beta1"))
      cfg.training.beta1 = num_from_json(t["beta1"], "training.beta1");
    if (t.contains("beta2"))
      cfg.training.beta2 = num_from_json(t["beta2"], "training.beta2");
    if (t.contains("epsilon"))
      cfg.training.epsilon = num_from_json(t["epsilon"], "training.epsilon");
    if (t.contains("validation_fraction"))
      cfg.training.validation_fraction = num_from_json(
          t["validation_fraction"], "training.validation_fraction");
    if (t.contains("seeds"))
      cfg.training.seeds = int_from_json(t["seeds"], "training.seeds");
    if (t.contains("keep_best"))
      cfg.training.keep_best =
          int_from_json(t["keep_best"], "training.keep_best");
    if (t.contains("seed_base"))
      cfg.training.seed_base =
          u64_from_json(t["seed_base"], "training.seed_base");
  }
  if (j.contains("scenario")) {
    const json& s = j["scenario"];
    check_keys(s, "scenario", {"x0", "duration"});
    if (s.contains("x0")) cfg.scenario.x0 = vec4_from_json(s["x0"], "scenario.x0");
    if (s.contains("duration"))
      cfg.scenario.duration = num_from_json(s["duration"], "scenario.duration");
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_keys(s, "sweep", {"horizons"});
    if (s.contains("horizons"))
      cfg.sweep_horizons = int_list_from_json(s["horizons"], "sweep.horizons");
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    check_keys(s, "solver", {"kkt_tolerance", "max_iterations", "hessian"});
    if (s.contains("kkt_tolerance"))
      cfg.solver.kkt_tol =
          num_from_json(s["kkt_tolerance"], "solver.kkt_tolerance");
    if (s.contains("max_iterations"))
      cfg.solver.max_iter =
          int_from_json(s["max_iterations"], "solver.max_iterations");
    if (s.contains("hessian")) {
      if (!s["hessian"].is_string()) {
        throw std::invalid_argument("config: solver.hessian must be a string");
      }
      const std::string mode = s["hessian"].get<std::string>();
      if (mode == "exact") {
        cfg.solver.hessian_mode = HessianMode::exact;
      } else if (mode == "quasi_newton") {
        cfg.solver.hessian_mode = HessianMode::quasi_newton;
      } else {
        throw std::invalid_argument(
            "config: solver.hessian must be \"exact\" or \"quasi_newton\"");
      }
    }
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) {
      throw std::invalid_argument("config: output_dir must be a string");
    }
    cfg.output_dir = j["output_dir"].get<std::string>();
  }

  cfg.validate();
  return cfg;
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("config: cannot open " + path);
  out << config_to_json(cfg, /*with_notes=*/true);
  if (!out) throw std::runtime_error("config: write failed for " + path);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

namespace {

std::string role_tag(DatasetRole role) {
  switch (role) {
    case DatasetRole::state_sequence: return "state";
    case DatasetRole::cost_pair: return "cost";
    case DatasetRole::imitation: return "imitation";
  }
  return "unknown";
}

}  // namespace

std::string raw_corpus_path(const RunConfig& cfg, bool validation) {
  return cfg.output_dir + (validation ? "/raw_validation.bin" : "/raw_train.bin");
}

std::string dataset_base_path(const RunConfig& cfg, DatasetRole role,
                              bool validation) {
  return cfg.output_dir + "/dataset_" + role_tag(role) +
         (validation ? "_validation" : "");
}

std::string model_path(const RunConfig& cfg, DatasetRole role,
                       int seed_index) {
  return cfg.output_dir + "/model_" + role_tag(role) + "_seed" +
         std::to_string(seed_index) + ".bin";
}

std::string training_report_path(const RunConfig& cfg, DatasetRole role) {
  return cfg.output_dir + "/training_report_" + role_tag(role) + ".csv";
}

std::string run_csv_path(const RunConfig& cfg, ControllerKind kind) {
  return cfg.output_dir + "/run_" + std::string(to_string(kind)) + ".csv";
}

std::string benchmark_summary_path(const RunConfig& cfg) {
  return cfg.output_dir + "/benchmark_summary.csv";
}

std::string horizon_sweep_path(const RunConfig& cfg) {
  return cfg.output_dir + "/horizon_sweep.csv";
}

}  // namespace nhmpc
