#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nhmpc/control.hpp"
#include "nhmpc/datagen.hpp"

namespace nhmpc {

// Dataset generation settings.
struct DatasetConfig {
  int train_count = 25000;
  int validation_count = 5000;
  std::uint64_t seed = 1;
  std::uint64_t validation_seed = 2;
  double min_retention = 0.5;
};

// Network training settings shared by all three roles.
struct TrainingConfig {
  std::vector<int> hidden_layers{32, 32, 32};
  int epochs = 2500;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;
  int seeds = 10;
  int keep_best = 5;
  std::uint64_t seed_base = 100;
};

// Closed-loop scenario: initial state and run length.
struct ScenarioConfig {
  Eigen::Vector4d x0{0.0, kPi, 0.0, 0.0};
  double duration = 5.0;
};

// Everything a command needs, loadable from a single JSON file.
struct RunConfig {
  ModelParams model;
  BoxConstraints bounds;
  Eigen::Vector4d state_weight_diag{0.75, 10.0, 0.2, 0.005};
  double input_weight = 0.02;
  // Extra penalty on (v - l*omega)^2. Near the upright the force moves v and
  // l*omega identically, so this combination is the part of the velocity that
  // only gravity (through a cart tilt) can change; weighting it keeps the
  // catch clean and damps the slow cart mode that a diagonal Q leaves ringing.
  double slow_channel_weight = 2.8;
  HorizonSpec horizons;
  double tightening_margin = 0.25;
  DatasetConfig dataset;
  TrainingConfig training;
  ScenarioConfig scenario;
  std::vector<int> sweep_horizons{8,  10, 12, 14, 16, 18, 20,
                                  22, 24, 26, 28, 30, 32};
  SolverConfig solver;
  std::string output_dir = "out";

  OcpWeights weights() const;
  State x0() const;
  std::vector<int> net_layers(DatasetRole role) const;

  // Throws std::invalid_argument describing the first violated rule.
  void validate() const;
};

RunConfig default_config();

// Serialization: strict schema. Unknown keys are rejected unless they start
// with '_'; missing keys keep their defaults, so a dumped config re-ingests
// to identical behavior.
std::string config_to_json(const RunConfig& cfg, bool with_notes);
RunConfig config_from_json(const std::string& text);
void save_config(const RunConfig& cfg, const std::string& path);
RunConfig load_config(const std::string& path);

// Canonical artifact locations under cfg.output_dir.
std::string raw_corpus_path(const RunConfig& cfg, bool validation);
std::string dataset_base_path(const RunConfig& cfg, DatasetRole role,
                              bool validation);
std::string model_path(const RunConfig& cfg, DatasetRole role, int seed_index);
std::string training_report_path(const RunConfig& cfg, DatasetRole role);
std::string run_csv_path(const RunConfig& cfg, ControllerKind kind);
std::string benchmark_summary_path(const RunConfig& cfg);
std::string horizon_sweep_path(const RunConfig& cfg);

}  // namespace nhmpc
