#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nhmpc/neural.hpp"
#include "nhmpc/ocp.hpp"

namespace nhmpc {

/// One retained open-loop solution of the tightened program.
struct RawSample {
  State x_init;
  Eigen::MatrixXd states;  ///< (N+1) x 4, optimal open-loop states
  Eigen::VectorXd inputs;  ///< N optimal open-loop inputs
  SolveStatus status = SolveStatus::converged;
  bool fresh_draw = false;  ///< drawn from the sampling box vs chained from x_1
};

/// The retained samples plus the provenance every derived dataset needs.
struct RawCorpus {
  std::vector<RawSample> samples;
  double gamma = 0.0;
  HorizonSpec horizons;
  OcpWeights weights;
  BoxConstraints bounds;
  std::uint64_t seed = 0;
};

enum class DatasetRole { state_sequence, cost_pair, imitation };

const char* to_string(DatasetRole role);
DatasetRole dataset_role_from_string(const std::string& name);

struct DatasetMeta {
  double gamma = 0.0;
  int full_horizon = 0;
  int short_horizon = 0;
  double dt = 0.0;
  std::uint64_t weights_fingerprint = 0;
  std::uint64_t seed = 0;
  std::string created;  ///< ISO timestamp; excluded from fingerprints
};

/// Feature/label pairs for one network role, one sample per row.
struct Dataset {
  DatasetRole role = DatasetRole::state_sequence;
  Eigen::MatrixXd features;
  Eigen::MatrixXd labels;
  DatasetMeta meta;
};

struct GenOptions {
  ModelParams model;
  SolverConfig solver;
  /// Override the OCP solve, e.g. with a canned response in tests. Receives
  /// the built problem and the initial guess.
  std::function<SolverResult(const NlpProblem&, const Eigen::VectorXd&)>
      solve_fn;
  double min_retention = 0.5;  ///< abort threshold on the converged fraction
  /// Called after every attempt with (retained, attempted).
  std::function<void(int, int)> progress;
};

/// Probability of restarting the chain from a fresh random draw, and the
/// per-state fractions of the base box the draws come from.
inline constexpr double kFreshDrawProbability = 0.1;
inline const Eigen::Vector4d kDrawBoxFraction{0.75, 0.25, 0.25, 0.25};

/// Generate `count` retained open-loop solutions of the gamma-tightened
/// program. Initial states come from the scaled sampling box with probability
/// kFreshDrawProbability (always on the first attempt and after a failed
/// solve) and otherwise continue the chain at the previous solution's x_1.
/// Throws when the converged fraction falls below opts.min_retention.
RawCorpus generate_raw(int count, double gamma, const HorizonSpec& spec,
                       const OcpWeights& w, const BoxConstraints& b,
                       std::uint64_t seed, const GenOptions& opts = {});

/// Feature/label extraction per role: state_sequence maps x_M to the stacked
/// tail x_{M+1}..x_N; cost_pair maps x_M to (tail state cost, tail input
/// cost); imitation maps x_0 to u_0.
Dataset derive_dataset(const RawCorpus& corpus, DatasetRole role);

/// How far a trained state-sequence model is from the bounded-error premise:
/// worst prediction error over a validation set, the fraction of points
/// within gamma, and whether every predicted tail state stays in the
/// untightened box.
struct AssumptionReport {
  int n_points = 0;
  double max_error = 0.0;          ///< infinity norm, physical units
  double fraction_within = 0.0;    ///< share of points with error < gamma
  double containment = 0.0;        ///< share of predictions inside the box
  bool all_contained = false;
};

AssumptionReport assumption_check(const Model& model, const Dataset& validation,
                                  double gamma,
                                  const BoxConstraints& b = {});

/// Order-independent fingerprint of the numeric content (role, widths, all
/// feature/label bytes); the timestamp does not participate.
std::uint64_t dataset_fingerprint(const Dataset& ds);

std::uint64_t weights_fingerprint(const OcpWeights& w);

/// Binary matrix file `base.bin` plus JSON metadata sidecar `base.json`.
void save_dataset(const Dataset& ds, const std::string& base_path);
Dataset load_dataset(const std::string& base_path);

/// Inspection export: header f0..,l0.., one row per sample, deterministic
/// shortest round-trip number formatting.
void export_dataset_csv(const Dataset& ds, const std::string& path);

/// Raw-sample archive with the same provenance header.
void save_raw(const RawCorpus& corpus, const std::string& path);
RawCorpus load_raw(const std::string& path);

}  // namespace nhmpc
