#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nhmpc/neural.hpp"
#include "nhmpc/ocp.hpp"

namespace nhmpc {

enum class ControllerKind {
  baseline,         ///< full-horizon program, N stages
  short_horizon,    ///< baseline program truncated to M stages
  neural_horizon,   ///< M stages + learned tail states (bounds enforced)
  neural_horizon_unbounded,  ///< same without the tail inequalities
  cost_estimation,  ///< M stages + learned scalar tail costs
  imitation,        ///< net maps state directly to the applied input
};

const char* to_string(ControllerKind kind);
ControllerKind controller_kind_from_string(const std::string& name);

struct ControllerSpec {
  ControllerKind kind = ControllerKind::baseline;
  HorizonSpec horizons;
  OcpWeights weights;
  BoxConstraints bounds;
  ModelParams model;
  SolverConfig solver;
  /// Physical-units net for the learned kinds (Model::deployed()).
  Mlp net;
};

struct StepDiagnostics {
  SolveStatus status = SolveStatus::converged;
  int iterations = 0;
  double solve_ms = 0.0;  ///< wall time around the solve call only
  double kkt_residual = 0.0;
  double objective = 0.0;
  bool warm_started = false;
};

struct StepResult {
  Input u;
  StepDiagnostics diag;
  bool ok = false;  ///< true when an input was produced
};

/// One controller instance: builds its program at the measured state, solves
/// it (or evaluates the imitation net), and carries the warm start between
/// consecutive calls. Not thread-safe; one instance per closed loop.
class Controller {
 public:
  explicit Controller(ControllerSpec spec);

  /// The receding-horizon feedback: first input of the program solved at x.
  /// The imitation kind evaluates its net instead; out-of-bound outputs are
  /// returned as-is (violations are the caller's to log, not to clip).
  StepResult mpc_step(const State& x);

  /// Drop the warm start (next solve starts from the zero-input rollout).
  void reset();

  const ControllerSpec& spec() const { return spec_; }

 private:
  ControllerSpec spec_;
  std::optional<SolverResult> previous_;
  OcpLayout layout_;
};

enum class Termination { completed, infeasible };

struct BoundViolation {
  int step = 0;
  double time = 0.0;
  std::string bound;  ///< which row, e.g. "x_cart" or "F"
  double amount = 0.0;
};

/// Everything one closed-loop run produced. states has one more row than
/// inputs; a run that failed at step j carries j applied inputs and the
/// failing step's diagnostics as the last diagnostics entry.
struct ClosedLoopRecord {
  double dt = 0.0;
  std::vector<State> states;       ///< plant states x_0..x_n
  std::vector<double> inputs;      ///< applied forces
  std::vector<double> stage_costs; ///< stage_cost(x_i, u_i)
  std::vector<StepDiagnostics> diagnostics;  ///< one per attempted step
  Termination termination = Termination::completed;
  double failure_time = 0.0;  ///< valid when termination == infeasible
};

/// Roll the plant for duration seconds under the controller. duration must
/// be a whole number of sample periods; zero duration yields an empty
/// completed record. Stops early when a solve fails, recording the failure.
ClosedLoopRecord simulate(Controller& controller, const State& x0,
                          double duration);

/// Sum of stage costs over the applied steps.
double closed_loop_cost(const ClosedLoopRecord& record, const OcpWeights& w);

struct Metrics {
  double mean_solve_ms = 0.0;
  double std_solve_ms = 0.0;
  double trajectory_cost = 0.0;
  int n_steps = 0;
  bool completed = false;
  double final_state_norm = 0.0;  ///< infinity norm of the last plant state
  std::vector<BoundViolation> violations;
};

/// Aggregate a record: timing moments, cost, and a log of every bound
/// violated by more than tol across applied inputs and visited states.
Metrics compute_metrics(const ClosedLoopRecord& record, const OcpWeights& w,
                        const BoxConstraints& b, double tol = 1e-6);

struct SweepRow {
  int horizon = 0;
  bool completed = false;
  double cost = 0.0;          ///< valid when completed
  double failure_time = 0.0;  ///< valid when not completed
  double final_state_norm = 0.0;
};

/// Closed-loop cost of the baseline controller per horizon length in
/// horizon_list, under otherwise identical settings.
std::vector<SweepRow> horizon_sweep(const std::vector<int>& horizon_list,
                                    const State& x0, double duration,
                                    const ControllerSpec& base);

/// Per-step CSV: t,x_cart,theta,v,omega,F,stage_cost,solve_ms,status. One row
/// per attempted step; a failing final step leaves F and stage_cost empty.
/// Zero-duration records produce only the header.
void write_run_csv(const ClosedLoopRecord& record, const std::string& path);

}  // namespace nhmpc
