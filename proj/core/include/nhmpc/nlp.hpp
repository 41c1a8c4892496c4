#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <vector>

namespace nhmpc {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Index map for a direct multiple-shooting decision vector. Stage blocks are
/// interleaved as [x_0 u_0 x_1 u_1 ... ]; when there is one more state stage
/// than input stages the final state block closes the vector.
struct OcpLayout {
  int state_dim = 4;
  int input_dim = 1;
  int n_state_stages = 0;  ///< number of state blocks (horizon + 1)
  int n_input_stages = 0;  ///< number of input blocks

  int n_vars() const {
    return n_state_stages * state_dim + n_input_stages * input_dim;
  }
  int state_offset(int stage) const {
    const int full = std::min(stage, n_input_stages);
    return full * (state_dim + input_dim) + (stage - full) * state_dim;
  }
  int input_offset(int stage) const {
    return stage * (state_dim + input_dim) + state_dim;
  }
  bool valid() const {
    return state_dim > 0 && input_dim > 0 && n_state_stages > 0 &&
           n_input_stages >= 0 && n_state_stages >= n_input_stages &&
           n_state_stages <= n_input_stages + 1;
  }
};

/// Smooth constrained program
///   min f(z)  s.t.  g(z) = 0,  ineq_lower <= h(z) <= ineq_upper,
///                   lower <= z <= upper.
/// Callbacks must be reentrant; bounds may be +-infinity per entry.
struct NlpProblem {
  int n_vars = 0;
  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> objective_grad;

  int n_eq = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eq;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> eq_jac;

  int n_ineq = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> ineq;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> ineq_jac;
  Eigen::VectorXd ineq_lower;
  Eigen::VectorXd ineq_upper;

  Eigen::VectorXd lower;  ///< variable box, -inf allowed
  Eigen::VectorXd upper;  ///< variable box, +inf allowed

  /// Optional quasi-Newton seed B0 (defaults to identity when empty).
  Eigen::MatrixXd hessian_seed;

  /// Optional exact Hessian of the Lagrangian
  ///   f(z) + y'g(z) + (lam_up - lam_lo)'h(z),
  /// used when SolverConfig::hessian_mode == exact.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& z,
                                const Eigen::VectorXd& eq_duals,
                                const Eigen::VectorXd& ineq_dual_diff)>
      lagrangian_hessian;

  void validate() const;  ///< throws std::invalid_argument on bad dimensions
};

enum class HessianMode { exact, quasi_newton };

struct SolverConfig {
  double kkt_tol = 1e-6;
  int max_iter = 200;
  HessianMode hessian_mode = HessianMode::quasi_newton;
  bool record_trace = false;
};

enum class SolveStatus { converged, max_iter, infeasible, numerical_failure };

const char* to_string(SolveStatus s);

/// Multipliers attached to a primal point. Inequality and box multipliers are
/// kept one-sided and nonnegative.
struct Duals {
  Eigen::VectorXd eq;           ///< free sign, one per equality row
  Eigen::VectorXd ineq_lower;   ///< >= 0, active when h at lower bound
  Eigen::VectorXd ineq_upper;   ///< >= 0, active when h at upper bound
  Eigen::VectorXd bound_lower;  ///< >= 0, one per variable
  Eigen::VectorXd bound_upper;  ///< >= 0, one per variable
};

struct IterationTrace {
  double objective = 0.0;
  double kkt = 0.0;
  double violation = 0.0;
  double step_norm = 0.0;
  double step_length = 0.0;
};

struct SolverResult {
  Eigen::VectorXd primal;
  Duals duals;
  SolveStatus status = SolveStatus::numerical_failure;
  int iterations = 0;
  double kkt_residual = kInfinity;
  double constraint_violation = kInfinity;
  double objective = kInfinity;
  double wall_time = 0.0;  ///< seconds spent inside solve()
  std::vector<IterationTrace> trace;
};

/// SQP solve of the given program. Line-search globalization on an l1 merit
/// function; QP subproblems are solved by a dense predictor-corrector
/// interior-point method. Deterministic: identical problem, config and guess
/// yield the identical iterate sequence.
SolverResult solve(const NlpProblem& problem, const SolverConfig& config,
                   const Eigen::VectorXd& initial_guess);

/// Infinity norm of the first-order optimality residual at (primal, duals):
/// stationarity, constraint violation, multiplier sign and complementarity.
double kkt_residual(const NlpProblem& problem, const Eigen::VectorXd& primal,
                    const Duals& duals);

/// Shift a solved shooting trajectory one stage forward in time, duplicating
/// the final stage. Used to warm-start the next MPC solve.
Eigen::VectorXd warm_start_shift(const SolverResult& previous,
                                 const OcpLayout& layout);

}  // namespace nhmpc
