#pragma once

#include <Eigen/Dense>
#include <numbers>

#include "nhmpc/dynamics.hpp"
#include "nhmpc/neural.hpp"
#include "nhmpc/nlp.hpp"

namespace nhmpc {

inline constexpr double kPi = std::numbers::pi;

/// Per-stage variable boxes. The terminal rows default to the running state
/// box; the defaults are the cart-pole rail/velocity/force limits used
/// throughout the repository.
struct BoxConstraints {
  Eigen::Vector4d state_lower{-2.0, -6.0 * kPi, -10.0, -10.0};
  Eigen::Vector4d state_upper{2.0, 6.0 * kPi, 10.0, 10.0};
  Eigen::Vector4d terminal_lower{-2.0, -6.0 * kPi, -10.0, -10.0};
  Eigen::Vector4d terminal_upper{2.0, 6.0 * kPi, 10.0, 10.0};
  double input_lower = -80.0;
  double input_upper = 80.0;

  bool valid() const;
};

/// A base box together with an infinity-norm ball radius. tightened() shrinks
/// every state and terminal row by the margin (the Pontryagin difference of a
/// box with the ball); input rows are untouched.
struct TightenedBox {
  BoxConstraints base;
  double margin = 0.0;

  /// Throws std::invalid_argument when a shrunk interval becomes empty.
  BoxConstraints tightened() const;
};

/// Quadratic stage cost x'Qx + R u^2. The defaults are the repository-wide
/// weights; all controller comparisons are run under one fixed (Q, R).
struct OcpWeights {
  Eigen::Matrix4d Q =
      Eigen::Vector4d(10.0, 10.0, 0.1, 0.1).asDiagonal().toDenseMatrix();
  double R = 0.1;

  bool valid() const;
};

/// Horizon lengths shared by the controller family: the full horizon N, the
/// short horizon M kept by the learned-tail controllers, and the sample time.
struct HorizonSpec {
  int full_horizon = 30;
  int short_horizon = 8;
  double dt = 0.02;

  bool valid() const {
    return full_horizon > 0 && short_horizon > 0 &&
           short_horizon < full_horizon && dt > 0.0;
  }
};

struct BuiltOcp {
  NlpProblem problem;
  OcpLayout layout;
};

double stage_cost(const State& x, const Input& u, const OcpWeights& w);

/// Full-horizon multiple-shooting program: decision vector x_0..x_N and
/// u_0..u_{N-1}, defect equalities x_{k+1} = step(x_k, u_k), initial-condition
/// rows x_0 = x_init, objective sum of stage costs plus terminal x_N'Qx_N.
/// The short-horizon controller is this builder with N replaced by M.
BuiltOcp build_baseline_ocp(const State& x_init, const HorizonSpec& spec,
                            const OcpWeights& w, const BoxConstraints& b,
                            const ModelParams& mp = {});

/// Same program with the state boxes of stages M+1..N shrunk by tb.margin.
/// Stages 0..M keep the base boxes. Used to generate training data whose tail
/// leaves room for bounded prediction error.
BuiltOcp build_tightened_ocp(const State& x_init, const HorizonSpec& spec,
                             const OcpWeights& w, const TightenedBox& tb,
                             const ModelParams& mp = {});

/// Short-horizon program whose tail cost comes from a network mapping x_M to
/// the stacked tail states x_{M+1}..x_N. Decision vector x_0..x_M, u_0..u_M
/// (note the extra input u_M, which only the objective touches); objective
/// adds sum of x'Qx over the predicted tail. The net must map 4 inputs to
/// (N-M)*4 outputs in physical units. With enforce_tail_bounds, every
/// predicted tail state also gets its stage box as a ranged inequality on x_M
/// through the network.
BuiltOcp build_neural_horizon_ocp(const State& x_init, const HorizonSpec& spec,
                                  const OcpWeights& w, const BoxConstraints& b,
                                  const Mlp& net, bool enforce_tail_bounds,
                                  const ModelParams& mp = {});

/// Same decision vector, but the tail enters as the sum of a two-output
/// network evaluated at x_M: predicted tail state cost plus predicted tail
/// input cost. No tail states exist to constrain.
BuiltOcp build_cost_estimation_ocp(const State& x_init,
                                   const HorizonSpec& spec,
                                   const OcpWeights& w,
                                   const BoxConstraints& b, const Mlp& net,
                                   const ModelParams& mp = {});

/// Cold-start initial guess: roll the plant from x_init with zero input,
/// clamp into the variable box. Defect-feasible up to the clamping, which
/// leaves the solver mostly the objective to work on.
Eigen::VectorXd zero_input_rollout_guess(const State& x_init,
                                         const BuiltOcp& built, double dt,
                                         const ModelParams& mp = {});

}  // namespace nhmpc
