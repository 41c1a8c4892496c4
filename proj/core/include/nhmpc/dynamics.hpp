#pragma once

#include <Eigen/Dense>

namespace nhmpc {

/// Cart-pole state. theta is the pendulum angle measured from the upright
/// position and is kept unwrapped (no folding into (-pi, pi]).
struct State {
  double x_cart = 0.0;  ///< cart position [m]
  double theta = 0.0;   ///< pendulum angle [rad], 0 = upright
  double v = 0.0;       ///< cart velocity [m/s]
  double omega = 0.0;   ///< angular velocity [1/s]

  Eigen::Vector4d vec() const { return {x_cart, theta, v, omega}; }
  static State from_vec(const Eigen::Vector4d& x) {
    return {x[0], x[1], x[2], x[3]};
  }
  bool finite() const;
};

/// Scalar force applied to the cart [N].
struct Input {
  double force = 0.0;
  bool finite() const;
};

struct ModelParams {
  double cart_mass = 1.0;    ///< [kg]
  double pend_mass = 0.1;    ///< [kg]
  double pend_length = 0.8;  ///< [m]
  double gravity = 9.81;     ///< [m/s^2]

  bool valid() const {
    return cart_mass > 0.0 && pend_mass > 0.0 && pend_length > 0.0 &&
           gravity > 0.0;
  }
};

struct IntegratorConfig {
  double dt = 0.02;  ///< fixed step length [s]
};

/// Time derivative (xdot_cart, thetadot, vdot, omegadot) of the cart-pole
/// model. Total on finite inputs; no friction terms.
Eigen::Vector4d continuous_dynamics(const State& state, const Input& input,
                                    const ModelParams& params);

/// Jacobians of continuous_dynamics with respect to the state and the input.
void continuous_dynamics_jacobians(const State& state, const Input& input,
                                   const ModelParams& params,
                                   Eigen::Matrix4d& dfdx,
                                   Eigen::Vector4d& dfdu);

/// Classic fixed-step 4-stage Runge-Kutta step. The input is held constant
/// over the step (zero-order hold).
State rk4_step(const State& state, const Input& input,
               const IntegratorConfig& cfg, const ModelParams& params);

/// Jacobians of the discrete step x+ = rk4_step(x, u) with respect to x and u,
/// obtained by chaining the stage Jacobians.
void rk4_step_jacobians(const State& state, const Input& input,
                        const IntegratorConfig& cfg, const ModelParams& params,
                        Eigen::Matrix4d& dnext_dx, Eigen::Vector4d& dnext_du);

}  // namespace nhmpc
