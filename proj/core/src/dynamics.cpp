#include "nhmpc/dynamics.hpp"

#include <cmath>

namespace nhmpc {

bool State::finite() const {
  return std::isfinite(x_cart) && std::isfinite(theta) && std::isfinite(v) &&
         std::isfinite(omega);
}

bool Input::finite() const { return std::isfinite(force); }

// Cart-pole equations of motion:
//   xdot_cart = v
//   thetadot  = omega
//   vdot      = (mu1*cos(theta) + F + g*m*cos(theta)*sin(theta)) / mu2
//   omegadot  = (mu1 + F*cos(theta)) / (l*mu2)
// with mu1 = -l*m*sin(theta)*omega^2 and mu2 = M + m*(1 - cos^2(theta)).
Eigen::Vector4d continuous_dynamics(const State& state, const Input& input,
                                    const ModelParams& params) {
  const double s = std::sin(state.theta);
  const double c = std::cos(state.theta);
  const double l = params.pend_length;
  const double m = params.pend_mass;
  const double mu1 = -l * m * s * state.omega * state.omega;
  const double mu2 = params.cart_mass + m * (1.0 - c * c);

  Eigen::Vector4d dx;
  dx[0] = state.v;
  dx[1] = state.omega;
  dx[2] = (mu1 * c + input.force + params.gravity * m * c * s) / mu2;
  dx[3] = (mu1 + input.force * c) / (l * mu2);
  return dx;
}

void continuous_dynamics_jacobians(const State& state, const Input& input,
                                   const ModelParams& params,
                                   Eigen::Matrix4d& dfdx,
                                   Eigen::Vector4d& dfdu) {
  const double s = std::sin(state.theta);
  const double c = std::cos(state.theta);
  const double w = state.omega;
  const double F = input.force;
  const double l = params.pend_length;
  const double m = params.pend_mass;
  const double g = params.gravity;

  const double mu1 = -l * m * s * w * w;
  const double mu2 = params.cart_mass + m * (1.0 - c * c);
  const double dmu1_dth = -l * m * c * w * w;
  const double dmu1_dw = -2.0 * l * m * s * w;
  const double dmu2_dth = 2.0 * m * s * c;

  dfdx.setZero();
  dfdu.setZero();

  dfdx(0, 2) = 1.0;  // d(xdot_cart)/dv
  dfdx(1, 3) = 1.0;  // d(thetadot)/domega

  // vdot = Nv / mu2, Nv = mu1*c + F + g*m*c*s
  const double Nv = mu1 * c + F + g * m * c * s;
  const double dNv_dth = dmu1_dth * c - mu1 * s + g * m * (c * c - s * s);
  dfdx(2, 1) = (dNv_dth * mu2 - Nv * dmu2_dth) / (mu2 * mu2);
  dfdx(2, 3) = dmu1_dw * c / mu2;
  dfdu[2] = 1.0 / mu2;

  // omegadot = Nw / (l*mu2), Nw = mu1 + F*c
  const double Nw = mu1 + F * c;
  const double dNw_dth = dmu1_dth - F * s;
  dfdx(3, 1) = (dNw_dth * mu2 - Nw * dmu2_dth) / (l * mu2 * mu2);
  dfdx(3, 3) = dmu1_dw / (l * mu2);
  dfdu[3] = c / (l * mu2);
}

State rk4_step(const State& state, const Input& input,
               const IntegratorConfig& cfg, const ModelParams& params) {
  const double dt = cfg.dt;
  const Eigen::Vector4d x = state.vec();

  const Eigen::Vector4d k1 = continuous_dynamics(state, input, params);
  const Eigen::Vector4d k2 = continuous_dynamics(
      State::from_vec(x + 0.5 * dt * k1), input, params);
  const Eigen::Vector4d k3 = continuous_dynamics(
      State::from_vec(x + 0.5 * dt * k2), input, params);
  const Eigen::Vector4d k4 =
      continuous_dynamics(State::from_vec(x + dt * k3), input, params);

  return State::from_vec(x + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4));
}

void rk4_step_jacobians(const State& state, const Input& input,
                        const IntegratorConfig& cfg, const ModelParams& params,
                        Eigen::Matrix4d& dnext_dx, Eigen::Vector4d& dnext_du) {
  const double dt = cfg.dt;
  const Eigen::Vector4d x = state.vec();
  const Eigen::Matrix4d I = Eigen::Matrix4d::Identity();

  Eigen::Matrix4d A1, A2, A3, A4;
  Eigen::Vector4d B1, B2, B3, B4;

  const Eigen::Vector4d k1 = continuous_dynamics(state, input, params);
  continuous_dynamics_jacobians(state, input, params, A1, B1);

  const State s2 = State::from_vec(x + 0.5 * dt * k1);
  const Eigen::Vector4d k2 = continuous_dynamics(s2, input, params);
  continuous_dynamics_jacobians(s2, input, params, A2, B2);

  const State s3 = State::from_vec(x + 0.5 * dt * k2);
  const Eigen::Vector4d k3 = continuous_dynamics(s3, input, params);
  continuous_dynamics_jacobians(s3, input, params, A3, B3);

  const State s4 = State::from_vec(x + dt * k3);
  continuous_dynamics_jacobians(s4, input, params, A4, B4);

  // Chain the stage sensitivities through the evaluation points.
  const Eigen::Matrix4d dk1_dx = A1;
  const Eigen::Vector4d dk1_du = B1;
  const Eigen::Matrix4d dk2_dx = A2 * (I + 0.5 * dt * dk1_dx);
  const Eigen::Vector4d dk2_du = A2 * (0.5 * dt * dk1_du) + B2;
  const Eigen::Matrix4d dk3_dx = A3 * (I + 0.5 * dt * dk2_dx);
  const Eigen::Vector4d dk3_du = A3 * (0.5 * dt * dk2_du) + B3;
  const Eigen::Matrix4d dk4_dx = A4 * (I + dt * dk3_dx);
  const Eigen::Vector4d dk4_du = A4 * (dt * dk3_du) + B4;

  dnext_dx = I + dt / 6.0 * (dk1_dx + 2.0 * (dk2_dx + dk3_dx) + dk4_dx);
  dnext_du = dt / 6.0 * (dk1_du + 2.0 * (dk2_du + dk3_du) + dk4_du);
}

}  // namespace nhmpc
