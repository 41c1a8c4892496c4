#include "nhmpc/ocp.hpp"

#include <memory>
#include <stdexcept>

namespace nhmpc {

namespace {

using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector4d;
using Eigen::VectorXd;

enum class TailKind { none, state_sequence, cost_pair };

// Everything the problem callbacks need, shared by value once.
struct ProgramData {
  OcpLayout layout;
  OcpWeights w;
  ModelParams mp;
  IntegratorConfig icfg;
  Vector4d x_init;
  TailKind tail = TailKind::none;
  Mlp net;  // only for learned-tail variants
};

using DataPtr = std::shared_ptr<const ProgramData>;

void check_common(const State& x_init, const HorizonSpec& spec,
                  const OcpWeights& w, const BoxConstraints& b,
                  const ModelParams& mp) {
  if (!spec.valid()) throw std::invalid_argument("ocp: invalid horizon spec");
  if (!w.valid()) throw std::invalid_argument("ocp: invalid weights");
  if (!b.valid()) throw std::invalid_argument("ocp: invalid box constraints");
  if (!mp.valid()) throw std::invalid_argument("ocp: invalid model params");
  if (!x_init.finite()) throw std::invalid_argument("ocp: non-finite x_init");
}

double eval_objective(const DataPtr& d, const VectorXd& z) {
  const OcpLayout& L = d->layout;
  double f = 0.0;
  for (int k = 0; k < L.n_input_stages; ++k) {
    const Vector4d x = z.segment<4>(L.state_offset(k));
    const double u = z[L.input_offset(k)];
    f += x.dot(d->w.Q * x) + d->w.R * u * u;
  }
  if (L.n_state_stages > L.n_input_stages) {
    const Vector4d x = z.segment<4>(L.state_offset(L.n_state_stages - 1));
    f += x.dot(d->w.Q * x);
  }
  if (d->tail != TailKind::none) {
    const Vector4d xm = z.segment<4>(L.state_offset(L.n_state_stages - 1));
    const VectorXd p = forward(d->net, xm);
    if (d->tail == TailKind::state_sequence) {
      for (int t = 0; t * 4 < p.size(); ++t) {
        const Vector4d xt = p.segment<4>(4 * t);
        f += xt.dot(d->w.Q * xt);
      }
    } else {
      f += p[0] + p[1];
    }
  }
  return f;
}

VectorXd eval_objective_grad(const DataPtr& d, const VectorXd& z) {
  const OcpLayout& L = d->layout;
  VectorXd g = VectorXd::Zero(L.n_vars());
  for (int k = 0; k < L.n_input_stages; ++k) {
    const Vector4d x = z.segment<4>(L.state_offset(k));
    g.segment<4>(L.state_offset(k)) = 2.0 * (d->w.Q * x);
    g[L.input_offset(k)] = 2.0 * d->w.R * z[L.input_offset(k)];
  }
  if (L.n_state_stages > L.n_input_stages) {
    const int off = L.state_offset(L.n_state_stages - 1);
    g.segment<4>(off) = 2.0 * (d->w.Q * z.segment<4>(off));
  }
  if (d->tail != TailKind::none) {
    const int off = L.state_offset(L.n_state_stages - 1);
    const Vector4d xm = z.segment<4>(off);
    const MatrixXd jac = input_jacobian(d->net, xm);
    if (d->tail == TailKind::state_sequence) {
      const VectorXd p = forward(d->net, xm);
      VectorXd dcost(p.size());
      for (int t = 0; t * 4 < p.size(); ++t) {
        dcost.segment<4>(4 * t) = 2.0 * (d->w.Q * p.segment<4>(4 * t));
      }
      g.segment<4>(off) += jac.transpose() * dcost;
    } else {
      g.segment<4>(off) += jac.transpose() * Eigen::Vector2d::Ones();
    }
  }
  return g;
}

VectorXd eval_eq(const DataPtr& d, const VectorXd& z) {
  const OcpLayout& L = d->layout;
  const int n_defects = L.n_state_stages - 1;
  VectorXd g(4 + 4 * n_defects);
  g.head<4>() = z.segment<4>(L.state_offset(0)) - d->x_init;
  for (int k = 0; k < n_defects; ++k) {
    const State xk = State::from_vec(z.segment<4>(L.state_offset(k)));
    const Input uk{z[L.input_offset(k)]};
    const State xn = rk4_step(xk, uk, d->icfg, d->mp);
    g.segment<4>(4 * (k + 1)) =
        z.segment<4>(L.state_offset(k + 1)) - xn.vec();
  }
  return g;
}

MatrixXd eval_eq_jac(const DataPtr& d, const VectorXd& z) {
  const OcpLayout& L = d->layout;
  const int n_defects = L.n_state_stages - 1;
  MatrixXd jac = MatrixXd::Zero(4 + 4 * n_defects, L.n_vars());
  jac.block<4, 4>(0, L.state_offset(0)) = Matrix4d::Identity();
  Matrix4d dnext_dx;
  Vector4d dnext_du;
  for (int k = 0; k < n_defects; ++k) {
    const State xk = State::from_vec(z.segment<4>(L.state_offset(k)));
    const Input uk{z[L.input_offset(k)]};
    rk4_step_jacobians(xk, uk, d->icfg, d->mp, dnext_dx, dnext_du);
    const int row = 4 * (k + 1);
    jac.block<4, 4>(row, L.state_offset(k + 1)) = Matrix4d::Identity();
    jac.block<4, 4>(row, L.state_offset(k)) = -dnext_dx;
    jac.block<4, 1>(row, L.input_offset(k)) = -dnext_du;
  }
  return jac;
}

MatrixXd quadratic_seed(const OcpLayout& L, const OcpWeights& w) {
  MatrixXd seed = MatrixXd::Zero(L.n_vars(), L.n_vars());
  for (int k = 0; k < L.n_state_stages; ++k) {
    seed.block<4, 4>(L.state_offset(k), L.state_offset(k)) = 2.0 * w.Q;
  }
  for (int k = 0; k < L.n_input_stages; ++k) {
    seed(L.input_offset(k), L.input_offset(k)) = 2.0 * w.R;
  }
  return seed;
}

// Assemble the shared skeleton. stage_box maps a state stage to its bounds.
template <typename StageBox>
BuiltOcp assemble(const DataPtr& data, const BoxConstraints& b,
                  StageBox&& stage_box) {
  BuiltOcp out;
  out.layout = data->layout;
  NlpProblem& p = out.problem;
  p.n_vars = out.layout.n_vars();
  p.objective = [data](const VectorXd& z) { return eval_objective(data, z); };
  p.objective_grad = [data](const VectorXd& z) {
    return eval_objective_grad(data, z);
  };
  p.n_eq = 4 * out.layout.n_state_stages;
  p.eq = [data](const VectorXd& z) { return eval_eq(data, z); };
  p.eq_jac = [data](const VectorXd& z) { return eval_eq_jac(data, z); };

  p.lower = VectorXd::Constant(p.n_vars, -kInfinity);
  p.upper = VectorXd::Constant(p.n_vars, kInfinity);
  for (int k = 0; k < out.layout.n_state_stages; ++k) {
    const auto [lo, up] = stage_box(k);
    p.lower.segment<4>(out.layout.state_offset(k)) = lo;
    p.upper.segment<4>(out.layout.state_offset(k)) = up;
  }
  for (int k = 0; k < out.layout.n_input_stages; ++k) {
    p.lower[out.layout.input_offset(k)] = b.input_lower;
    p.upper[out.layout.input_offset(k)] = b.input_upper;
  }
  p.hessian_seed = quadratic_seed(out.layout, data->w);
  return out;
}

DataPtr make_data(const State& x_init, const HorizonSpec& spec,
                  const OcpWeights& w, const ModelParams& mp, int horizon,
                  int n_inputs, TailKind tail, const Mlp& net) {
  auto d = std::make_shared<ProgramData>();
  d->layout.n_state_stages = horizon + 1;
  d->layout.n_input_stages = n_inputs;
  d->w = w;
  d->mp = mp;
  d->icfg.dt = spec.dt;
  d->x_init = x_init.vec();
  d->tail = tail;
  d->net = net;
  return d;
}

}  // namespace

bool BoxConstraints::valid() const {
  for (int i = 0; i < 4; ++i) {
    if (!(state_lower[i] < state_upper[i])) return false;
    if (!(terminal_lower[i] < terminal_upper[i])) return false;
  }
  return input_lower < input_upper;
}

BoxConstraints TightenedBox::tightened() const {
  if (!(margin >= 0.0)) {
    throw std::invalid_argument("tightened box: negative margin");
  }
  BoxConstraints out = base;
  out.state_lower.array() += margin;
  out.state_upper.array() -= margin;
  out.terminal_lower.array() += margin;
  out.terminal_upper.array() -= margin;
  if (!out.valid()) {
    throw std::invalid_argument("tightened box: margin empties a state row");
  }
  return out;
}

bool OcpWeights::valid() const {
  if (!(R > 0.0)) return false;
  if (!Q.isApprox(Q.transpose(), 1e-12)) return false;
  Eigen::SelfAdjointEigenSolver<Matrix4d> es(Q);
  return es.eigenvalues().minCoeff() >= -1e-12;
}

double stage_cost(const State& x, const Input& u, const OcpWeights& w) {
  const Vector4d xv = x.vec();
  return xv.dot(w.Q * xv) + w.R * u.force * u.force;
}

BuiltOcp build_baseline_ocp(const State& x_init, const HorizonSpec& spec,
                            const OcpWeights& w, const BoxConstraints& b,
                            const ModelParams& mp) {
  check_common(x_init, spec, w, b, mp);
  const int N = spec.full_horizon;
  DataPtr d = make_data(x_init, spec, w, mp, N, N, TailKind::none, Mlp{});
  return assemble(d, b, [&b, N](int k) {
    return k == N ? std::pair{b.terminal_lower, b.terminal_upper}
                  : std::pair{b.state_lower, b.state_upper};
  });
}

BuiltOcp build_tightened_ocp(const State& x_init, const HorizonSpec& spec,
                             const OcpWeights& w, const TightenedBox& tb,
                             const ModelParams& mp) {
  check_common(x_init, spec, w, tb.base, mp);
  const BoxConstraints shrunk = tb.tightened();
  const int N = spec.full_horizon;
  const int M = spec.short_horizon;
  DataPtr d = make_data(x_init, spec, w, mp, N, N, TailKind::none, Mlp{});
  return assemble(d, tb.base, [base = tb.base, shrunk, N, M](int k) {
    if (k <= M) return std::pair{base.state_lower, base.state_upper};
    if (k == N) return std::pair{shrunk.terminal_lower, shrunk.terminal_upper};
    return std::pair{shrunk.state_lower, shrunk.state_upper};
  });
}

BuiltOcp build_neural_horizon_ocp(const State& x_init, const HorizonSpec& spec,
                                  const OcpWeights& w, const BoxConstraints& b,
                                  const Mlp& net, bool enforce_tail_bounds,
                                  const ModelParams& mp) {
  check_common(x_init, spec, w, b, mp);
  const int N = spec.full_horizon;
  const int M = spec.short_horizon;
  const int n_tail = N - M;
  if (!net.valid() || net.n_in() != 4 || net.n_out() != 4 * n_tail) {
    throw std::invalid_argument("ocp: tail net must map 4 -> 4*(N-M)");
  }
  DataPtr d =
      make_data(x_init, spec, w, mp, M, M + 1, TailKind::state_sequence, net);
  BuiltOcp out = assemble(d, b, [&b](int) {
    return std::pair{b.state_lower, b.state_upper};
  });

  if (enforce_tail_bounds) {
    NlpProblem& p = out.problem;
    p.n_ineq = 4 * n_tail;
    p.ineq_lower.resize(p.n_ineq);
    p.ineq_upper.resize(p.n_ineq);
    for (int t = 0; t < n_tail; ++t) {
      const bool terminal = (M + 1 + t) == N;
      p.ineq_lower.segment<4>(4 * t) =
          terminal ? b.terminal_lower : b.state_lower;
      p.ineq_upper.segment<4>(4 * t) =
          terminal ? b.terminal_upper : b.state_upper;
    }
    p.ineq = [d](const VectorXd& z) {
      return forward(
          d->net,
          z.segment<4>(d->layout.state_offset(d->layout.n_state_stages - 1)));
    };
    p.ineq_jac = [d, n_tail](const VectorXd& z) {
      const int off = d->layout.state_offset(d->layout.n_state_stages - 1);
      MatrixXd jac = MatrixXd::Zero(4 * n_tail, d->layout.n_vars());
      jac.block(0, off, 4 * n_tail, 4) =
          input_jacobian(d->net, z.segment<4>(off));
      return jac;
    };
  }
  return out;
}

BuiltOcp build_cost_estimation_ocp(const State& x_init,
                                   const HorizonSpec& spec,
                                   const OcpWeights& w,
                                   const BoxConstraints& b, const Mlp& net,
                                   const ModelParams& mp) {
  check_common(x_init, spec, w, b, mp);
  const int M = spec.short_horizon;
  if (!net.valid() || net.n_in() != 4 || net.n_out() != 2) {
    throw std::invalid_argument("ocp: cost net must map 4 -> 2");
  }
  DataPtr d = make_data(x_init, spec, w, mp, M, M + 1, TailKind::cost_pair, net);
  return assemble(d, b, [&b](int) {
    return std::pair{b.state_lower, b.state_upper};
  });
}

Eigen::VectorXd zero_input_rollout_guess(const State& x_init,
                                         const BuiltOcp& built, double dt,
                                         const ModelParams& mp) {
  const OcpLayout& L = built.layout;
  VectorXd z = VectorXd::Zero(L.n_vars());
  State x = x_init;
  const IntegratorConfig icfg{dt};
  for (int k = 0; k < L.n_state_stages; ++k) {
    z.segment<4>(L.state_offset(k)) = x.vec();
    if (k + 1 < L.n_state_stages) x = rk4_step(x, Input{0.0}, icfg, mp);
  }
  return z.cwiseMax(built.problem.lower).cwiseMin(built.problem.upper);
}

}  // namespace nhmpc
