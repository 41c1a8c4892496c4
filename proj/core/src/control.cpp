#include "nhmpc/control.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "nhmpc/util.hpp"

namespace nhmpc {

namespace {

using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool is_learned(ControllerKind k) {
  return k == ControllerKind::neural_horizon ||
         k == ControllerKind::neural_horizon_unbounded ||
         k == ControllerKind::cost_estimation ||
         k == ControllerKind::imitation;
}

// The short-horizon controller reuses the full-horizon builder with N
// replaced by M; the spec still has to pass its own validity check.
HorizonSpec truncated_spec(const HorizonSpec& h) {
  HorizonSpec s = h;
  s.full_horizon = h.short_horizon;
  s.short_horizon = std::max(1, h.short_horizon - 1);
  return s;
}

}  // namespace

const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::baseline: return "baseline";
    case ControllerKind::short_horizon: return "short";
    case ControllerKind::neural_horizon: return "neural_horizon";
    case ControllerKind::neural_horizon_unbounded:
      return "neural_horizon_unbounded";
    case ControllerKind::cost_estimation: return "cost_estimation";
    case ControllerKind::imitation: return "imitation";
  }
  return "unknown";
}

ControllerKind controller_kind_from_string(const std::string& name) {
  if (name == "baseline") return ControllerKind::baseline;
  if (name == "short" || name == "short_horizon") {
    return ControllerKind::short_horizon;
  }
  if (name == "neural_horizon" || name == "neural") {
    return ControllerKind::neural_horizon;
  }
  if (name == "neural_horizon_unbounded" || name == "neural_unbounded") {
    return ControllerKind::neural_horizon_unbounded;
  }
  if (name == "cost_estimation" || name == "cost") {
    return ControllerKind::cost_estimation;
  }
  if (name == "imitation") return ControllerKind::imitation;
  throw std::invalid_argument("unknown controller kind: " + name);
}

Controller::Controller(ControllerSpec spec) : spec_(std::move(spec)) {
  if (!spec_.horizons.valid()) {
    throw std::invalid_argument("controller: invalid horizons");
  }
  const int n_tail =
      spec_.horizons.full_horizon - spec_.horizons.short_horizon;
  if (is_learned(spec_.kind)) {
    if (!spec_.net.valid() || spec_.net.n_in() != 4) {
      throw std::invalid_argument("controller: net must take 4 inputs");
    }
    const int want = spec_.kind == ControllerKind::cost_estimation ? 2
                     : spec_.kind == ControllerKind::imitation     ? 1
                                                                   : 4 * n_tail;
    if (spec_.net.n_out() != want) {
      throw std::invalid_argument(
          "controller: net output width does not match the controller kind");
    }
  }
}

void Controller::reset() { previous_.reset(); }

StepResult Controller::mpc_step(const State& x) {
  if (!x.finite()) throw std::invalid_argument("mpc_step: non-finite state");
  StepResult out;

  if (spec_.kind == ControllerKind::imitation) {
    const auto t0 = Clock::now();
    const VectorXd u = forward(spec_.net, x.vec());
    out.diag.solve_ms = ms_since(t0);
    out.u = Input{u[0]};
    out.diag.status = SolveStatus::converged;
    out.ok = true;
    return out;
  }

  BuiltOcp built;
  switch (spec_.kind) {
    case ControllerKind::baseline:
      built = build_baseline_ocp(x, spec_.horizons, spec_.weights,
                                 spec_.bounds, spec_.model);
      break;
    case ControllerKind::short_horizon:
      built = build_baseline_ocp(x, truncated_spec(spec_.horizons),
                                 spec_.weights, spec_.bounds, spec_.model);
      break;
    case ControllerKind::neural_horizon:
      built = build_neural_horizon_ocp(x, spec_.horizons, spec_.weights,
                                       spec_.bounds, spec_.net, true,
                                       spec_.model);
      break;
    case ControllerKind::neural_horizon_unbounded:
      built = build_neural_horizon_ocp(x, spec_.horizons, spec_.weights,
                                       spec_.bounds, spec_.net, false,
                                       spec_.model);
      break;
    case ControllerKind::cost_estimation:
      built = build_cost_estimation_ocp(x, spec_.horizons, spec_.weights,
                                        spec_.bounds, spec_.net, spec_.model);
      break;
    case ControllerKind::imitation:
      break;  // handled above
  }

  VectorXd guess;
  bool warm = false;
  if (previous_ && previous_->primal.size() == built.layout.n_vars()) {
    guess = warm_start_shift(*previous_, layout_)
                .cwiseMax(built.problem.lower)
                .cwiseMin(built.problem.upper);
    warm = true;
  } else {
    guess =
        zero_input_rollout_guess(x, built, spec_.horizons.dt, spec_.model);
  }

  const auto t0 = Clock::now();
  SolverResult r = solve(built.problem, spec_.solver, guess);
  out.diag.solve_ms = ms_since(t0);
  out.diag.status = r.status;
  out.diag.iterations = r.iterations;
  out.diag.kkt_residual = r.kkt_residual;
  out.diag.objective = r.objective;
  out.diag.warm_started = warm;

  if (r.status == SolveStatus::converged) {
    out.u = Input{r.primal[built.layout.input_offset(0)]};
    out.ok = true;
    layout_ = built.layout;
    previous_ = std::move(r);
  } else {
    out.ok = false;
    previous_.reset();
  }
  return out;
}

ClosedLoopRecord simulate(Controller& controller, const State& x0,
                          double duration) {
  const double dt = controller.spec().horizons.dt;
  if (duration < 0.0) throw std::invalid_argument("simulate: negative duration");
  const double steps_real = duration / dt;
  const int n_steps = static_cast<int>(std::lround(steps_real));
  if (std::abs(steps_real - n_steps) > 1e-9) {
    throw std::invalid_argument(
        "simulate: duration must be a whole number of sample periods");
  }

  controller.reset();
  ClosedLoopRecord rec;
  rec.dt = dt;
  if (n_steps == 0) return rec;

  const IntegratorConfig icfg{dt};
  State x = x0;
  rec.states.push_back(x);
  for (int i = 0; i < n_steps; ++i) {
    const StepResult step = controller.mpc_step(x);
    rec.diagnostics.push_back(step.diag);
    if (!step.ok) {
      rec.termination = Termination::infeasible;
      rec.failure_time = i * dt;
      break;
    }
    rec.inputs.push_back(step.u.force);
    rec.stage_costs.push_back(
        stage_cost(x, step.u, controller.spec().weights));
    x = rk4_step(x, step.u, icfg, controller.spec().model);
    if (!x.finite()) {  // an unclamped learned policy can blow the plant up
      rec.termination = Termination::infeasible;
      rec.failure_time = (i + 1) * dt;
      break;
    }
    rec.states.push_back(x);
  }
  return rec;
}

double closed_loop_cost(const ClosedLoopRecord& record, const OcpWeights& w) {
  double cost = 0.0;
  for (std::size_t i = 0; i < record.inputs.size(); ++i) {
    cost += stage_cost(record.states[i], Input{record.inputs[i]}, w);
  }
  return cost;
}

Metrics compute_metrics(const ClosedLoopRecord& record, const OcpWeights& w,
                        const BoxConstraints& b, double tol) {
  Metrics m;
  m.n_steps = static_cast<int>(record.inputs.size());
  m.completed = record.termination == Termination::completed;
  m.trajectory_cost = closed_loop_cost(record, w);
  if (!record.states.empty()) {
    m.final_state_norm = record.states.back().vec().lpNorm<Eigen::Infinity>();
  }

  const int n = static_cast<int>(record.diagnostics.size());
  if (n > 0) {
    double sum = 0.0;
    for (const auto& d : record.diagnostics) sum += d.solve_ms;
    m.mean_solve_ms = sum / n;
    if (n > 1) {
      double sq = 0.0;
      for (const auto& d : record.diagnostics) {
        sq += (d.solve_ms - m.mean_solve_ms) * (d.solve_ms - m.mean_solve_ms);
      }
      m.std_solve_ms = std::sqrt(sq / (n - 1));
    }
  }

  static const char* kStateNames[4] = {"x_cart", "theta", "v", "omega"};
  for (std::size_t k = 0; k < record.states.size(); ++k) {
    const Eigen::Vector4d xv = record.states[k].vec();
    for (int i = 0; i < 4; ++i) {
      const double under = b.state_lower[i] - xv[i];
      const double over = xv[i] - b.state_upper[i];
      const double amount = std::max(under, over);
      if (amount > tol) {
        m.violations.push_back({static_cast<int>(k),
                                static_cast<double>(k) * record.dt,
                                kStateNames[i], amount});
      }
    }
  }
  for (std::size_t k = 0; k < record.inputs.size(); ++k) {
    const double under = b.input_lower - record.inputs[k];
    const double over = record.inputs[k] - b.input_upper;
    const double amount = std::max(under, over);
    if (amount > tol) {
      m.violations.push_back(
          {static_cast<int>(k), static_cast<double>(k) * record.dt, "F",
           amount});
    }
  }
  return m;
}

std::vector<SweepRow> horizon_sweep(const std::vector<int>& horizon_list,
                                    const State& x0, double duration,
                                    const ControllerSpec& base) {
  if (horizon_list.empty()) {
    throw std::invalid_argument("horizon_sweep: empty horizon list");
  }
  std::vector<SweepRow> rows;
  rows.reserve(horizon_list.size());
  for (int N : horizon_list) {
    if (N < 2) throw std::invalid_argument("horizon_sweep: horizon below 2");
    ControllerSpec spec = base;
    spec.kind = ControllerKind::baseline;
    spec.net = Mlp{};
    spec.horizons.full_horizon = N;
    spec.horizons.short_horizon =
        std::max(1, std::min(N - 1, base.horizons.short_horizon));
    Controller controller(spec);
    const ClosedLoopRecord rec = simulate(controller, x0, duration);
    SweepRow row;
    row.horizon = N;
    row.completed = rec.termination == Termination::completed;
    row.cost = closed_loop_cost(rec, spec.weights);
    row.failure_time = rec.failure_time;
    if (!rec.states.empty()) {
      row.final_state_norm = rec.states.back().vec().lpNorm<Eigen::Infinity>();
    }
    rows.push_back(row);
  }
  return rows;
}

void write_run_csv(const ClosedLoopRecord& record, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_run_csv: cannot open " + path);
  out << "t,x_cart,theta,v,omega,F,stage_cost,solve_ms,status\n";
  for (std::size_t i = 0; i < record.diagnostics.size(); ++i) {
    const Eigen::Vector4d xv = record.states[i].vec();
    out << format_double(static_cast<double>(i) * record.dt);
    for (int j = 0; j < 4; ++j) out << ',' << format_double(xv[j]);
    if (i < record.inputs.size()) {
      out << ',' << format_double(record.inputs[i]) << ','
          << format_double(record.stage_costs[i]);
    } else {
      out << ",,";  // the failing step applied no input
    }
    out << ',' << format_double(record.diagnostics[i].solve_ms) << ','
        << to_string(record.diagnostics[i].status) << "\n";
  }
  if (!out) throw std::runtime_error("write_run_csv: write failed");
}

}  // namespace nhmpc
