#include "nhmpc/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace nhmpc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

bool all_finite(const VectorXd& v) { return v.allFinite(); }

// Distance of value to the interval [lo, hi], zero inside.
double interval_dist(double value, double lo, double hi) {
  if (value < lo) return lo - value;
  if (value > hi) return value - hi;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Dense convex QP:  min 1/2 x'Qx + c'x  s.t.  A x = b,  l <= x <= u.
// Mehrotra predictor-corrector interior-point method. Bounds may be infinite
// per side; Q must be positive semidefinite with the missing curvature
// covered by finite bounds (the caller guarantees this).
// ---------------------------------------------------------------------------

struct QpData {
  MatrixXd Q;
  VectorXd c;
  MatrixXd A;  // may have zero rows
  VectorXd b;
  VectorXd l, u;
};

struct QpSolution {
  VectorXd x;
  VectorXd y;        // equality multipliers (internal sign: -A'y in stationarity)
  VectorXd zl, zu;   // bound multipliers, >= 0
  bool ok = false;
  int iterations = 0;
  double primal_res = kInfinity;
  double dual_res = kInfinity;
  double mu = kInfinity;
};

QpSolution solve_qp(const QpData& qp, const VectorXd& x_hint, double tol,
                    int max_iter = 60) {
  const int n = static_cast<int>(qp.c.size());
  const int m = static_cast<int>(qp.b.size());

  QpSolution out;
  out.x = x_hint;
  out.y = VectorXd::Zero(m);
  out.zl = VectorXd::Zero(n);
  out.zu = VectorXd::Zero(n);

  VectorXd lo = qp.l, up = qp.u;
  std::vector<bool> has_l(n), has_u(n);
  int n_sides = 0;
  for (int i = 0; i < n; ++i) {
    has_l[i] = std::isfinite(lo[i]);
    has_u[i] = std::isfinite(up[i]);
    if (has_l[i] && has_u[i]) {
      // The barrier needs strictly separated bounds; widen pinned variables
      // by a sliver far below any tolerance in play.
      const double wmin = 1e-12 * (1.0 + std::abs(lo[i]) + std::abs(up[i]));
      if (up[i] - lo[i] < wmin) {
        lo[i] -= wmin;
        up[i] += wmin;
      }
    }
    n_sides += (has_l[i] ? 1 : 0) + (has_u[i] ? 1 : 0);
  }

  // Push the start strictly inside the box.
  for (int i = 0; i < n; ++i) {
    if (has_l[i] && has_u[i]) {
      const double pad = 0.1 * (up[i] - lo[i]);
      out.x[i] = std::clamp(out.x[i], lo[i] + pad, up[i] - pad);
    } else if (has_l[i]) {
      out.x[i] = std::max(out.x[i], lo[i] + 1.0);
    } else if (has_u[i]) {
      out.x[i] = std::min(out.x[i], up[i] - 1.0);
    }
    if (has_l[i]) out.zl[i] = 1.0;
    if (has_u[i]) out.zu[i] = 1.0;
  }

  // Variables with no quadratic coupling, at least one finite bound, and a
  // single equality-row entry act as slacks.  Condensing them out of the
  // factorized system is exact (their barrier weight is strictly positive)
  // and shrinks the LU considerably for programs dominated by slack columns.
  std::vector<int> keep, elim;
  std::vector<int> elim_arow(n, -1);
  VectorXd elim_a = VectorXd::Zero(n);
  keep.reserve(n);
  for (int i = 0; i < n; ++i) {
    int row = -1;
    if ((has_l[i] || has_u[i]) && m > 0 && qp.Q.row(i).isZero(0.0) &&
        qp.Q.col(i).isZero(0.0)) {
      for (int r = 0; r < m; ++r) {
        if (qp.A(r, i) != 0.0) {
          if (row >= 0) {
            row = -1;
            break;
          }
          row = r;
        }
      }
    }
    if (row >= 0) {
      elim_arow[i] = row;
      elim_a[i] = qp.A(row, i);
      elim.push_back(i);
    } else {
      keep.push_back(i);
    }
  }
  const int nk = static_cast<int>(keep.size());
  MatrixXd Qk(nk, nk), Ak(m, nk);
  for (int a = 0; a < nk; ++a) {
    for (int b = 0; b < nk; ++b) Qk(b, a) = qp.Q(keep[b], keep[a]);
    for (int r = 0; r < m; ++r) Ak(r, a) = qp.A(r, keep[a]);
  }

  const double scale =
      1.0 + std::max(qp.c.lpNorm<Eigen::Infinity>(),
                     m > 0 ? qp.b.lpNorm<Eigen::Infinity>() : 0.0);

  VectorXd dl(n), du(n), theta(n);
  MatrixXd kkt(nk + m, nk + m);
  VectorXd rhs_x(n), rhs_h(m), rhs(nk + m), sol(nk + m), dy(m);
  VectorXd dx_aff(n), dzl_aff(n), dzu_aff(n), dx(n), dzl(n), dzu(n);

  double dual_reg = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      dl[i] = has_l[i] ? out.x[i] - lo[i] : 1.0;
      du[i] = has_u[i] ? up[i] - out.x[i] : 1.0;
      theta[i] = (has_l[i] ? out.zl[i] / dl[i] : 0.0) +
                 (has_u[i] ? out.zu[i] / du[i] : 0.0);
    }

    const VectorXd grad = qp.Q * out.x + qp.c;
    VectorXd r_d = grad - out.zl + out.zu;
    if (m > 0) r_d -= qp.A.transpose() * out.y;
    const VectorXd r_p = m > 0 ? VectorXd(qp.A * out.x - qp.b) : VectorXd();

    double gap = 0.0;
    for (int i = 0; i < n; ++i) {
      if (has_l[i]) gap += out.zl[i] * dl[i];
      if (has_u[i]) gap += out.zu[i] * du[i];
    }
    const double mu = n_sides > 0 ? gap / n_sides : 0.0;

    out.dual_res = r_d.lpNorm<Eigen::Infinity>();
    out.primal_res = m > 0 ? r_p.lpNorm<Eigen::Infinity>() : 0.0;
    out.mu = mu;
    out.iterations = it;
    if (out.dual_res <= tol * scale && out.primal_res <= tol * scale &&
        mu <= tol * scale) {
      out.ok = true;
      return out;
    }

    kkt.setZero();
    kkt.topLeftCorner(nk, nk) = Qk;
    for (int a = 0; a < nk; ++a) kkt(a, a) += theta[keep[a]];
    if (m > 0) {
      kkt.topRightCorner(nk, m) = Ak.transpose();
      kkt.bottomLeftCorner(m, nk) = Ak;
      kkt.bottomRightCorner(m, m).diagonal().setConstant(-dual_reg);
      for (int i : elim) {
        kkt(nk + elim_arow[i], nk + elim_arow[i]) -=
            elim_a[i] * elim_a[i] / std::max(theta[i], 1e-300);
      }
    }

    Eigen::PartialPivLU<MatrixXd> lu(kkt);

    // Solves the full augmented system from (rhs_x, rhs_h) through the
    // condensed factorization, scattering the step back to all n variables.
    auto solve_kkt = [&](VectorXd& dx_out) {
      for (int a = 0; a < nk; ++a) rhs[a] = rhs_x[keep[a]];
      if (m > 0) rhs.tail(m) = rhs_h;
      for (int i : elim) {
        rhs[nk + elim_arow[i]] -=
            elim_a[i] / std::max(theta[i], 1e-300) * rhs_x[i];
      }
      sol = lu.solve(rhs);
      if (!all_finite(sol)) return false;
      for (int a = 0; a < nk; ++a) dx_out[keep[a]] = sol[a];
      for (int i : elim) {
        dx_out[i] = (rhs_x[i] - elim_a[i] * sol[nk + elim_arow[i]]) /
                    std::max(theta[i], 1e-300);
      }
      return true;
    };

    // Affine (predictor) direction.
    rhs_x = -grad;
    if (m > 0) {
      rhs_x += qp.A.transpose() * out.y;
      rhs_h = -r_p;
    }
    if (!solve_kkt(dx_aff)) {
      if (dual_reg < 1e-8) {  // singular KKT, retry regularized
        dual_reg = std::max(1e-10, dual_reg * 100.0);
        continue;
      }
      return out;
    }

    for (int i = 0; i < n; ++i) {
      dzl_aff[i] = has_l[i] ? -out.zl[i] - out.zl[i] / dl[i] * dx_aff[i] : 0.0;
      dzu_aff[i] = has_u[i] ? -out.zu[i] + out.zu[i] / du[i] * dx_aff[i] : 0.0;
    }

    auto primal_step = [&](const VectorXd& d) {
      double a = 1.0;
      for (int i = 0; i < n; ++i) {
        if (has_l[i] && d[i] < 0.0) a = std::min(a, -dl[i] / d[i]);
        if (has_u[i] && d[i] > 0.0) a = std::min(a, du[i] / d[i]);
      }
      return a;
    };
    auto dual_step = [&](const VectorXd& dzl_, const VectorXd& dzu_) {
      double a = 1.0;
      for (int i = 0; i < n; ++i) {
        if (has_l[i] && dzl_[i] < 0.0) a = std::min(a, -out.zl[i] / dzl_[i]);
        if (has_u[i] && dzu_[i] < 0.0) a = std::min(a, -out.zu[i] / dzu_[i]);
      }
      return a;
    };

    double sigma = 0.0;
    if (n_sides > 0 && mu > 0.0) {
      const double ap = primal_step(dx_aff);
      const double ad = dual_step(dzl_aff, dzu_aff);
      double gap_aff = 0.0;
      for (int i = 0; i < n; ++i) {
        if (has_l[i])
          gap_aff += (out.zl[i] + ad * dzl_aff[i]) * (dl[i] + ap * dx_aff[i]);
        if (has_u[i])
          gap_aff += (out.zu[i] + ad * dzu_aff[i]) * (du[i] - ap * dx_aff[i]);
      }
      const double mu_aff = gap_aff / n_sides;
      sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
    }
    const double tau = sigma * mu;

    // Corrector direction with centering and Mehrotra second-order terms.
    rhs_x = -grad;
    if (m > 0) {
      rhs_x += qp.A.transpose() * out.y;
      rhs_h = -r_p;
    }
    for (int i = 0; i < n; ++i) {
      if (has_l[i]) rhs_x[i] += (tau - dx_aff[i] * dzl_aff[i]) / dl[i];
      if (has_u[i]) rhs_x[i] -= (tau + dx_aff[i] * dzu_aff[i]) / du[i];
    }
    if (!solve_kkt(dx)) return out;
    if (m > 0) dy = -sol.tail(m);

    for (int i = 0; i < n; ++i) {
      dzl[i] = has_l[i] ? (tau - dx_aff[i] * dzl_aff[i]) / dl[i] - out.zl[i] -
                              out.zl[i] / dl[i] * dx[i]
                        : 0.0;
      dzu[i] = has_u[i] ? (tau + dx_aff[i] * dzu_aff[i]) / du[i] - out.zu[i] +
                              out.zu[i] / du[i] * dx[i]
                        : 0.0;
    }

    const double eta = 0.995;
    const double ap = std::min(1.0, eta * primal_step(dx));
    const double ad = std::min(1.0, eta * dual_step(dzl, dzu));

    out.x += ap * dx;
    if (m > 0) out.y += ad * dy;
    for (int i = 0; i < n; ++i) {
      if (has_l[i]) out.zl[i] = std::max(out.zl[i] + ad * dzl[i], 0.0);
      if (has_u[i]) out.zu[i] = std::max(out.zu[i] + ad * dzu[i], 0.0);
    }
    if (!all_finite(out.x)) return out;

    // Divergence heuristic: equality rows cannot be met, multipliers blow up.
    if (m > 0 && out.y.lpNorm<Eigen::Infinity>() > 1e12 &&
        out.primal_res > 1e3 * tol * scale) {
      return out;
    }
  }
  out.ok = out.dual_res <= 10.0 * tol * scale &&
           out.primal_res <= 10.0 * tol * scale && out.mu <= 10.0 * tol * scale;
  return out;
}

// ---------------------------------------------------------------------------
// SQP driver
// ---------------------------------------------------------------------------

struct Evaluation {
  double f = 0.0;
  VectorXd grad;
  VectorXd g;   // equalities
  MatrixXd Jg;
  VectorXd h;   // ranged inequalities
  MatrixXd Jh;
  bool finite = false;
};

struct EvalCache {
  const NlpProblem* p = nullptr;

  bool evaluate(const VectorXd& z, Evaluation& ev) const {
    ev.f = p->objective(z);
    ev.grad = p->objective_grad(z);
    if (p->n_eq > 0) {
      ev.g = p->eq(z);
      ev.Jg = p->eq_jac(z);
    } else {
      ev.g.resize(0);
      ev.Jg.resize(0, p->n_vars);
    }
    if (p->n_ineq > 0) {
      ev.h = p->ineq(z);
      ev.Jh = p->ineq_jac(z);
    } else {
      ev.h.resize(0);
      ev.Jh.resize(0, p->n_vars);
    }
    if (static_cast<int>(ev.grad.size()) != p->n_vars ||
        static_cast<int>(ev.g.size()) != p->n_eq ||
        static_cast<int>(ev.h.size()) != p->n_ineq ||
        ev.Jg.rows() != p->n_eq || ev.Jg.cols() != p->n_vars ||
        ev.Jh.rows() != p->n_ineq || ev.Jh.cols() != p->n_vars) {
      throw std::invalid_argument("nlp: callback output dimension mismatch");
    }
    ev.finite = std::isfinite(ev.f) && all_finite(ev.grad) &&
                (p->n_eq == 0 || (all_finite(ev.g) && ev.Jg.allFinite())) &&
                (p->n_ineq == 0 || (all_finite(ev.h) && ev.Jh.allFinite()));
    return ev.finite;
  }

  // Merit-only evaluation for line-search trial points.
  bool cheap(const VectorXd& z, double& f, VectorXd& g, VectorXd& h) const {
    f = p->objective(z);
    if (p->n_eq > 0) g = p->eq(z);
    if (p->n_ineq > 0) h = p->ineq(z);
    return std::isfinite(f) && (p->n_eq == 0 || all_finite(g)) &&
           (p->n_ineq == 0 || all_finite(h));
  }
};

double l1_violation(const NlpProblem& p, const VectorXd& g, const VectorXd& h) {
  double v = 0.0;
  for (int i = 0; i < p.n_eq; ++i) v += std::abs(g[i]);
  for (int i = 0; i < p.n_ineq; ++i) {
    v += std::abs(interval_dist(h[i], p.ineq_lower[i], p.ineq_upper[i]));
  }
  return v;
}

double inf_violation(const NlpProblem& p, const VectorXd& g, const VectorXd& h) {
  double v = 0.0;
  for (int i = 0; i < p.n_eq; ++i) v = std::max(v, std::abs(g[i]));
  for (int i = 0; i < p.n_ineq; ++i) {
    v = std::max(v,
                 std::abs(interval_dist(h[i], p.ineq_lower[i], p.ineq_upper[i])));
  }
  return v;
}

double stationarity_norm(const NlpProblem& p, const Evaluation& ev,
                         const Duals& d) {
  VectorXd r = ev.grad;
  if (p.n_eq > 0) r += ev.Jg.transpose() * d.eq;
  if (p.n_ineq > 0) r += ev.Jh.transpose() * (d.ineq_upper - d.ineq_lower);
  r += d.bound_upper - d.bound_lower;
  return r.lpNorm<Eigen::Infinity>();
}

double complementarity_norm(const NlpProblem& p, const VectorXd& z,
                            const VectorXd& h, const Duals& d) {
  double c = 0.0;
  auto side = [&c](double lam, double gap, bool finite) {
    if (lam < 0.0) c = std::max(c, -lam);
    if (finite) {
      c = std::max(c, std::abs(lam * gap));
    } else {
      c = std::max(c, std::abs(lam));
    }
  };
  for (int i = 0; i < p.n_ineq; ++i) {
    side(d.ineq_lower[i], h[i] - p.ineq_lower[i],
         std::isfinite(p.ineq_lower[i]));
    side(d.ineq_upper[i], p.ineq_upper[i] - h[i],
         std::isfinite(p.ineq_upper[i]));
  }
  for (int i = 0; i < p.n_vars; ++i) {
    side(d.bound_lower[i], z[i] - p.lower[i], std::isfinite(p.lower[i]));
    side(d.bound_upper[i], p.upper[i] - z[i], std::isfinite(p.upper[i]));
  }
  return c;
}

Duals zero_duals(const NlpProblem& p) {
  Duals d;
  d.eq = VectorXd::Zero(p.n_eq);
  d.ineq_lower = VectorXd::Zero(p.n_ineq);
  d.ineq_upper = VectorXd::Zero(p.n_ineq);
  d.bound_lower = VectorXd::Zero(p.n_vars);
  d.bound_upper = VectorXd::Zero(p.n_vars);
  return d;
}

// Normalized copy of the problem with bounds filled in.
NlpProblem normalized(const NlpProblem& in) {
  NlpProblem p = in;
  if (p.lower.size() == 0) p.lower = VectorXd::Constant(p.n_vars, -kInfinity);
  if (p.upper.size() == 0) p.upper = VectorXd::Constant(p.n_vars, kInfinity);
  p.validate();
  return p;
}

}  // namespace

void NlpProblem::validate() const {
  if (n_vars <= 0) throw std::invalid_argument("nlp: n_vars must be positive");
  if (!objective || !objective_grad) {
    throw std::invalid_argument("nlp: objective callbacks required");
  }
  if (n_eq > 0 && (!eq || !eq_jac)) {
    throw std::invalid_argument("nlp: equality callbacks required");
  }
  if (n_ineq > 0) {
    if (!ineq || !ineq_jac) {
      throw std::invalid_argument("nlp: inequality callbacks required");
    }
    if (ineq_lower.size() != n_ineq || ineq_upper.size() != n_ineq) {
      throw std::invalid_argument("nlp: inequality bound size mismatch");
    }
    for (int i = 0; i < n_ineq; ++i) {
      if (!(ineq_lower[i] <= ineq_upper[i])) {
        throw std::invalid_argument("nlp: inequality bounds crossed");
      }
    }
  }
  if (lower.size() != n_vars || upper.size() != n_vars) {
    throw std::invalid_argument("nlp: box bound size mismatch");
  }
  for (int i = 0; i < n_vars; ++i) {
    if (!(lower[i] <= upper[i])) {
      throw std::invalid_argument("nlp: box bounds crossed");
    }
  }
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

SolverResult solve(const NlpProblem& problem_in, const SolverConfig& config,
                   const Eigen::VectorXd& initial_guess) {
  const auto t0 = std::chrono::steady_clock::now();
  const NlpProblem p = normalized(problem_in);
  if (config.kkt_tol <= 0.0 || config.max_iter < 1) {
    throw std::invalid_argument("nlp: bad solver config");
  }
  if (initial_guess.size() != p.n_vars) {
    throw std::invalid_argument("nlp: initial guess length mismatch");
  }

  const int n = p.n_vars;
  const int me = p.n_eq;
  const int mi = p.n_ineq;

  SolverResult res;
  res.status = SolveStatus::max_iter;
  res.duals = zero_duals(p);

  VectorXd z = initial_guess.cwiseMax(p.lower).cwiseMin(p.upper);

  MatrixXd B;
  if (config.hessian_mode == HessianMode::quasi_newton) {
    B = p.hessian_seed.size() > 0 ? p.hessian_seed
                                  : MatrixXd::Identity(n, n);
  }
  const bool seeded = p.hessian_seed.size() > 0;
  bool bfgs_scaled = seeded;  // skip auto-scaling when a seed was supplied
  bool bfgs_reset_used = false;

  EvalCache cache{&p};
  Evaluation ev;
  double rho = 1.0;  // l1 merit penalty

  double best_viol = kInfinity;
  double best_obj = kInfinity;
  int stall_count = 0;
  int ls_failures = 0;

  const double qp_tol = std::clamp(0.1 * config.kkt_tol, 1e-12, 1e-9);

  auto finish = [&](SolveStatus st) {
    res.status = st;
    res.primal = z;
    res.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return res;
  };

  if (!cache.evaluate(z, ev)) return finish(SolveStatus::numerical_failure);

  for (int iter = 0; iter < config.max_iter; ++iter) {
    res.iterations = iter + 1;  // passes entered; matches trace entries

    const double viol_inf = inf_violation(p, ev.g, ev.h);
    const double viol_l1 = l1_violation(p, ev.g, ev.h);
    const double stat = stationarity_norm(p, ev, res.duals);
    const double comp = complementarity_norm(p, z, ev.h, res.duals);
    const double kkt = std::max({stat, viol_inf, comp});

    res.kkt_residual = kkt;
    res.constraint_violation = viol_inf;
    res.objective = ev.f;

    if (config.record_trace) {
      res.trace.push_back({ev.f, kkt, viol_inf, 0.0, 0.0});
    }

    if (kkt <= config.kkt_tol) {
      return finish(SolveStatus::converged);
    }

    // Feasibility-restoration stall: neither the violation nor the objective
    // has improved on its best for a stretch of iterations. Trading
    // feasibility for objective (or back) is normal SQP behaviour; only a
    // simultaneous stagnation of both indicates an unreachable constraint set.
    // The l1 norm is the right stagnation signal: it is what the merit
    // function and the elastic subproblem can actually reduce, and on an
    // irreducibly contradictory set it sits exactly at its positive minimum
    // while the pointwise worst row may still wander.
    if (viol_inf > config.kkt_tol) {
      const bool viol_improved = best_viol - viol_l1 >= 1e-10;
      const bool obj_improved =
          best_obj - ev.f >= 1e-8 * std::max(1.0, std::abs(best_obj));
      if (!viol_improved && !obj_improved) {
        if (++stall_count >= 10) return finish(SolveStatus::infeasible);
      } else {
        stall_count = 0;
      }
      best_viol = std::min(best_viol, viol_l1);
    } else {
      stall_count = 0;
    }
    best_obj = std::min(best_obj, ev.f);

    if (config.hessian_mode == HessianMode::exact) {
      if (!p.lagrangian_hessian) {
        throw std::invalid_argument(
            "nlp: exact hessian mode requires lagrangian_hessian callback");
      }
      B = p.lagrangian_hessian(
          z, res.duals.eq,
          VectorXd(res.duals.ineq_upper - res.duals.ineq_lower));
      B = 0.5 * (B + B.transpose().eval());
      // Ridge until positive definite; the QP needs convex curvature.
      double ridge = 0.0;
      while (true) {
        Eigen::LLT<MatrixXd> llt(
            ridge > 0.0 ? MatrixXd(B + ridge * MatrixXd::Identity(n, n)) : B);
        if (llt.info() == Eigen::Success) {
          if (ridge > 0.0) B += ridge * MatrixXd::Identity(n, n);
          break;
        }
        ridge = ridge == 0.0 ? 1e-8 : ridge * 100.0;
        if (ridge > 1e8) return finish(SolveStatus::numerical_failure);
      }
    }

    // --- QP subproblem over w = [d; s]:
    //   min 1/2 d'Bd + grad'd   s.t. Jg d = -g,  Jh d - s = -h,
    //   lower-z <= d <= upper-z,  ineq_lower <= s <= ineq_upper.
    const int nw = n + mi;
    const int mrows = me + mi;
    QpData qp;
    qp.Q = MatrixXd::Zero(nw, nw);
    qp.Q.topLeftCorner(n, n) = B;
    qp.c = VectorXd::Zero(nw);
    qp.c.head(n) = ev.grad;
    qp.A = MatrixXd::Zero(mrows, nw);
    qp.b = VectorXd::Zero(mrows);
    if (me > 0) {
      qp.A.topLeftCorner(me, n) = ev.Jg;
      qp.b.head(me) = -ev.g;
    }
    if (mi > 0) {
      qp.A.bottomLeftCorner(mi, n) = ev.Jh;
      qp.A.bottomRightCorner(mi, mi) = -MatrixXd::Identity(mi, mi);
      qp.b.tail(mi) = -ev.h;
    }
    qp.l = VectorXd::Zero(nw);
    qp.u = VectorXd::Zero(nw);
    qp.l.head(n) = p.lower - z;
    qp.u.head(n) = p.upper - z;
    if (mi > 0) {
      qp.l.tail(mi) = p.ineq_lower;
      qp.u.tail(mi) = p.ineq_upper;
    }

    VectorXd hint = VectorXd::Zero(nw);
    if (mi > 0) {
      hint.tail(mi) = ev.h.cwiseMax(p.ineq_lower).cwiseMin(p.ineq_upper);
    }

    QpSolution qs = solve_qp(qp, hint, qp_tol);

    bool used_elastic = false;
    if (!qs.ok) {
      used_elastic = true;
      // Elastic relaxation: rows gain slack pairs p,q >= 0 with linear
      // penalty, which keeps the subproblem feasible and bounded.
      const double rho_e = std::max(100.0, 10.0 * rho);
      QpData eq = qp;
      const int ne = nw + 2 * mrows;
      eq.Q = MatrixXd::Zero(ne, ne);
      eq.Q.topLeftCorner(nw, nw) = qp.Q;
      eq.c = VectorXd::Constant(ne, rho_e);
      eq.c.head(nw) = qp.c;
      eq.A = MatrixXd::Zero(mrows, ne);
      eq.A.leftCols(nw) = qp.A;
      eq.A.middleCols(nw, mrows) = MatrixXd::Identity(mrows, mrows);
      eq.A.rightCols(mrows) = -MatrixXd::Identity(mrows, mrows);
      eq.l = VectorXd::Zero(ne);
      eq.l.head(nw) = qp.l;
      eq.u = VectorXd::Constant(ne, kInfinity);
      eq.u.head(nw) = qp.u;
      VectorXd ehint = VectorXd::Constant(ne, 0.1);
      ehint.head(nw) = hint;
      qs = solve_qp(eq, ehint, qp_tol);
      if (!qs.ok) return finish(SolveStatus::numerical_failure);
      qs.x.conservativeResize(nw);
      qs.zl.conservativeResize(nw);
      qs.zu.conservativeResize(nw);
    }

    const VectorXd d = qs.x.head(n);

    // Multiplier estimates from the QP.
    Duals new_duals = zero_duals(p);
    if (me > 0) new_duals.eq = -qs.y.head(me);
    if (mi > 0) {
      new_duals.ineq_lower = qs.zl.tail(mi);
      new_duals.ineq_upper = qs.zu.tail(mi);
    }
    new_duals.bound_lower = qs.zl.head(n);
    new_duals.bound_upper = qs.zu.head(n);

    double dual_max = 0.0;
    if (me > 0)
      dual_max = std::max(dual_max, new_duals.eq.lpNorm<Eigen::Infinity>());
    if (mi > 0) {
      dual_max =
          std::max(dual_max, new_duals.ineq_lower.lpNorm<Eigen::Infinity>());
      dual_max =
          std::max(dual_max, new_duals.ineq_upper.lpNorm<Eigen::Infinity>());
    }
    // Elastic row duals saturate at the penalty weight on irreducible rows,
    // so they estimate the penalty rather than any true multiplier; feeding
    // them back into rho compounds it without bound on infeasible problems.
    if (!used_elastic && rho < 1.2 * dual_max) {
      rho = std::max(2.0 * rho, 1.5 * dual_max);
    }

    // Linearized residual after the step (nonzero only for elastic steps).
    double viol_lin = 0.0;
    {
      VectorXd glin = me > 0 ? VectorXd(ev.g + ev.Jg * d) : VectorXd();
      for (int i = 0; i < me; ++i) viol_lin += std::abs(glin[i]);
      if (mi > 0) {
        VectorXd hlin = ev.h + ev.Jh * d;
        for (int i = 0; i < mi; ++i) {
          viol_lin +=
              std::abs(interval_dist(hlin[i], p.ineq_lower[i], p.ineq_upper[i]));
        }
      }
    }

    const double step_norm = d.lpNorm<Eigen::Infinity>();
    if (step_norm <= 1e-13 * (1.0 + z.lpNorm<Eigen::Infinity>())) {
      break;  // no further progress available
    }

    double descent = ev.grad.dot(d) - rho * (viol_l1 - viol_lin);
    if (descent >= 0.0) {
      rho = 2.0 * rho + dual_max;
      descent = ev.grad.dot(d) - rho * (viol_l1 - viol_lin);
      if (descent >= 0.0) descent = -1e-16;
    }

    const double merit0 = ev.f + rho * viol_l1;
    double alpha = 1.0;
    bool accepted = false;
    double f_t = 0.0;
    VectorXd g_t, h_t;
    for (int ls = 0; ls < 32; ++ls) {
      const VectorXd z_t = z + alpha * d;
      if (cache.cheap(z_t, f_t, g_t, h_t)) {
        const double merit_t = f_t + rho * l1_violation(p, g_t, h_t);
        if (merit_t <= merit0 + 1e-4 * alpha * descent) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }

    if (!accepted) {
      if (config.hessian_mode == HessianMode::quasi_newton &&
          !bfgs_reset_used) {
        // Curvature estimate may be corrupted; restart it once.
        bfgs_reset_used = true;
        B = seeded ? p.hessian_seed : MatrixXd::Identity(n, n);
        bfgs_scaled = seeded;
        res.duals = new_duals;
        continue;
      }
      if (++ls_failures >= 2) {
        return finish(viol_inf > config.kkt_tol
                          ? SolveStatus::infeasible
                          : SolveStatus::numerical_failure);
      }
      res.duals = new_duals;
      continue;
    }
    ls_failures = 0;

    const VectorXd z_new = z + alpha * d;
    Evaluation ev_new;
    if (!cache.evaluate(z_new, ev_new)) {
      return finish(SolveStatus::numerical_failure);
    }

    if (config.hessian_mode == HessianMode::quasi_newton) {
      // Damped BFGS on the Lagrangian gradient difference.
      const VectorXd s = z_new - z;
      VectorXd lg_new = ev_new.grad;
      VectorXd lg_old = ev.grad;
      if (me > 0) {
        lg_new += ev_new.Jg.transpose() * new_duals.eq;
        lg_old += ev.Jg.transpose() * new_duals.eq;
      }
      if (mi > 0) {
        const VectorXd lam = new_duals.ineq_upper - new_duals.ineq_lower;
        lg_new += ev_new.Jh.transpose() * lam;
        lg_old += ev.Jh.transpose() * lam;
      }
      VectorXd yv = lg_new - lg_old;

      if (!bfgs_scaled) {
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
          B *= yv.squaredNorm() / sy;
          bfgs_scaled = true;
        }
      }

      const VectorXd Bs = B * s;
      const double sBs = s.dot(Bs);
      double sy = s.dot(yv);
      if (sBs > 1e-16) {
        if (sy < 0.2 * sBs) {  // Powell damping
          const double theta = 0.8 * sBs / (sBs - sy);
          yv = theta * yv + (1.0 - theta) * Bs;
          sy = s.dot(yv);
        }
        if (sy > 1e-16) {
          B += yv * yv.transpose() / sy - Bs * Bs.transpose() / sBs;
        }
      }
    }

    if (config.record_trace && !res.trace.empty()) {
      res.trace.back().step_norm = alpha * step_norm;
      res.trace.back().step_length = alpha;
    }

    z = z_new;
    ev = ev_new;
    res.duals = new_duals;
  }

  return finish(SolveStatus::max_iter);
}

double kkt_residual(const NlpProblem& problem_in, const Eigen::VectorXd& primal,
                    const Duals& duals_in) {
  const NlpProblem p = normalized(problem_in);
  if (primal.size() != p.n_vars) {
    throw std::invalid_argument("nlp: primal length mismatch");
  }
  Duals d = duals_in;
  auto fix = [](VectorXd& v, int len) {
    if (v.size() == 0) v = VectorXd::Zero(len);
    if (static_cast<int>(v.size()) != len) {
      throw std::invalid_argument("nlp: dual length mismatch");
    }
  };
  fix(d.eq, p.n_eq);
  fix(d.ineq_lower, p.n_ineq);
  fix(d.ineq_upper, p.n_ineq);
  fix(d.bound_lower, p.n_vars);
  fix(d.bound_upper, p.n_vars);

  EvalCache cache{&p};
  Evaluation ev;
  cache.evaluate(primal, ev);

  double r = stationarity_norm(p, ev, d);
  r = std::max(r, inf_violation(p, ev.g, ev.h));
  for (int i = 0; i < p.n_vars; ++i) {
    r = std::max(r, std::abs(interval_dist(primal[i], p.lower[i], p.upper[i])));
  }
  r = std::max(r, complementarity_norm(p, primal, ev.h, d));
  return r;
}

Eigen::VectorXd warm_start_shift(const SolverResult& previous,
                                 const OcpLayout& layout) {
  if (!layout.valid()) throw std::invalid_argument("warm_start_shift: bad layout");
  if (previous.primal.size() != layout.n_vars()) {
    throw std::invalid_argument("warm_start_shift: layout/primal mismatch");
  }
  VectorXd shifted(layout.n_vars());
  const int sd = layout.state_dim;
  const int id = layout.input_dim;
  for (int k = 0; k < layout.n_state_stages; ++k) {
    const int src = std::min(k + 1, layout.n_state_stages - 1);
    shifted.segment(layout.state_offset(k), sd) =
        previous.primal.segment(layout.state_offset(src), sd);
  }
  for (int k = 0; k < layout.n_input_stages; ++k) {
    const int src = std::min(k + 1, layout.n_input_stages - 1);
    shifted.segment(layout.input_offset(k), id) =
        previous.primal.segment(layout.input_offset(src), id);
  }
  return shifted;
}

}  // namespace nhmpc
