// SQP solver for smooth constrained NLPs: QP subproblems from linearized
// constraints plus a regularized Lagrangian Hessian, l1-merit line search,
// elastic relaxation when a subproblem is infeasible.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <vector>

#include "racepred/common.hpp"
#include "racepred/qp.hpp"

namespace racepred {

// Convention: g(x) = 0, h(x) >= 0, lb <= x <= ub.
// Lagrangian L = f - lambda'g - mu'h with mu >= 0.
struct NlpProblem {
  int num_vars = 0;
  int num_eq = 0;
  int num_ineq = 0;
  Eigen::VectorXd lb, ub;  // empty => unbounded

  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> objective_gradient;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eq_constraints;
  std::function<SpMat(const Eigen::VectorXd&)> eq_jacobian;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> ineq_constraints;
  std::function<SpMat(const Eigen::VectorXd&)> ineq_jacobian;
  // Optional: Hessian of the Lagrangian (or a PSD model of it). Without it a
  // damped dense BFGS approximation is maintained.
  std::function<SpMat(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&)>
      lagrangian_hessian;
};

enum class NlpStatus { converged, max_iter, line_search_failure, qp_failure };

inline const char* to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::converged: return "converged";
    case NlpStatus::max_iter: return "max_iter";
    case NlpStatus::line_search_failure: return "line_search_failure";
    default: return "qp_failure";
  }
}

struct NlpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;      // equality duals
  Eigen::VectorXd mu;          // inequality duals, >= 0
  Eigen::VectorXd z_lb, z_ub;  // bound duals, >= 0
  NlpStatus status = NlpStatus::max_iter;
  double stationarity_residual = kInf;
  double eq_residual = kInf;
  double ineq_residual = kInf;
  double comp_residual = kInf;
  int iterations = 0;
  double solve_time_s = 0.0;
  std::vector<double> merit_history;
};

struct NlpOptions {
  double tol = 1e-6;
  int max_iter = 100;
  double hessian_reg = 1e-8;     // base damping added to the Hessian diagonal
  double step_bound = 1e4;       // infinity-norm box on each SQP step
  double armijo_c1 = 1e-4;
  double ls_alpha_min = 1e-12;
  double qp_tol = 0.0;  // 0 => derived from tol
  int qp_max_iter = 100;
  bool record_history = false;
  bool verbose = false;
};

struct KktResiduals {
  double stationarity = kInf;
  double eq = kInf;
  double ineq = kInf;
  double comp = kInf;
  double max_residual() const { return std::max({stationarity, eq, ineq, comp}); }
};

// Direct evaluation of the first-order optimality system from the problem
// callbacks; per-component scaling keeps rows with large gradient magnitudes
// from dominating the test.
inline KktResiduals kkt_residuals(const NlpProblem& p, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu,
                                  const Eigen::VectorXd& z_lb, const Eigen::VectorXd& z_ub) {
  KktResiduals r;
  const int n = p.num_vars;
  Eigen::VectorXd grad = p.objective_gradient(x);
  Eigen::VectorXd jg_l = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd jh_m = Eigen::VectorXd::Zero(n);
  if (p.num_eq > 0) jg_l = p.eq_jacobian(x).transpose() * lambda;
  if (p.num_ineq > 0) jh_m = p.ineq_jacobian(x).transpose() * mu;

  r.stationarity = 0.0;
  for (int i = 0; i < n; ++i) {
    const double zl = z_lb.size() ? z_lb[i] : 0.0;
    const double zu = z_ub.size() ? z_ub[i] : 0.0;
    const double res = grad[i] - jg_l[i] - jh_m[i] - zl + zu;
    const double scale =
        1.0 + std::max({std::abs(grad[i]), std::abs(jg_l[i]), std::abs(jh_m[i]), std::abs(zl), std::abs(zu)});
    r.stationarity = std::max(r.stationarity, std::abs(res) / scale);
  }

  r.eq = 0.0;
  if (p.num_eq > 0) r.eq = p.eq_constraints(x).lpNorm<Eigen::Infinity>();
  r.ineq = 0.0;
  r.comp = 0.0;
  if (p.num_ineq > 0) {
    Eigen::VectorXd h = p.ineq_constraints(x);
    for (int i = 0; i < h.size(); ++i) {
      r.ineq = std::max(r.ineq, -h[i]);
      r.comp = std::max(r.comp, std::abs(mu[i] * h[i]) / (1.0 + std::abs(mu[i])));
    }
  }
  for (int i = 0; i < n; ++i) {
    if (p.lb.size() && !std::isinf(p.lb[i])) {
      r.ineq = std::max(r.ineq, p.lb[i] - x[i]);
      if (z_lb.size()) r.comp = std::max(r.comp, std::abs(z_lb[i] * (x[i] - p.lb[i])) / (1.0 + z_lb[i]));
    }
    if (p.ub.size() && !std::isinf(p.ub[i])) {
      r.ineq = std::max(r.ineq, x[i] - p.ub[i]);
      if (z_ub.size()) r.comp = std::max(r.comp, std::abs(z_ub[i] * (p.ub[i] - x[i])) / (1.0 + z_ub[i]));
    }
  }
  return r;
}

struct DerivativeReport {
  double grad_err = 0.0;
  double eq_jac_err = 0.0;
  double ineq_jac_err = 0.0;
  double max_err() const { return std::max({grad_err, eq_jac_err, ineq_jac_err}); }
};

// Central finite-difference validation of the user-supplied derivatives.
inline DerivativeReport check_derivatives(const NlpProblem& p, const Eigen::VectorXd& x,
                                          double step = 1e-6) {
  DerivativeReport rep;
  const int n = p.num_vars;
  auto rel = [](double a, double b) { return std::abs(a - b) / (1.0 + std::max(std::abs(a), std::abs(b))); };

  Eigen::VectorXd grad = p.objective_gradient(x);
  Eigen::MatrixXd jg, jh;
  if (p.num_eq > 0) jg = Eigen::MatrixXd(p.eq_jacobian(x));
  if (p.num_ineq > 0) jh = Eigen::MatrixXd(p.ineq_jacobian(x));

  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    rep.grad_err = std::max(rep.grad_err, rel(grad[i], (p.objective(xp) - p.objective(xm)) / (2 * step)));
    if (p.num_eq > 0) {
      Eigen::VectorXd d = (p.eq_constraints(xp) - p.eq_constraints(xm)) / (2 * step);
      for (int r = 0; r < p.num_eq; ++r) rep.eq_jac_err = std::max(rep.eq_jac_err, rel(jg(r, i), d[r]));
    }
    if (p.num_ineq > 0) {
      Eigen::VectorXd d = (p.ineq_constraints(xp) - p.ineq_constraints(xm)) / (2 * step);
      for (int r = 0; r < p.num_ineq; ++r) rep.ineq_jac_err = std::max(rep.ineq_jac_err, rel(jh(r, i), d[r]));
    }
  }
  return rep;
}

class SqpSolver {
 public:
  NlpSolution solve(const NlpProblem& p, const Eigen::VectorXd& x_init, const NlpOptions& opts = {},
                    const NlpSolution* warm = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = p.num_vars;

    NlpSolution sol;
    sol.x = x_init;
    clamp_to_bounds(p, sol.x);
    sol.lambda = (warm && warm->lambda.size() == p.num_eq) ? warm->lambda
                                                           : Eigen::VectorXd::Zero(p.num_eq);
    sol.mu = (warm && warm->mu.size() == p.num_ineq) ? warm->mu : Eigen::VectorXd::Zero(p.num_ineq);
    sol.z_lb = Eigen::VectorXd::Zero(n);
    sol.z_ub = Eigen::VectorXd::Zero(n);
    if (warm && warm->z_lb.size() == n) sol.z_lb = warm->z_lb;
    if (warm && warm->z_ub.size() == n) sol.z_ub = warm->z_ub;
    sol.mu = sol.mu.cwiseMax(0.0);

    double merit_penalty = 10.0;
    double damping = opts.hessian_reg;
    const double qp_tol =
        opts.qp_tol > 0.0 ? opts.qp_tol : std::clamp(0.1 * opts.tol, 1e-9, 1e-7);
    QpSolution qp_warm;
    bool have_qp_warm = false;

    bfgs_.resize(0, 0);

    for (int iter = 0; iter < opts.max_iter; ++iter) {
      sol.iterations = iter;
      const double f = p.objective(sol.x);
      Eigen::VectorXd grad = p.objective_gradient(sol.x);
      Eigen::VectorXd g = p.num_eq ? p.eq_constraints(sol.x) : Eigen::VectorXd();
      Eigen::VectorXd h = p.num_ineq ? p.ineq_constraints(sol.x) : Eigen::VectorXd();
      SpMat jg = p.num_eq ? p.eq_jacobian(sol.x) : SpMat(0, n);
      SpMat jh = p.num_ineq ? p.ineq_jacobian(sol.x) : SpMat(0, n);

      KktResiduals res = kkt_residuals(p, sol.x, sol.lambda, sol.mu, sol.z_lb, sol.z_ub);
      store_residuals(res, sol);
      if (opts.verbose)
        std::printf("sqp %3d: f=%.6e stat=%.2e eq=%.2e ineq=%.2e comp=%.2e damp=%.1e\n", iter, f,
                    res.stationarity, res.eq, res.ineq, res.comp, damping);
      if (res.max_residual() <= opts.tol) {
        sol.status = NlpStatus::converged;
        finish(sol, t0);
        return sol;
      }

      SpMat hess = model_hessian(p, sol, grad, jg, jh, n);

      // QP subproblem with adaptive damping until a descent direction appears.
      Eigen::VectorXd dx;
      Eigen::VectorXd lam_new, mu_new, zlb_new, zub_new;
      double dir_deriv = 0.0, viol = 0.0;
      bool have_step = false;
      double try_damping = damping;
      for (int attempt = 0; attempt < 8 && !have_step; ++attempt) {
        QpProblem qp = build_subproblem(p, sol.x, grad, g, h, jg, jh, hess, try_damping, opts);
        QpSolution qs =
            qp_.solve(qp, {.tol = qp_tol, .max_iter = opts.qp_max_iter, .warm_fast_path = false, .verbose = opts.verbose},
                      have_qp_warm ? &qp_warm : nullptr);
        if (qs.status == QpStatus::infeasible) {
          qs = solve_elastic(p, sol.x, grad, g, h, jg, jh, hess, damping, merit_penalty, opts, qp_tol);
          if (qs.status != QpStatus::optimal) {
            sol.status = NlpStatus::qp_failure;
            finish(sol, t0);
            return sol;
          }
        } else if (qs.status != QpStatus::optimal) {
          // accept a max_iter subproblem point only if it is usable
          if (qs.x.size() != n || !qs.x.allFinite()) {
            sol.status = NlpStatus::qp_failure;
            finish(sol, t0);
            return sol;
          }
        }
        qp_warm = qs;
        have_qp_warm = true;

        dx = qs.x.head(n);
        lam_new = -qs.y_eq;
        mu_new = qs.z_in_lower.head(p.num_ineq);
        zlb_new = qs.z_lb.head(n);
        zub_new = qs.z_ub.head(n);

        const double dual_inf = std::max({lam_new.size() ? lam_new.lpNorm<Eigen::Infinity>() : 0.0,
                                          mu_new.size() ? mu_new.lpNorm<Eigen::Infinity>() : 0.0});
        if (merit_penalty < 1.1 * dual_inf || merit_penalty > 100.0 * (dual_inf + 1.0))
          merit_penalty = 1.5 * dual_inf + 1.0;

        viol = violation_l1(g, h);
        dir_deriv = grad.dot(dx) - merit_penalty * viol;
        if (opts.verbose)
          std::printf("   qp try %d: status=%s qp_iters=%d |dx|=%.2e D=%.2e nu=%.1e\n", attempt,
                      to_string(qs.status), qs.iterations, dx.lpNorm<Eigen::Infinity>(), dir_deriv,
                      merit_penalty);
        if (dir_deriv <= -1e-16 || dx.lpNorm<Eigen::Infinity>() <= opts.tol) {
          have_step = true;
          damping = try_damping;
        } else {
          try_damping = std::max(try_damping * 10.0, 1e-6);
        }
      }
      if (!have_step) {
        sol.status = NlpStatus::line_search_failure;
        finish(sol, t0);
        return sol;
      }

      // Tiny step: adopt multipliers, relax the damping so a real step can
      // form, and re-test optimality next iteration.
      if (dx.lpNorm<Eigen::Infinity>() <= std::max(1e-14 * (1.0 + sol.x.lpNorm<Eigen::Infinity>()),
                                                   0.01 * opts.tol)) {
        sol.lambda = lam_new;
        sol.mu = mu_new;
        sol.z_lb = zlb_new;
        sol.z_ub = zub_new;
        damping = std::max(opts.hessian_reg, damping / 10.0);
        continue;
      }

      const double merit0 = f + merit_penalty * viol;
      if (opts.record_history) sol.merit_history.push_back(merit0);

      double alpha = 1.0;
      bool accepted = false;
      Eigen::VectorXd x_trial;
      while (alpha >= opts.ls_alpha_min) {
        x_trial = sol.x + alpha * dx;
        clamp_to_bounds(p, x_trial);
        const double f_t = p.objective(x_trial);
        const double viol_t = violation_l1(p.num_eq ? p.eq_constraints(x_trial) : Eigen::VectorXd(),
                                           p.num_ineq ? p.ineq_constraints(x_trial) : Eigen::VectorXd());
        const double merit_t = f_t + merit_penalty * viol_t;
        if (merit_t <= merit0 + opts.armijo_c1 * alpha * dir_deriv + 1e-14 * (1.0 + std::abs(merit0))) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (opts.verbose && !accepted) std::printf("   line search rejected, damping up\n");
      if (opts.verbose && accepted) std::printf("   alpha=%.3e merit %.8e -> accepted\n", alpha, merit0);
      if (!accepted) {
        damping = std::max(damping * 100.0, 1e-4);
        if (damping > 1e10) {
          sol.status = NlpStatus::line_search_failure;
          finish(sol, t0);
          return sol;
        }
        continue;
      }

      if (!p.lagrangian_hessian) {
        sol.lambda = lam_new;  // BFGS pairs gradients at both points with the new duals
        sol.mu = mu_new;
        prepare_bfgs_update(p, sol, grad, jg, jh, x_trial);
      }

      sol.x = x_trial;
      sol.lambda = lam_new;
      sol.mu = mu_new;
      sol.z_lb = zlb_new;
      sol.z_ub = zub_new;

      // Damping grows only on rejected line searches; accepted steps relax it.
      damping = std::max(opts.hessian_reg, damping / (alpha >= 0.5 ? 3.0 : 1.5));
    }

    sol.iterations = opts.max_iter;
    KktResiduals res = kkt_residuals(p, sol.x, sol.lambda, sol.mu, sol.z_lb, sol.z_ub);
    store_residuals(res, sol);
    sol.status = res.max_residual() <= opts.tol ? NlpStatus::converged : NlpStatus::max_iter;
    finish(sol, t0);
    return sol;
  }

 private:
  QpSolver qp_;
  Eigen::MatrixXd bfgs_;

  static void clamp_to_bounds(const NlpProblem& p, Eigen::VectorXd& x) {
    for (int i = 0; i < x.size(); ++i) {
      if (p.lb.size() && !std::isinf(p.lb[i])) x[i] = std::max(x[i], p.lb[i]);
      if (p.ub.size() && !std::isinf(p.ub[i])) x[i] = std::min(x[i], p.ub[i]);
    }
  }

  static double violation_l1(const Eigen::VectorXd& g, const Eigen::VectorXd& h) {
    double v = 0.0;
    for (int i = 0; i < g.size(); ++i) v += std::abs(g[i]);
    for (int i = 0; i < h.size(); ++i) v += std::max(0.0, -h[i]);
    return v;
  }

  static void store_residuals(const KktResiduals& r, NlpSolution& sol) {
    sol.stationarity_residual = r.stationarity;
    sol.eq_residual = r.eq;
    sol.ineq_residual = r.ineq;
    sol.comp_residual = r.comp;
  }

  static void finish(NlpSolution& sol, const std::chrono::steady_clock::time_point& t0) {
    sol.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  static SpMat add_damping(const SpMat& H, double sigma) {
    SpMat I(H.rows(), H.cols());
    I.setIdentity();
    return SpMat(H + sigma * I);
  }

  SpMat model_hessian(const NlpProblem& p, const NlpSolution& sol, const Eigen::VectorXd& grad,
                      const SpMat& jg, const SpMat& jh, int n) {
    (void)grad;
    (void)jg;
    (void)jh;
    if (p.lagrangian_hessian) return p.lagrangian_hessian(sol.x, sol.lambda, sol.mu);
    if (bfgs_.rows() != n) bfgs_ = Eigen::MatrixXd::Identity(n, n);
    return bfgs_.sparseView(1.0, 1e-300);
  }

  static Eigen::VectorXd lagrangian_gradient(const Eigen::VectorXd& grad, const SpMat& jg, const SpMat& jh,
                                             const NlpSolution& sol) {
    Eigen::VectorXd lg = grad;
    if (jg.rows() > 0) lg -= jg.transpose() * sol.lambda;
    if (jh.rows() > 0) lg -= jh.transpose() * sol.mu;
    return lg;
  }

  void prepare_bfgs_update(const NlpProblem& p, const NlpSolution& sol, const Eigen::VectorXd& grad,
                           const SpMat& jg, const SpMat& jh, const Eigen::VectorXd& x_new) {
    if (bfgs_.rows() == 0) return;
    Eigen::VectorXd grad_new = p.objective_gradient(x_new);
    SpMat jg_new = p.num_eq ? p.eq_jacobian(x_new) : SpMat(0, p.num_vars);
    SpMat jh_new = p.num_ineq ? p.ineq_jacobian(x_new) : SpMat(0, p.num_vars);
    Eigen::VectorXd lg_new = lagrangian_gradient(grad_new, jg_new, jh_new, sol);
    Eigen::VectorXd lg_old = lagrangian_gradient(grad, jg, jh, sol);

    const Eigen::VectorXd s = x_new - sol.x;
    Eigen::VectorXd y = lg_new - lg_old;
    const double sts = s.dot(s);
    if (sts < 1e-300) return;
    const Eigen::VectorXd Bs = bfgs_ * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(y);
    // Powell damping keeps the update positive definite.
    if (sy < 0.2 * sBs) {
      const double theta = 0.8 * sBs / (sBs - sy);
      y = theta * y + (1.0 - theta) * Bs;
      sy = s.dot(y);
    }
    if (sy <= 1e-300 || sBs <= 1e-300) return;
    bfgs_ += (y * y.transpose()) / sy - (Bs * Bs.transpose()) / sBs;
  }

  QpProblem build_subproblem(const NlpProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                             const Eigen::VectorXd& g, const Eigen::VectorXd& h, const SpMat& jg,
                             const SpMat& jh, const SpMat& hess, double damping, const NlpOptions& opts) {
    const int n = p.num_vars;
    QpProblem qp;
    qp.H = add_damping(hess, damping);
    qp.g = grad;
    qp.A_eq = jg;
    qp.b_eq = -g;
    qp.A_in = jh;
    qp.l_in = -h;
    qp.u_in = Eigen::VectorXd::Constant(h.size(), kInf);
    qp.lb.resize(n);
    qp.ub.resize(n);
    for (int i = 0; i < n; ++i) {
      const double lo = p.lb.size() ? p.lb[i] : -kInf;
      const double hi = p.ub.size() ? p.ub[i] : kInf;
      qp.lb[i] = std::max(lo - x[i], -opts.step_bound);
      qp.ub[i] = std::min(hi - x[i], opts.step_bound);
    }
    return qp;
  }

  // Slack-relaxed subproblem: equalities get two-sided slacks, inequalities a
  // one-sided slack, all penalized linearly.
  QpSolution solve_elastic(const NlpProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                           const Eigen::VectorXd& g, const Eigen::VectorXd& h, const SpMat& jg,
                           const SpMat& jh, const SpMat& hess, double damping, double merit_penalty,
                           const NlpOptions& opts, double qp_tol) {
    const int n = p.num_vars;
    const int me = p.num_eq;
    const int mi = p.num_ineq;
    const int ne = n + 2 * me + mi;
    const double w = 10.0 * merit_penalty + 100.0;

    std::vector<Triplet> ht;
    SpMat hd = add_damping(hess, damping);
    for (int k = 0; k < hd.outerSize(); ++k)
      for (SpMat::InnerIterator it(hd, k); it; ++it)
        ht.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = n; i < ne; ++i) ht.emplace_back(i, i, 1e-8);
    QpProblem qp;
    qp.H.resize(ne, ne);
    qp.H.setFromTriplets(ht.begin(), ht.end());
    qp.g = Eigen::VectorXd::Constant(ne, w);
    qp.g.head(n) = grad;

    std::vector<Triplet> at;
    for (int k = 0; k < jg.outerSize(); ++k)
      for (SpMat::InnerIterator it(jg, k); it; ++it)
        at.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < me; ++i) {
      at.emplace_back(i, n + i, 1.0);
      at.emplace_back(i, n + me + i, -1.0);
    }
    qp.A_eq.resize(me, ne);
    qp.A_eq.setFromTriplets(at.begin(), at.end());
    qp.b_eq = -g;

    std::vector<Triplet> it2;
    for (int k = 0; k < jh.outerSize(); ++k)
      for (SpMat::InnerIterator it(jh, k); it; ++it)
        it2.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < mi; ++i) it2.emplace_back(i, n + 2 * me + i, 1.0);
    qp.A_in.resize(mi, ne);
    qp.A_in.setFromTriplets(it2.begin(), it2.end());
    qp.l_in = -h;
    qp.u_in = Eigen::VectorXd::Constant(mi, kInf);

    qp.lb = Eigen::VectorXd::Zero(ne);
    qp.ub = Eigen::VectorXd::Constant(ne, kInf);
    for (int i = 0; i < n; ++i) {
      const double lo = p.lb.size() ? p.lb[i] : -kInf;
      const double hi = p.ub.size() ? p.ub[i] : kInf;
      qp.lb[i] = std::max(lo - x[i], -opts.step_bound);
      qp.ub[i] = std::min(hi - x[i], opts.step_bound);
    }

    QpSolver elastic_solver;
    QpSolution qs = elastic_solver.solve(qp, {.tol = qp_tol, .max_iter = opts.qp_max_iter});
    if (qs.status == QpStatus::optimal) {
      // trim the solution back to the original variable block
      QpSolution out = qs;
      out.x = qs.x.head(n).eval();
      out.z_lb = qs.z_lb.head(n).eval();
      out.z_ub = qs.z_ub.head(n).eval();
      return out;
    }
    return qs;
  }
};

}  // namespace racepred
