#include <cstdio>
#include "racepred/llnlp.hpp"

using namespace racepred;
using namespace Eigen;

int main() {
  // replicate the vmax-hold first SQP subproblem and run the QP verbosely
  LlnlpConfig cfg;
  cfg.N = 40;
  cfg.v_max = 20.0;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  CurvatureTable t;
  t.knots = {0.0, 2000.0};
  t.values = {0.0, 0.0};
  // prime pointers
  pred.predict({0, 20, 0}, t, params);

  const NlpProblem& p = pred.problem();
  VectorXd z = VectorXd::Zero(p.num_vars);
  for (int k = 0; k <= cfg.N; ++k) {
    z[pred.x_offset(k)] = 20.0 * cfg.dt * k;
    z[pred.x_offset(k) + 1] = 20.0;
  }
  VectorXd grad = p.objective_gradient(z);
  VectorXd g = p.eq_constraints(z);
  VectorXd h = p.ineq_constraints(z);
  SpMat jg = p.eq_jacobian(z);
  SpMat jh = p.ineq_jacobian(z);
  SpMat hess = p.lagrangian_hessian(z, VectorXd::Zero(p.num_eq), VectorXd::Zero(p.num_ineq));

  QpProblem qp;
  SpMat I(p.num_vars, p.num_vars);
  I.setIdentity();
  qp.H = SpMat(hess + 1e-8 * I);
  qp.g = grad;
  qp.A_eq = jg;
  qp.b_eq = -g;
  qp.A_in = jh;
  qp.l_in = -h;
  qp.u_in = VectorXd::Constant(h.size(), kInf);
  qp.lb.resize(p.num_vars);
  qp.ub.resize(p.num_vars);
  for (int i = 0; i < p.num_vars; ++i) {
    qp.lb[i] = std::max((p.lb.size() ? p.lb[i] : -kInf) - z[i], -1e4);
    qp.ub[i] = std::min((p.ub.size() ? p.ub[i] : kInf) - z[i], 1e4);
  }
  QpSolver solver;
  QpSolution sol = solver.solve(qp, {.tol = 1e-7, .max_iter = 60, .verbose = true});
  std::printf("status=%s iters=%d\n", to_string(sol.status), sol.iterations);

  // locate the worst dual-residual row
  VectorXd hx = qp.H * sol.x;
  VectorXd aty = qp.A_eq.transpose() * sol.y_eq;
  VectorXd znet = qp.A_in.transpose() * (sol.z_in_upper - sol.z_in_lower);
  znet += sol.z_ub - sol.z_lb;
  int worst = -1;
  double worst_val = 0.0;
  for (int i = 0; i < p.num_vars; ++i) {
    const double res = hx[i] + qp.g[i] + aty[i] + znet[i];
    const double scale = 1.0 + std::max({std::abs(hx[i]), std::abs(qp.g[i]), std::abs(aty[i]), std::abs(znet[i])});
    if (std::abs(res) / scale > worst_val) {
      worst_val = std::abs(res) / scale;
      worst = i;
    }
  }
  std::printf("worst row %d (of %d): res/scale=%.3e hx=%.3e g=%.3e aty=%.3e znet=%.3e\n", worst,
              p.num_vars, worst_val, hx[worst], qp.g[worst], aty[worst], znet[worst]);
  // which variable kind? layout: 12k..12k+2 state, +3 input, +4.. slack
  std::printf("offset within stage: %d\n", worst % 12);
  return 0;
}
