#include <cstdio>
#include "racepred/llnlp.hpp"

using namespace racepred;
using namespace Eigen;

int main() {
  CurvatureTable t;
  t.knots = {0.0, 2000.0};
  t.values = {0.0, 0.0};
  LlnlpConfig cfg;
  cfg.N = 40;
  cfg.v_max = 20.0;
  LlnlpPredictor pred(cfg);
  PredictorParams p2;
  PredictedTrajectory tr = pred.predict({0.0, 20.0, 0.0}, t, p2);
  std::printf("status=%s iters=%d stat=%.3e\n", to_string(tr.status), tr.iterations, tr.kkt_stationarity);

  const NlpProblem& p = pred.problem();
  VectorXd grad = p.objective_gradient(tr.primal);
  VectorXd jgl = p.eq_jacobian(tr.primal).transpose() * tr.lambda;
  VectorXd jhm = p.ineq_jacobian(tr.primal).transpose() * tr.mu;
  int worst = -1;
  double wv = 0;
  for (int i = 0; i < p.num_vars; ++i) {
    double res = grad[i] - jgl[i] - jhm[i] - tr.z_lb[i] + tr.z_ub[i];
    double sc = 1.0 + std::max({std::abs(grad[i]), std::abs(jgl[i]), std::abs(jhm[i]),
                                std::abs(tr.z_lb[i]), std::abs(tr.z_ub[i])});
    if (std::abs(res) / sc > wv) { wv = std::abs(res) / sc; worst = i; }
  }
  std::printf("worst var %d (stage %d, off %d): res/sc=%.3e grad=%.4e jgl=%.4e jhm=%.4e zlb=%.4e zub=%.4e\n",
              worst, worst / 12, worst % 12, wv, grad[worst], jgl[worst], jhm[worst], tr.z_lb[worst],
              tr.z_ub[worst]);
  // dump the state/duals at that stage
  int k = worst / 12;
  std::printf("state k=%d: s=%.4f v=%.6f a=%.6e  slacks max=%.3e\n", k, tr.states[k].s, tr.states[k].v,
              tr.states[k].a, tr.slacks[k].maxCoeff());
  return 0;
}
