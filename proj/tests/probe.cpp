#include <cstdio>

#include "racepred/llnlp.hpp"

using namespace racepred;

int main(int argc, char**) {
  CurvatureTable t;
  t.knots = {0.0, 2000.0};
  t.values = {0.0, 0.0};

  if (argc < 2) {
    LlnlpConfig cfg;
    cfg.N = 60;
    cfg.v_max = 12.0;
    cfg.verbose = true;
    LlnlpPredictor pred(cfg);
    PredictorParams params;
    params.w_jerk = 1e-6;
    params.w_acc = 1e-6;
    params.poly = AccelPolytope(5.0, 2.5, 5.0);
    PredictedTrajectory traj = pred.predict({0.0, 0.0, 0.0}, t, params);
    std::printf("ramp: status=%s iters=%d stat=%.3e eq=%.3e comp=%.3e\n", to_string(traj.status),
                traj.iterations, traj.kkt_stationarity, traj.kkt_eq, traj.kkt_comp);
    for (int k = 0; k <= cfg.N; k += 10)
      std::printf("k=%3d s=%8.3f v=%7.3f a=%7.3f\n", k, traj.states[k].s, traj.states[k].v,
                  traj.states[k].a);
  } else {
    LlnlpConfig cfg2;
    cfg2.N = 40;
    cfg2.v_max = 20.0;
    cfg2.verbose = true;
    LlnlpPredictor pred2(cfg2);
    PredictorParams p2;
    PredictedTrajectory t2 = pred2.predict({0.0, 20.0, 0.0}, t, p2);
    std::printf("vmax-hold: status=%s iters=%d stat=%.3e\n", to_string(t2.status), t2.iterations,
                t2.kkt_stationarity);
  }
  return 0;
}
