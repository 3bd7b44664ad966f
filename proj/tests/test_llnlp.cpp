#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "racepred/llnlp.hpp"

using namespace racepred;

namespace {

CurvatureTable flat_table(double length = 2000.0) {
  CurvatureTable t;
  t.knots = {0.0, length};
  t.values = {0.0, 0.0};
  return t;
}

CurvatureTable const_table(double kappa, double length = 2000.0) {
  CurvatureTable t;
  t.knots = {0.0, length};
  t.values = {kappa, kappa};
  return t;
}

}  // namespace

TEST_CASE("transcription variable count") {
  LlnlpConfig cfg;
  cfg.N = 60;
  LlnlpPredictor pred(cfg);
  CHECK(pred.num_vars() == 731);  // 3*61 + 60 + 8*61
  CHECK(pred.num_eq() == 183);
  CHECK(pred.num_ineq() == 488);
}

TEST_CASE("minimal transcription structure") {
  LlnlpConfig cfg;
  cfg.N = 2;
  LlnlpPredictor pred(cfg);
  CHECK(pred.num_eq() == 9);  // 3 initial + 2 blocks of 3 shooting rows
  CHECK(pred.num_vars() == 35);
}

TEST_CASE("two builds share the sparsity pattern") {
  LlnlpConfig cfg;
  cfg.N = 8;
  LlnlpPredictor a(cfg), b(cfg);
  CurvatureTable t = const_table(0.01);
  PredictorParams params;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(a.num_vars());
  for (int k = 0; k <= cfg.N; ++k) z[a.x_offset(k) + 1] = 10.0;

  // the callbacks capture solver state; prime them through a solve
  a.predict({0, 10, 0}, t, params);
  b.predict({0, 10, 0}, t, params);
  SpMat ja = a.problem().eq_jacobian(z);
  SpMat jb = b.problem().eq_jacobian(z);
  REQUIRE(ja.nonZeros() == jb.nonZeros());
  for (int i = 0; i <= ja.outerSize(); ++i) CHECK(ja.outerIndexPtr()[i] == jb.outerIndexPtr()[i]);

  SpMat ha = a.problem().ineq_jacobian(z);
  SpMat hb = b.problem().ineq_jacobian(z);
  REQUIRE(ha.nonZeros() == hb.nonZeros());
}

TEST_CASE("transcription derivatives match finite differences") {
  LlnlpConfig cfg;
  cfg.N = 4;
  LlnlpPredictor pred(cfg);
  CurvatureTable t;
  t.knots = {0.0, 20.0, 60.0};
  t.values = {0.001, 0.012, -0.004};
  PredictorParams params;
  PredictedTrajectory traj = pred.predict({1.0, 8.0, 0.3}, t, params);

  Eigen::VectorXd z = traj.primal;
  for (int i = 0; i < z.size(); ++i) z[i] += 1e-3 * std::sin(3.7 * i);  // move off the solution
  DerivativeReport rep = check_derivatives(pred.problem(), z, 1e-6);
  CHECK(rep.max_err() < 1e-6);
}

TEST_CASE("straight-path full-throttle ramp") {
  LlnlpConfig cfg;
  cfg.N = 60;
  cfg.v_max = 12.0;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  params.w_jerk = 1e-6;
  params.w_acc = 1e-6;
  params.poly = AccelPolytope(5.0, 2.5, 5.0);
  CurvatureTable t = flat_table();

  PredictedTrajectory traj = pred.predict({0.0, 0.0, 0.0}, t, params);
  REQUIRE(traj.converged);
  CHECK(traj.dynamics_residual <= 1e-8);

  // acceleration saturates at a_lon_max through the ramp
  for (int k = 2; k < 40; ++k) {
    if (traj.states[k].v < cfg.v_max - 0.3) CHECK(traj.states[k].a > 2.5 - 0.05);
  }
  // v_k = min(v_max, a_lon_max k dt); the jerk-limited half-step lag fades by k ~ 30
  for (int k = 30; k <= cfg.N; ++k) {
    const double expect = std::min(cfg.v_max, 2.5 * k * cfg.dt);
    CHECK(traj.states[k].v == Catch::Approx(expect).epsilon(0.02));
  }
  CHECK(traj.states[cfg.N].v == Catch::Approx(12.0).epsilon(0.02));
}

TEST_CASE("steady-state cornering speed") {
  LlnlpConfig cfg;
  cfg.N = 111;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  params.w_jerk = 1e-6;
  params.w_acc = 1e-6;
  params.poly = AccelPolytope(5.0, 2.5, 5.0);
  CurvatureTable t = const_table(0.02);

  PredictedTrajectory traj = pred.predict({0.0, 15.0, 0.0}, t, params);
  REQUIRE(traj.converged);
  const double v_ss = std::sqrt(5.0 / 0.02);  // 15.81
  CHECK(traj.states[cfg.N].v == Catch::Approx(v_ss).epsilon(0.02));
  // never beyond the lateral limit
  for (const VehicleState& x : traj.states) CHECK(x.v * x.v * 0.02 <= 5.0 + 1e-6);
}

TEST_CASE("at v_max on a straight the speed holds") {
  LlnlpConfig cfg;
  cfg.N = 40;
  cfg.v_max = 20.0;
  LlnlpPredictor pred(cfg);
  PredictorParams params;  // default moderate weights
  CurvatureTable t = flat_table();

  PredictedTrajectory traj = pred.predict({0.0, 20.0, 0.0}, t, params);
  REQUIRE(traj.converged);
  for (const VehicleState& x : traj.states) CHECK(x.v == Catch::Approx(20.0).margin(1e-5));
  for (double u : traj.inputs) CHECK(std::abs(u) < 1e-4);
  CHECK(traj.states[cfg.N].s == Catch::Approx(20.0 * cfg.N * cfg.dt).margin(1e-4));
}

TEST_CASE("warm start keeps iteration counts low") {
  LlnlpConfig cfg;
  cfg.N = 60;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  CurvatureTable t = const_table(0.005);

  PredictedTrajectory first = pred.predict({0.0, 20.0, 0.5}, t, params);
  REQUIRE(first.converged);

  // advance the state one step along the previous solution and re-solve
  VehicleState next = first.states[1];
  PredictedTrajectory second = pred.predict(next, t, params, &first);
  REQUIRE(second.converged);
  CHECK(second.iterations <= 5);
}

TEST_CASE("kkt residuals re-evaluated independently") {
  LlnlpConfig cfg;
  cfg.N = 30;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  CurvatureTable t = const_table(0.012);
  PredictedTrajectory traj = pred.predict({0.0, 12.0, 0.0}, t, params);
  REQUIRE(traj.converged);
  KktResiduals r = kkt_residuals(pred.problem(), traj.primal, traj.lambda, traj.mu, traj.z_lb, traj.z_ub);
  CHECK(r.max_residual() <= 1e-6);
  CHECK(traj.dynamics_residual <= 1e-8);
}

TEST_CASE("jerk effort is monotone in w_jerk") {
  LlnlpConfig cfg;
  cfg.N = 40;
  LlnlpPredictor pred(cfg);
  CurvatureTable t = const_table(0.01);

  double prev_effort = kInf;
  for (double wj : {1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
    PredictorParams params;
    params.w_jerk = wj;
    params.w_acc = 0.2;
    PredictedTrajectory traj = pred.predict({0.0, 10.0, 0.0}, t, params);
    REQUIRE(traj.converged);
    double effort = 0.0;
    for (double u : traj.inputs) effort += u * u;
    CHECK(effort <= prev_effort + 1e-9);
    prev_effort = effort;
  }
}

TEST_CASE("unreachable constraints activate the slacks") {
  LlnlpConfig cfg;
  cfg.N = 30;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  params.poly = AccelPolytope(0.01, 2.5, 5.0);  // absurdly tight lateral limit
  CurvatureTable t = const_table(0.02);

  PredictedTrajectory traj = pred.predict({0.0, 20.0, 0.0}, t, params);
  REQUIRE(traj.converged);
  double max_slack = 0.0;
  for (const auto& s : traj.slacks) max_slack = std::max(max_slack, s.maxCoeff());
  CHECK(max_slack > 1.0);
}

TEST_CASE("initial speed outside bounds is rejected") {
  LlnlpConfig cfg;
  cfg.v_max = 10.0;
  LlnlpPredictor pred(cfg);
  PredictorParams params;
  CurvatureTable t = flat_table();
  CHECK_THROWS_AS(pred.predict({0.0, 15.0, 0.0}, t, params), InfeasibleError);
}
