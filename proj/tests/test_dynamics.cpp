#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "racepred/dynamics.hpp"

using namespace racepred;

TEST_CASE("discretize_dynamics closed form") {
  DiscreteDynamics d = discretize_dynamics(0.1);
  CHECK(d.A(0, 0) == Catch::Approx(1.0));
  CHECK(d.A(0, 1) == Catch::Approx(0.1));
  CHECK(d.A(0, 2) == Catch::Approx(0.005));
  CHECK(d.B(0) == Catch::Approx(1.6667e-4).epsilon(1e-3));
  CHECK(d.B(1) == Catch::Approx(0.005));
  CHECK(d.B(2) == Catch::Approx(0.1));

  DiscreteDynamics unit = discretize_dynamics(1.0);
  CHECK(unit.B(0) == Catch::Approx(1.0 / 6.0));
  CHECK(unit.B(1) == Catch::Approx(0.5));
  CHECK(unit.B(2) == Catch::Approx(1.0));
}

TEST_CASE("discretize_dynamics semigroup property") {
  const Eigen::Matrix3d lhs = discretize_dynamics(0.1).A * discretize_dynamics(0.1).A;
  const Eigen::Matrix3d rhs = discretize_dynamics(0.2).A;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(discretize_dynamics(0.0), ValidationError);
  CHECK_THROWS_AS(discretize_dynamics(-0.5), ValidationError);
}

TEST_CASE("interp_curvature midpoint and clamping") {
  CurvatureTable t;
  t.knots = {0.0, 10.0};
  t.values = {0.0, 0.02};
  CHECK(interp_curvature(5.0, t).kappa == Catch::Approx(0.01));
  CHECK(interp_curvature(5.0, t).dkappa_ds == Catch::Approx(0.002));
  CHECK(interp_curvature(-1.0, t).kappa == Catch::Approx(0.0));
  CHECK(interp_curvature(-1.0, t).dkappa_ds == Catch::Approx(0.0));
  CHECK(interp_curvature(12.0, t).kappa == Catch::Approx(0.02));
  CHECK(interp_curvature(12.0, t).dkappa_ds == Catch::Approx(0.0));
}

TEST_CASE("accel_vector evaluates the lateral acceleration") {
  CurvatureTable t;
  t.knots = {0.0, 100.0};
  t.values = {0.01, 0.01};
  SECTION("paper formula") {
    AccelVector a = accel_vector({50.0, 20.0, 1.0}, t);
    CHECK(a.lat == Catch::Approx(-4.0));
    CHECK(a.lon == Catch::Approx(1.0));
  }
  SECTION("zero speed") {
    AccelVector a = accel_vector({50.0, 0.0, -2.0}, t);
    CHECK(a.lat == Catch::Approx(0.0));
    CHECK(a.lon == Catch::Approx(-2.0));
  }
  SECTION("straight path") {
    CurvatureTable flat;
    flat.knots = {0.0, 100.0};
    flat.values = {0.0, 0.0};
    AccelVector a = accel_vector({50.0, 20.0, 0.7}, flat);
    CHECK(a.lat == Catch::Approx(0.0));
    CHECK(a.lon == Catch::Approx(0.7));
  }
}

TEST_CASE("eval_accel_constraints at the origin returns the offsets") {
  AccelPolytope poly(5.0, 2.5, 5.0, 2.2361, 2.2361);
  CurvatureTable flat;
  flat.knots = {0.0, 100.0};
  flat.values = {0.0, 0.0};
  Eigen::Matrix<double, 8, 1> h = eval_accel_constraints({0.0, 0.0, 0.0}, flat, poly);
  Eigen::Matrix<double, 8, 1> expect;
  expect << 5.0, 5.0, 2.5, 5.0, 2.2361, 2.2361, 2.2361, 2.2361;
  CHECK((h - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("eval_accel_constraints lateral rows") {
  AccelPolytope poly(5.0, 2.5, 5.0, 2.2361, 2.2361);
  // a_lat = -4 with v = 20 on kappa = 0.01
  CurvatureTable t;
  t.knots = {0.0, 100.0};
  t.values = {0.01, 0.01};
  Eigen::Matrix<double, 8, 1> h = eval_accel_constraints({10.0, 20.0, 0.0}, t, poly);
  CHECK(h[0] == Catch::Approx(9.0));
  CHECK(h[1] == Catch::Approx(1.0));
}

TEST_CASE("vertex evaluation matches brute-force row projection") {
  AccelPolytope poly(5.0, 2.5, 5.0, 2.2361, 2.2361);
  const AccelVector vertex{5.0, 0.0};
  Eigen::Matrix<double, 8, 1> h = poly.eval(vertex);
  CHECK(std::abs(h[0]) < 1e-12);
  for (int i = 0; i < 8; ++i) {
    const double brute =
        poly.offsets()[i] - (poly.rows()(i, 0) * vertex.lat + poly.rows()(i, 1) * vertex.lon);
    CHECK(h[i] == Catch::Approx(brute).margin(1e-14));
  }
}

TEST_CASE("polytope rows have unit norm") {
  AccelPolytope poly(6.5, 4.0, 7.0);
  for (int i = 4; i < 8; ++i) CHECK(std::abs(poly.rows().row(i).norm() - 1.0) < 1e-12);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(poly.rows().row(i).norm() - 1.0) < 1e-12);
}

TEST_CASE("polytope symmetry permutes paired rows") {
  AccelPolytope poly(5.0, 2.5, 5.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lat(-6.0, 6.0), lon(-6.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const AccelVector a{lat(rng), lon(rng)};
    const AccelVector m{-a.lat, a.lon};
    Eigen::Matrix<double, 8, 1> h = poly.eval(a);
    Eigen::Matrix<double, 8, 1> hm = poly.eval(m);
    CHECK(h[0] == Catch::Approx(hm[1]).margin(1e-12));
    CHECK(h[1] == Catch::Approx(hm[0]).margin(1e-12));
    CHECK(h[2] == Catch::Approx(hm[2]).margin(1e-12));
    CHECK(h[3] == Catch::Approx(hm[3]).margin(1e-12));
    CHECK(h[4] == Catch::Approx(hm[5]).margin(1e-12));
    CHECK(h[5] == Catch::Approx(hm[4]).margin(1e-12));
    CHECK(h[6] == Catch::Approx(hm[7]).margin(1e-12));
    CHECK(h[7] == Catch::Approx(hm[6]).margin(1e-12));
  }
}

TEST_CASE("h is affine in the acceleration vector") {
  AccelPolytope poly(5.0, 2.5, 5.0);
  const double eps = 1e-6;
  const AccelVector base{1.3, -0.8};
  for (int i = 0; i < 8; ++i) {
    const double dlat = (poly.eval({base.lat + eps, base.lon})[i] - poly.eval({base.lat - eps, base.lon})[i]) /
                        (2.0 * eps);
    const double dlon = (poly.eval({base.lat, base.lon + eps})[i] - poly.eval({base.lat, base.lon - eps})[i]) /
                        (2.0 * eps);
    CHECK(dlat == Catch::Approx(-poly.rows()(i, 0)).margin(1e-8));
    CHECK(dlon == Catch::Approx(-poly.rows()(i, 1)).margin(1e-8));
  }
}

TEST_CASE("accel constraint jacobian matches finite differences") {
  AccelPolytope poly(5.0, 2.5, 5.0);
  CurvatureTable t;
  t.knots = {0.0, 50.0, 120.0, 200.0};
  t.values = {0.0, 0.015, -0.01, 0.002};

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ds(5.0, 195.0), dv(1.0, 40.0), da(-4.0, 2.0);
  const double eps = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 30; ++trial) {
    VehicleState x{ds(rng), dv(rng), da(rng)};
    // stay away from the knots where the slope jumps
    bool near_knot = false;
    for (double k : t.knots) near_knot |= std::abs(x.s - k) < 0.5;
    if (near_knot) continue;
    ++checked;

    Eigen::Matrix<double, 8, 3> J = accel_constraint_jacobian(x, t, poly);
    for (int dim = 0; dim < 3; ++dim) {
      VehicleState xp = x, xm = x;
      (dim == 0 ? xp.s : dim == 1 ? xp.v : xp.a) += eps;
      (dim == 0 ? xm.s : dim == 1 ? xm.v : xm.a) -= eps;
      Eigen::Matrix<double, 8, 1> hp = eval_accel_constraints(xp, t, poly);
      Eigen::Matrix<double, 8, 1> hm = eval_accel_constraints(xm, t, poly);
      for (int i = 0; i < 8; ++i) {
        const double fd = (hp[i] - hm[i]) / (2.0 * eps);
        CHECK(J(i, dim) == Catch::Approx(fd).margin(1e-6));
      }
    }
  }
  REQUIRE(checked >= 20);
}

TEST_CASE("polytope validation") {
  CHECK_THROWS_AS(AccelPolytope(-1.0, 2.0, 3.0), ValidationError);
  CHECK_THROWS_AS(AccelPolytope(5.0, 2.5, 5.0, 10.0, 2.0), ValidationError);  // a_q_north > corner distance
  CHECK_NOTHROW(AccelPolytope(5.0, 2.5, 5.0));
  AccelPolytope p(5.0, 2.5, 5.0);
  CHECK(p.a_q_north() == Catch::Approx(2.23607).epsilon(1e-4));
  CHECK(p.a_q_south() == Catch::Approx(3.53553).epsilon(1e-4));
}
