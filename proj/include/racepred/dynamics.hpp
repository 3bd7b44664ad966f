// Prediction-model ingredients: exact triple-integrator discretization,
// piecewise-linear curvature interpolation, and the 8-row acceleration
// polytope with unit-normalized rows.
#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "racepred/common.hpp"
#include "racepred/geometry.hpp"

namespace racepred {

struct VehicleState {
  double s = 0.0;  // path progress, m
  double v = 0.0;  // speed, m/s
  double a = 0.0;  // longitudinal acceleration, m/s^2
};

struct DiscreteDynamics {
  Eigen::Matrix3d A;
  Eigen::Vector3d B;
  double dt = 0.0;

  Eigen::Vector3d step(const Eigen::Vector3d& x, double u) const { return A * x + B * u; }
};

// Zero-order-hold discretization of the jerk-driven integrator chain; exact
// because the chain is nilpotent.
inline DiscreteDynamics discretize_dynamics(double dt) {
  if (!(dt > 0.0)) throw ValidationError("discretize_dynamics: dt must be positive");
  DiscreteDynamics d;
  d.dt = dt;
  d.A << 1.0, dt, dt * dt / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0;
  d.B << dt * dt * dt / 6.0, dt * dt / 2.0, dt;
  return d;
}

struct CurvatureSample {
  double kappa = 0.0;
  double dkappa_ds = 0.0;
};

// Linear interpolation between bracketing knots, clamped outside the table
// (slope zero in the clamped region).
inline CurvatureSample interp_curvature(double s, const CurvatureTable& table) {
  CurvatureSample out;
  if (table.knots.size() == 1) {
    out.kappa = table.values[0];
    return out;
  }
  if (s <= table.knots.front()) {
    out.kappa = table.values.front();
    return out;
  }
  if (s >= table.knots.back()) {
    out.kappa = table.values.back();
    return out;
  }
  const int i = bracket(table.knots, s);
  const double ds = table.knots[i + 1] - table.knots[i];
  const double slope = (table.values[i + 1] - table.values[i]) / ds;
  out.kappa = table.values[i] + slope * (s - table.knots[i]);
  out.dkappa_ds = slope;
  return out;
}

struct AccelVector {
  double lat = 0.0;
  double lon = 0.0;
};

inline AccelVector accel_vector(const VehicleState& x, const CurvatureTable& table) {
  const CurvatureSample c = interp_curvature(x.s, table);
  return {-x.v * x.v * c.kappa, x.a};
}

// Eight halfspaces offset - row . (a_lat, a_lon) >= 0 with unit rows:
//   0: +a_lat    <= a_lat_max        1: -a_lat    <= a_lat_max
//   2: +a_lon    <= a_lon_max        3: -a_lon    <= a_lon_brake
//   4,5: north diagonals (offset a_q_north), 6,7: south diagonals (a_q_south)
// The braking limit is stored as a positive magnitude so every offset is >= 0.
class AccelPolytope {
 public:
  AccelPolytope() : AccelPolytope(5.0, 2.5, 5.0) {}

  AccelPolytope(double a_lat_max, double a_lon_max, double a_lon_brake, double a_q_north, double a_q_south)
      : lat_(a_lat_max), lon_(a_lon_max), brake_(a_lon_brake), qn_(a_q_north), qs_(a_q_south) {
    validate();
    build();
  }

  // Diagonals at the distance of the line through the adjacent axis vertices.
  AccelPolytope(double a_lat_max, double a_lon_max, double a_lon_brake)
      : AccelPolytope(a_lat_max, a_lon_max, a_lon_brake,
                      diag_north_distance(a_lat_max, a_lon_max),
                      diag_south_distance(a_lat_max, a_lon_brake)) {}

  static double diag_north_distance(double a_lat_max, double a_lon_max) {
    return a_lat_max * a_lon_max / std::hypot(a_lat_max, a_lon_max);
  }
  static double diag_south_distance(double a_lat_max, double a_lon_brake) {
    return a_lat_max * a_lon_brake / std::hypot(a_lat_max, a_lon_brake);
  }

  double a_lat_max() const { return lat_; }
  double a_lon_max() const { return lon_; }
  double a_lon_brake() const { return brake_; }
  double a_q_north() const { return qn_; }
  double a_q_south() const { return qs_; }
  double a_bar() const { return std::hypot(lat_, lon_); }
  double a_bar_south() const { return std::hypot(lat_, brake_); }

  // Unit-length direction rows and their offsets.
  const Eigen::Matrix<double, 8, 2>& rows() const { return rows_; }
  const Eigen::Matrix<double, 8, 1>& offsets() const { return offsets_; }

  Eigen::Matrix<double, 8, 1> eval(const AccelVector& a) const {
    Eigen::Vector2d v(a.lat, a.lon);
    return offsets_ - rows_ * v;
  }

 private:
  void validate() const {
    auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!pos(lat_) || !pos(lon_) || !pos(brake_) || !pos(qn_) || !pos(qs_))
      throw ValidationError("accel polytope scalars must be positive and finite");
    if (qn_ > std::hypot(lat_, lon_) + 1e-9)
      throw ValidationError("a_q_north exceeds the corner distance");
    if (qs_ > std::hypot(lat_, brake_) + 1e-9)
      throw ValidationError("a_q_south exceeds the corner distance");
  }

  void build() {
    const double abar_n = std::hypot(lat_, lon_);
    const double abar_s = std::hypot(lat_, brake_);
    rows_ << 1.0, 0.0,
        -1.0, 0.0,
        0.0, 1.0,
        0.0, -1.0,
        lon_ / abar_n, lat_ / abar_n,
        -lon_ / abar_n, lat_ / abar_n,
        brake_ / abar_s, -lat_ / abar_s,
        -brake_ / abar_s, -lat_ / abar_s;
    offsets_ << lat_, lat_, lon_, brake_, qn_, qn_, qs_, qs_;
  }

  double lat_, lon_, brake_, qn_, qs_;
  Eigen::Matrix<double, 8, 2> rows_;
  Eigen::Matrix<double, 8, 1> offsets_;
};

inline Eigen::Matrix<double, 8, 1> eval_accel_constraints(const VehicleState& x, const CurvatureTable& table,
                                                          const AccelPolytope& poly) {
  return poly.eval(accel_vector(x, table));
}

// d h / d (s, v, a) for the 8 acceleration rows. With a_lat = -v^2 kappa(s):
//   dh_i/ds = row_lat_i v^2 kappa'(s)
//   dh_i/dv = 2 row_lat_i v kappa(s)
//   dh_i/da = -row_lon_i
inline Eigen::Matrix<double, 8, 3> accel_constraint_jacobian(const VehicleState& x,
                                                             const CurvatureTable& table,
                                                             const AccelPolytope& poly) {
  const CurvatureSample c = interp_curvature(x.s, table);
  Eigen::Matrix<double, 8, 3> J;
  for (int i = 0; i < 8; ++i) {
    const double rl = poly.rows()(i, 0);
    const double rn = poly.rows()(i, 1);
    J(i, 0) = rl * x.v * x.v * c.dkappa_ds;
    J(i, 1) = 2.0 * rl * x.v * c.kappa;
    J(i, 2) = -rn;
  }
  return J;
}

// Hessian of sum_i mu_i h_i w.r.t. (s, v): rows are affine in the acceleration
// vector and a_lat is the only nonlinear map, so the result is
// m [[0, 2 v kappa'], [2 v kappa', 2 kappa]] with m = sum_i mu_i row_lat_i.
inline Eigen::Matrix2d accel_constraint_weighted_hessian(const VehicleState& x, const CurvatureTable& table,
                                                         const AccelPolytope& poly,
                                                         const Eigen::Matrix<double, 8, 1>& mu) {
  const CurvatureSample c = interp_curvature(x.s, table);
  double m = 0.0;
  for (int i = 0; i < 8; ++i) m += mu[i] * poly.rows()(i, 0);
  Eigen::Matrix2d H;
  const double cross = 2.0 * x.v * c.dkappa_ds * m;
  H << 0.0, cross, cross, 2.0 * c.kappa * m;
  return H;
}

}  // namespace racepred
