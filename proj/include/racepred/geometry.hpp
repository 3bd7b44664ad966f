// Track geometry: centerline ingestion, arc-length/curvature parameterization,
// offline racing path, and online path blending.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "racepred/common.hpp"
#include "racepred/qp.hpp"

namespace racepred {

struct TrackCenterline {
  std::vector<Vec2> points;
  std::vector<double> left_width;
  std::vector<double> right_width;

  void validate() const {
    if (points.size() < 3) throw ValidationError("centerline needs at least 3 points");
    if (left_width.size() != points.size() || right_width.size() != points.size())
      throw ValidationError("centerline width count mismatch");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!(left_width[i] > 0.0) || !(right_width[i] > 0.0))
        throw ValidationError("centerline widths must be positive");
      if (i > 0 && (points[i] - points[i - 1]).norm() < 1e-9)
        throw ValidationError("centerline has duplicated consecutive points");
    }
  }
};

struct CurvatureTable {
  std::vector<double> knots;   // arc length, strictly increasing
  std::vector<double> values;  // 1/m

  void validate() const {
    if (knots.size() != values.size()) throw ValidationError("curvature table size mismatch");
    if (knots.empty()) throw ValidationError("curvature table empty");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!std::isfinite(knots[i]) || !std::isfinite(values[i]))
        throw ValidationError("curvature table has non-finite entries");
      if (i > 0 && !(knots[i] > knots[i - 1]))
        throw ValidationError("curvature knots must be strictly increasing");
    }
  }
};

struct ParamPath {
  std::vector<double> arc_lengths;
  std::vector<Vec2> positions;
  std::vector<double> headings;
  CurvatureTable curvature;

  double length() const { return arc_lengths.empty() ? 0.0 : arc_lengths.back() - arc_lengths.front(); }

  Vec2 position_at(double s) const {
    const int i = bracket(arc_lengths, s);
    const double den = arc_lengths[i + 1] - arc_lengths[i];
    double t = den > 0.0 ? (s - arc_lengths[i]) / den : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return positions[i] + t * (positions[i + 1] - positions[i]);
  }

  double heading_at(double s) const {
    const int i = bracket(arc_lengths, s);
    const double den = arc_lengths[i + 1] - arc_lengths[i];
    double t = den > 0.0 ? (s - arc_lengths[i]) / den : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double h0 = headings[i];
    const double h1 = h0 + wrap_angle(headings[i + 1] - h0);
    return wrap_angle(h0 + t * (h1 - h0));
  }
};

struct PlanarPose {
  Vec2 position;
  double heading = 0.0;  // direction of motion, rad
};

struct PathProjection {
  double s = 0.0;
  double distance = 0.0;
  Vec2 point;
};

inline PathProjection project_to_path(const ParamPath& path, const Vec2& p) {
  PathProjection best;
  best.distance = kInf;
  for (std::size_t i = 0; i + 1 < path.positions.size(); ++i) {
    const Vec2 a = path.positions[i];
    const Vec2 b = path.positions[i + 1];
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + t * ab;
    const double d = (p - q).norm();
    if (d < best.distance) {
      best.distance = d;
      best.point = q;
      best.s = path.arc_lengths[i] + t * (path.arc_lengths[i + 1] - path.arc_lengths[i]);
    }
  }
  return best;
}

// Track CSV: header `x_m,y_m,w_left_m,w_right_m`, one point per row.
inline TrackCenterline load_track(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("track csv: empty stream");
  auto strip = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r\n"));
    s.erase(s.find_last_not_of(" \t\r\n") + 1);
    return s;
  };
  if (strip(line).rfind("x_m,y_m,w_left_m,w_right_m", 0) != 0)
    throw ParseError("track csv: unexpected header '" + line + "'");

  TrackCenterline track;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        vals.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("track csv line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() < 4)
      throw ParseError("track csv line " + std::to_string(lineno) + ": expected 4 columns");
    track.points.push_back({vals[0], vals[1]});
    track.left_width.push_back(vals[2]);
    track.right_width.push_back(vals[3]);
  }
  if (track.points.empty()) throw ParseError("track csv: no data rows");
  track.validate();
  return track;
}

// Arc length by cumulative chords, heading by central differences, curvature by
// differencing the unwrapped heading over arc length, then a centered moving
// average (default window 5).
inline ParamPath parameterize(const std::vector<Vec2>& points, int smoothing_window = 5) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw ValidationError("parameterize needs at least 3 points");

  ParamPath path;
  path.positions = points;
  path.arc_lengths.resize(n);
  path.arc_lengths[0] = 0.0;
  for (int i = 1; i < n; ++i) {
    const double d = (points[i] - points[i - 1]).norm();
    if (d < 1e-9) throw ValidationError("parameterize: repeated consecutive points");
    path.arc_lengths[i] = path.arc_lengths[i - 1] + d;
  }

  path.headings.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec2 d = (i == 0) ? points[1] - points[0]
                            : (i == n - 1 ? points[n - 1] - points[n - 2] : points[i + 1] - points[i - 1]);
    path.headings[i] = std::atan2(d.y, d.x);
  }

  std::vector<double> unwrapped(n);
  unwrapped[0] = path.headings[0];
  for (int i = 1; i < n; ++i)
    unwrapped[i] = unwrapped[i - 1] + wrap_angle(path.headings[i] - unwrapped[i - 1]);

  std::vector<double> kappa(n);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - 1);
    const int hi = std::min(n - 1, i + 1);
    const double ds = path.arc_lengths[hi] - path.arc_lengths[lo];
    kappa[i] = ds > 0.0 ? (unwrapped[hi] - unwrapped[lo]) / ds : 0.0;
  }
  kappa = moving_average(kappa, smoothing_window);

  path.curvature.knots = path.arc_lengths;
  path.curvature.values = std::move(kappa);
  return path;
}

struct RacelineOptions {
  double smoothing_weight = 1e-3;  // first-difference penalty on the offsets
  double margin = 0.25;            // kept clear of each wall, m
  int smoothing_window = 5;
  bool pin_endpoints = true;
};

// Convex QP over per-point lateral offsets minimizing the squared second
// differences of the offset path (linearized curvature proxy).
inline ParamPath min_curvature_path(const TrackCenterline& track, const RacelineOptions& opts = {}) {
  track.validate();
  const int n = static_cast<int>(track.points.size());
  const ParamPath center = parameterize(track.points, opts.smoothing_window);

  std::vector<Vec2> normal(n);
  for (int i = 0; i < n; ++i)
    normal[i] = {-std::sin(center.headings[i]), std::cos(center.headings[i])};

  // rows of M: second difference of (c + n*nu) per coordinate
  std::vector<Triplet> mt;
  Eigen::VectorXd b(2 * (n - 2));
  for (int i = 1; i + 1 < n; ++i) {
    const int rx = i - 1;
    const int ry = (n - 2) + (i - 1);
    mt.emplace_back(rx, i - 1, normal[i - 1].x);
    mt.emplace_back(rx, i, -2.0 * normal[i].x);
    mt.emplace_back(rx, i + 1, normal[i + 1].x);
    mt.emplace_back(ry, i - 1, normal[i - 1].y);
    mt.emplace_back(ry, i, -2.0 * normal[i].y);
    mt.emplace_back(ry, i + 1, normal[i + 1].y);
    b[rx] = track.points[i - 1].x - 2.0 * track.points[i].x + track.points[i + 1].x;
    b[ry] = track.points[i - 1].y - 2.0 * track.points[i].y + track.points[i + 1].y;
  }
  SpMat M(2 * (n - 2), n);
  M.setFromTriplets(mt.begin(), mt.end());

  std::vector<Triplet> dt;
  for (int i = 0; i + 1 < n; ++i) {
    dt.emplace_back(i, i, -1.0);
    dt.emplace_back(i, i + 1, 1.0);
  }
  SpMat Dfd(n - 1, n);
  Dfd.setFromTriplets(dt.begin(), dt.end());

  QpProblem qp;
  SpMat ridge(n, n);
  ridge.setIdentity();
  qp.H = SpMat(2.0 * (SpMat(M.transpose() * M) + opts.smoothing_weight * SpMat(Dfd.transpose() * Dfd)) +
               2e-8 * ridge);
  qp.g = 2.0 * (M.transpose() * b);
  qp.A_eq.resize(0, n);
  qp.A_in.resize(0, n);
  qp.lb.resize(n);
  qp.ub.resize(n);
  for (int i = 0; i < n; ++i) {
    qp.lb[i] = -(track.right_width[i] - opts.margin);
    qp.ub[i] = track.left_width[i] - opts.margin;
  }
  if (opts.pin_endpoints) {
    qp.lb[0] = qp.ub[0] = 0.0;
    qp.lb[n - 1] = qp.ub[n - 1] = 0.0;
  }

  QpSolver solver;
  QpSolution sol = solver.solve(qp, {.tol = 1e-9, .max_iter = 200});
  if (sol.status == QpStatus::infeasible)
    throw InfeasibleError("min_curvature_path: margins exceed track width");
  if (sol.status != QpStatus::optimal)
    throw Error("min_curvature_path: qp did not converge");

  std::vector<Vec2> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = track.points[i] + sol.x[i] * normal[i];
  return parameterize(pts, opts.smoothing_window);
}

struct BlendOptions {
  double spacing = 2.0;        // sampling step along the blend, m
  double max_proj_dist = 25.0; // pose farther than this from the path fails
  double max_offset = 12.0;    // constant-motion extension clamped to this offset
  int smoothing_window = 5;
};

// Convex combination of the straight constant-motion extension of the pose and
// the racing path: p(s) = (s/s_f) topt(s) + (1 - s/s_f) pc(s), then the racing
// path alone for s >= s_f. Output is re-parameterized by its own arc length.
inline ParamPath blend_path(const PlanarPose& pose, const ParamPath& racing, double s_f, double length,
                            const BlendOptions& opts = {}) {
  if (!(s_f > 0.0)) throw ValidationError("blend_path: s_f must be positive");
  const PathProjection proj = project_to_path(racing, pose.position);
  if (proj.distance > opts.max_proj_dist)
    throw ProjectionError("blend_path: pose too far from racing path");

  const double remaining = racing.arc_lengths.back() - proj.s;
  const double total = std::min(length, remaining);
  if (total < 4.0 * opts.spacing)
    throw ValidationError("blend_path: insufficient racing path remaining");

  // Grid that lands exactly on s_f when the blend region is covered.
  std::vector<double> grid;
  const double blend_end = std::min(s_f, total);
  const int n_blend = std::max(2, static_cast<int>(std::round(blend_end / opts.spacing)));
  for (int i = 0; i <= n_blend; ++i) grid.push_back(blend_end * i / n_blend);
  for (double s = blend_end + opts.spacing; s < total; s += opts.spacing) grid.push_back(s);
  if (total > grid.back() + 1e-9) grid.push_back(total);

  const Vec2 dir{std::cos(pose.heading), std::sin(pose.heading)};
  std::vector<Vec2> pts;
  pts.reserve(grid.size());
  for (double s : grid) {
    const Vec2 topt = racing.position_at(proj.s + s);
    if (s >= s_f) {
      pts.push_back(topt);
      continue;
    }
    Vec2 pc = pose.position + s * dir;
    const Vec2 off = pc - topt;
    const double d = off.norm();
    if (d > opts.max_offset) pc = topt + off * (opts.max_offset / d);
    const double t = s / s_f;
    pts.push_back(t * topt + (1.0 - t) * pc);
  }
  return parameterize(pts, opts.smoothing_window);
}

}  // namespace racepred
