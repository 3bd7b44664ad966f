#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace racepred {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class ProjectionError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double a) const { return {a * x, a * y}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 operator*(double a, const Vec2& v) { return v * a; }

inline double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// Index of the segment [grid[i], grid[i+1]] bracketing q, clamped to the ends.
inline int bracket(const std::vector<double>& grid, double q) {
  if (q <= grid.front()) return 0;
  if (q >= grid.back()) return static_cast<int>(grid.size()) - 2;
  auto it = std::upper_bound(grid.begin(), grid.end(), q);
  int i = static_cast<int>(it - grid.begin()) - 1;
  return std::clamp(i, 0, static_cast<int>(grid.size()) - 2);
}

inline double lerp_on_grid(const std::vector<double>& grid, const std::vector<double>& vals, double q) {
  if (grid.size() == 1) return vals[0];
  const int i = bracket(grid, q);
  const double den = grid[i + 1] - grid[i];
  double t = den > 0.0 ? (q - grid[i]) / den : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return vals[i] + t * (vals[i + 1] - vals[i]);
}

// Centered moving average with window clamping at the ends; window <= 1 is a copy.
inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  if (window <= 1 || v.size() < 2) return v;
  const int n = static_cast<int>(v.size());
  const int half = window / 2;
  std::vector<double> out(v.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j) acc += v[j];
    out[i] = acc / (hi - lo + 1);
  }
  return out;
}

}  // namespace racepred
