// Sparse convex QP solver: primal-dual interior point with Mehrotra
// predictor-corrector on the regularized condensed KKT system.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

namespace racepred {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// min 1/2 x'Hx + g'x
// s.t. A_eq x = b_eq
//      l_in <= A_in x <= u_in
//      lb <= x <= ub
//
// H must be symmetric positive semidefinite (tiny negative eigenvalues are
// tolerated through static regularization). Empty lb/ub mean unbounded.
struct QpProblem {
  SpMat H;
  Eigen::VectorXd g;
  SpMat A_eq;
  Eigen::VectorXd b_eq;
  SpMat A_in;
  Eigen::VectorXd l_in, u_in;
  Eigen::VectorXd lb, ub;

  int num_vars() const { return static_cast<int>(g.size()); }

  void validate() const {
    const int n = num_vars();
    if (H.rows() != n || H.cols() != n) throw std::invalid_argument("qp: H dimension mismatch");
    if (A_eq.rows() > 0 && A_eq.cols() != n) throw std::invalid_argument("qp: A_eq column mismatch");
    if (A_eq.rows() != b_eq.size()) throw std::invalid_argument("qp: b_eq dimension mismatch");
    if (A_in.rows() > 0 && A_in.cols() != n) throw std::invalid_argument("qp: A_in column mismatch");
    if (A_in.rows() != l_in.size() || A_in.rows() != u_in.size())
      throw std::invalid_argument("qp: inequality bound dimension mismatch");
    if (lb.size() != 0 && lb.size() != n) throw std::invalid_argument("qp: lb dimension mismatch");
    if (ub.size() != 0 && ub.size() != n) throw std::invalid_argument("qp: ub dimension mismatch");
  }
};

enum class QpStatus { optimal, infeasible, max_iter };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    default: return "max_iter";
  }
}

// Residual fields are absolute infinity norms; status == optimal guarantees
// all three are <= the configured tolerance.
struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y_eq;
  Eigen::VectorXd z_in_lower, z_in_upper;  // inequality-row duals, >= 0
  Eigen::VectorXd z_lb, z_ub;              // bound duals, >= 0
  QpStatus status = QpStatus::max_iter;
  double primal_residual = kInf;
  double dual_residual = kInf;
  double comp_residual = kInf;
  int iterations = 0;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 100;
  double reg_primal = 1e-9;  // static regularization of the (1,1) KKT block
  double reg_dual = 1e-10;   // static regularization of the equality block
  // Accept a supplied warm start immediately when it already satisfies the
  // optimality tolerances. Callers that reuse warm starts across *changing*
  // problems (SQP) switch this off.
  bool warm_fast_path = true;
  bool verbose = false;
};

class QpSolver {
 public:
  QpSolution solve(const QpProblem& qp, const QpOptions& opts = {}, const QpSolution* warm = nullptr) {
    qp.validate();
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());

    QpSolution sol;
    sol.x = Eigen::VectorXd::Zero(n);
    sol.y_eq = Eigen::VectorXd::Zero(me);
    sol.z_in_lower = Eigen::VectorXd::Zero(qp.A_in.rows());
    sol.z_in_upper = Eigen::VectorXd::Zero(qp.A_in.rows());
    sol.z_lb = Eigen::VectorXd::Zero(n);
    sol.z_ub = Eigen::VectorXd::Zero(n);

    // Presolve: crossed bounds mean an empty feasible set.
    for (int i = 0; i < qp.A_in.rows(); ++i) {
      if (qp.l_in[i] > qp.u_in[i] + 1e-14) {
        sol.status = QpStatus::infeasible;
        return sol;
      }
    }
    if (qp.lb.size() && qp.ub.size()) {
      for (int i = 0; i < n; ++i) {
        if (qp.lb[i] > qp.ub[i] + 1e-14) {
          sol.status = QpStatus::infeasible;
          return sol;
        }
      }
    }

    build_box_rows(qp);
    const int mc = static_cast<int>(rows_.size());

    if (mc == 0) {
      solve_equality_only(qp, opts, sol);
      return sol;
    }

    run_ipm(qp, opts, warm, sol);
    return sol;
  }

 private:
  // One-sided/two-sided box row over either an A_in row or a single variable.
  struct BoxRow {
    int var = -1;     // >= 0: identity row on this variable; -1: A_in row
    int in_row = -1;  // index into A_in when var < 0
    double l = -kInf, u = kInf;
  };

  // Equilibrated sparse LU: factorizes S K S with the symmetric max-norm
  // scaling S, solves transparently, refines against the original matrix.
  struct EquilibratedLu {
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    Eigen::VectorXd scale;
    std::uint64_t pattern_hash = 0;
    bool analyzed = false;

    bool factorize(const SpMat& K) {
      const int n = static_cast<int>(K.rows());
      scale.resize(n);
      scale.setOnes();
      for (int k = 0; k < K.outerSize(); ++k)
        for (SpMat::InnerIterator it(K, k); it; ++it)
          scale[it.row()] = std::max(scale[it.row()], std::abs(it.value()));
      for (int i = 0; i < n; ++i) scale[i] = 1.0 / std::sqrt(std::max(scale[i], 1e-12));

      SpMat Ks = scale.asDiagonal() * K * scale.asDiagonal();
      const std::uint64_t h = hash_pattern(Ks);
      if (!analyzed || h != pattern_hash) {
        lu.analyzePattern(Ks);
        pattern_hash = h;
        analyzed = true;
      }
      lu.factorize(Ks);
      return lu.info() == Eigen::Success;
    }

    Eigen::VectorXd solve(const SpMat& K, const Eigen::VectorXd& rhs) const {
      Eigen::VectorXd x = scale.cwiseProduct(lu.solve(Eigen::VectorXd(scale.cwiseProduct(rhs))));
      for (int pass = 0; pass < 3; ++pass) {
        Eigen::VectorXd r = rhs - K * x;
        x += scale.cwiseProduct(lu.solve(Eigen::VectorXd(scale.cwiseProduct(r))));
      }
      return x;
    }
  };


  std::vector<BoxRow> rows_;
  SpMat C_;  // stacked box-row matrix
  EquilibratedLu lu_;

  void build_box_rows(const QpProblem& qp) {
    rows_.clear();
    const int n = qp.num_vars();
    for (int i = 0; i < qp.A_in.rows(); ++i) {
      if (std::isinf(qp.l_in[i]) && std::isinf(qp.u_in[i])) continue;
      BoxRow r;
      r.in_row = i;
      r.l = qp.l_in[i];
      r.u = qp.u_in[i];
      rows_.push_back(r);
    }
    for (int i = 0; i < n; ++i) {
      const double lo = qp.lb.size() ? qp.lb[i] : -kInf;
      const double hi = qp.ub.size() ? qp.ub[i] : kInf;
      if (std::isinf(lo) && std::isinf(hi)) continue;
      BoxRow r;
      r.var = i;
      r.l = lo;
      r.u = hi;
      rows_.push_back(r);
    }

    const int mc = static_cast<int>(rows_.size());
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(qp.A_in.nonZeros()) + rows_.size());
    for (int r = 0; r < mc; ++r)
      if (rows_[r].var >= 0) trips.emplace_back(r, rows_[r].var, 1.0);
    // Gather A_in rows in one pass (A_in is column-major).
    std::vector<int> in_row_to_box(qp.A_in.rows(), -1);
    for (int r = 0; r < mc; ++r)
      if (rows_[r].var < 0) in_row_to_box[rows_[r].in_row] = r;
    for (int k = 0; k < qp.A_in.outerSize(); ++k) {
      for (SpMat::InnerIterator it(qp.A_in, k); it; ++it) {
        const int box = in_row_to_box[it.row()];
        if (box >= 0) trips.emplace_back(box, static_cast<int>(it.col()), it.value());
      }
    }
    C_.resize(mc, qp.num_vars());
    C_.setFromTriplets(trips.begin(), trips.end());
  }

  static std::uint64_t hash_pattern(const SpMat& K) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    mix(static_cast<std::uint64_t>(K.rows()));
    mix(static_cast<std::uint64_t>(K.nonZeros()));
    const int* outer = K.outerIndexPtr();
    for (int i = 0; i <= K.outerSize(); ++i) mix(static_cast<std::uint64_t>(outer[i]));
    const int* inner = K.innerIndexPtr();
    const int nnz = static_cast<int>(K.nonZeros());
    for (int i = 0; i < nnz; i += std::max(1, nnz / 64)) mix(static_cast<std::uint64_t>(inner[i]));
    return h;
  }

  bool factorize(const SpMat& K) { return lu_.factorize(K); }

  Eigen::VectorXd solve_refined(const SpMat& K, const Eigen::VectorXd& rhs) const {
    return lu_.solve(K, rhs);
  }

  void solve_equality_only(const QpProblem& qp, const QpOptions& opts, QpSolution& sol) {
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());
    double dreg = opts.reg_primal, ereg = opts.reg_dual;
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -qp.g;
    rhs.tail(me) = qp.b_eq;
    Eigen::VectorXd xy;
    for (int attempt = 0; attempt < 6; ++attempt) {
      SpMat K = assemble_kkt(qp, Eigen::VectorXd(), dreg, ereg);
      if (!factorize(K)) {
        dreg *= 100.0;
        ereg *= 100.0;
        continue;
      }
      xy = solve_refined(K, rhs);
      break;
    }
    if (xy.size() == 0) {
      sol.status = QpStatus::max_iter;
      return;
    }
    sol.x = xy.head(n);
    sol.y_eq = xy.tail(me);
    compute_residuals(qp, sol);
    sol.iterations = 1;
    sol.status = (sol.primal_residual <= opts.tol && sol.dual_residual <= opts.tol) ? QpStatus::optimal
                                                                                    : QpStatus::max_iter;
  }

  // Equality-only system [[H + dreg*I, A_eq'], [A_eq, -ereg*I]].
  SpMat assemble_kkt(const QpProblem& qp, const Eigen::VectorXd&, double dreg, double ereg) const {
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(qp.H.nonZeros() + 2 * qp.A_eq.nonZeros() + n + me));
    for (int k = 0; k < qp.H.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.H, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, dreg);
    for (int k = 0; k < qp.A_eq.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.A_eq, k); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
      }
    for (int i = 0; i < me; ++i) trips.emplace_back(n + i, n + i, -ereg);
    SpMat K(n + me, n + me);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
  }

  // Augmented system [[H + dreg*I, A_eq', C'], [A_eq, -ereg*I, 0], [C, 0, -W]]
  // with W = 1/(z_l/s_l + z_u/s_u) per box row. Extreme barrier ratios stay on
  // the diagonal, which LU with pivoting and equilibration handles well.
  SpMat assemble_kkt_aug(const QpProblem& qp, const Eigen::VectorXd& w_diag, double dreg,
                         double ereg) const {
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());
    const int mc = static_cast<int>(w_diag.size());
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(qp.H.nonZeros() + 2 * qp.A_eq.nonZeros() + 2 * C_.nonZeros() +
                                           n + me + mc));
    for (int k = 0; k < qp.H.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.H, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, dreg);
    for (int k = 0; k < qp.A_eq.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.A_eq, k); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
      }
    for (int i = 0; i < me; ++i) trips.emplace_back(n + i, n + i, -ereg);
    for (int k = 0; k < C_.outerSize(); ++k)
      for (SpMat::InnerIterator it(C_, k); it; ++it) {
        trips.emplace_back(n + me + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + me + static_cast<int>(it.row()), it.value());
      }
    for (int i = 0; i < mc; ++i) trips.emplace_back(n + me + i, n + me + i, -w_diag[i]);
    SpMat K(n + me + mc, n + me + mc);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
  }

  // Primal residual is an absolute violation norm. Dual and complementarity
  // residuals are scaled componentwise by the magnitudes entering each row, so
  // the test is absolute on well-scaled data and relative on badly scaled data.
  void compute_residuals(const QpProblem& qp, QpSolution& sol) const {
    const int n = qp.num_vars();
    Eigen::VectorXd hx = qp.H * sol.x;
    Eigen::VectorXd aty = Eigen::VectorXd::Zero(n);
    if (qp.A_eq.rows() > 0) aty = qp.A_eq.transpose() * sol.y_eq;
    Eigen::VectorXd znet = Eigen::VectorXd::Zero(n);
    if (qp.A_in.rows() > 0) znet += qp.A_in.transpose() * (sol.z_in_upper - sol.z_in_lower);
    znet += sol.z_ub - sol.z_lb;

    double rd = 0.0;
    for (int i = 0; i < n; ++i) {
      const double res = hx[i] + qp.g[i] + aty[i] + znet[i];
      const double scale =
          1.0 + std::max({std::abs(hx[i]), std::abs(qp.g[i]), std::abs(aty[i]), std::abs(znet[i])});
      rd = std::max(rd, std::abs(res) / scale);
    }

    double pviol = 0.0;
    if (qp.A_eq.rows() > 0) pviol = (qp.A_eq * sol.x - qp.b_eq).lpNorm<Eigen::Infinity>();
    if (qp.A_in.rows() > 0) {
      Eigen::VectorXd ax = qp.A_in * sol.x;
      for (int i = 0; i < ax.size(); ++i) {
        if (!std::isinf(qp.l_in[i])) pviol = std::max(pviol, qp.l_in[i] - ax[i]);
        if (!std::isinf(qp.u_in[i])) pviol = std::max(pviol, ax[i] - qp.u_in[i]);
      }
    }
    for (int i = 0; i < n; ++i) {
      if (qp.lb.size() && !std::isinf(qp.lb[i])) pviol = std::max(pviol, qp.lb[i] - sol.x[i]);
      if (qp.ub.size() && !std::isinf(qp.ub[i])) pviol = std::max(pviol, sol.x[i] - qp.ub[i]);
    }

    double comp = 0.0;
    auto comp_term = [&comp](double z, double slack) {
      comp = std::max(comp, std::abs(z * slack) / (1.0 + std::abs(z)));
    };
    if (qp.A_in.rows() > 0) {
      Eigen::VectorXd ax = qp.A_in * sol.x;
      for (int i = 0; i < ax.size(); ++i) {
        if (!std::isinf(qp.l_in[i])) comp_term(sol.z_in_lower[i], ax[i] - qp.l_in[i]);
        if (!std::isinf(qp.u_in[i])) comp_term(sol.z_in_upper[i], qp.u_in[i] - ax[i]);
      }
    }
    for (int i = 0; i < n; ++i) {
      if (qp.lb.size() && !std::isinf(qp.lb[i])) comp_term(sol.z_lb[i], sol.x[i] - qp.lb[i]);
      if (qp.ub.size() && !std::isinf(qp.ub[i])) comp_term(sol.z_ub[i], qp.ub[i] - sol.x[i]);
    }

    sol.primal_residual = pviol;
    sol.dual_residual = rd;
    sol.comp_residual = comp;
  }

  // Active-set polish: guess active sides from the slack/dual ratio, solve one
  // clean equality KKT system, accept only if the residuals improve.
  bool polish(const QpProblem& qp, const Eigen::VectorXd& l, const Eigen::VectorXd& u,
              const Eigen::VectorXd& sl, const Eigen::VectorXd& su, const Eigen::VectorXd& zl,
              const Eigen::VectorXd& zu, const Eigen::VectorXd& y, QpSolution& out,
              bool verbose = false) const {
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());
    const int mc = static_cast<int>(rows_.size());

    std::vector<int> act;
    std::vector<bool> act_upper;
    for (int i = 0; i < mc; ++i) {
      const bool al = !std::isinf(l[i]) && zl[i] > sl[i];
      const bool au = !std::isinf(u[i]) && zu[i] > su[i];
      if (al && au) {
        act.push_back(i);
        act_upper.push_back(zu[i] / std::max(su[i], 1e-300) > zl[i] / std::max(sl[i], 1e-300));
      } else if (al || au) {
        act.push_back(i);
        act_upper.push_back(au);
      }
    }
    const int ma = static_cast<int>(act.size());

    std::vector<Triplet> trips;
    for (int k = 0; k < qp.H.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.H, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int k = 0; k < qp.A_eq.outerSize(); ++k)
      for (SpMat::InnerIterator it(qp.A_eq, k); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
      }
    std::vector<int> row_to_act(mc, -1);
    for (int a = 0; a < ma; ++a) row_to_act[act[a]] = a;
    for (int k = 0; k < C_.outerSize(); ++k)
      for (SpMat::InnerIterator it(C_, k); it; ++it) {
        const int a = row_to_act[it.row()];
        if (a < 0) continue;
        trips.emplace_back(n + me + a, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + me + a, it.value());
      }
    SpMat K0(n + me + ma, n + me + ma);
    K0.setFromTriplets(trips.begin(), trips.end());
    // regularized copy for factorization; refinement targets the exact system
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, 1e-11);
    for (int i = 0; i < me + ma; ++i) trips.emplace_back(n + i, n + i, -1e-11);
    SpMat K(n + me + ma, n + me + ma);
    K.setFromTriplets(trips.begin(), trips.end());

    Eigen::VectorXd rhs(n + me + ma);
    rhs.head(n) = -qp.g;
    if (me) rhs.segment(n, me) = qp.b_eq;
    for (int a = 0; a < ma; ++a) rhs[n + me + a] = act_upper[a] ? u[act[a]] : l[act[a]];

    EquilibratedLu local;
    if (!local.factorize(K)) {
      if (verbose) std::printf("  polish: factorization failed (ma=%d)\n", ma);
      return false;
    }
    Eigen::VectorXd v = local.solve(K0, rhs);
    if (!v.allFinite()) {
      if (verbose) std::printf("  polish: non-finite solution (ma=%d)\n", ma);
      return false;
    }

    QpSolution trial;
    trial.x = v.head(n);
    trial.y_eq = me ? Eigen::VectorXd(v.segment(n, me)) : Eigen::VectorXd();
    Eigen::VectorXd pzl = Eigen::VectorXd::Zero(mc), pzu = Eigen::VectorXd::Zero(mc);
    for (int a = 0; a < ma; ++a) {
      const double nu = v[n + me + a];  // nu = z_u - z_l on this row
      if (act_upper[a])
        pzu[act[a]] = std::max(nu, 0.0);
      else
        pzl[act[a]] = std::max(-nu, 0.0);
    }
    trial.z_in_lower = Eigen::VectorXd::Zero(qp.A_in.rows());
    trial.z_in_upper = Eigen::VectorXd::Zero(qp.A_in.rows());
    trial.z_lb = Eigen::VectorXd::Zero(n);
    trial.z_ub = Eigen::VectorXd::Zero(n);
    scatter_duals(qp, pzl, pzu, trial);
    compute_residuals(qp, trial);

    QpSolution current;
    current.x = out.x;
    current.y_eq = y;
    current.z_in_lower = Eigen::VectorXd::Zero(qp.A_in.rows());
    current.z_in_upper = Eigen::VectorXd::Zero(qp.A_in.rows());
    current.z_lb = Eigen::VectorXd::Zero(n);
    current.z_ub = Eigen::VectorXd::Zero(n);
    scatter_duals(qp, zl, zu, current);
    compute_residuals(qp, current);

    const double trial_score = std::max({trial.primal_residual, trial.dual_residual, trial.comp_residual});
    const double cur_score =
        std::max({current.primal_residual, current.dual_residual, current.comp_residual});
    if (verbose)
      std::printf("  polish: ma=%d trial=(%.2e %.2e %.2e) cur=(%.2e %.2e %.2e)\n", ma,
                  trial.primal_residual, trial.dual_residual, trial.comp_residual,
                  current.primal_residual, current.dual_residual, current.comp_residual);
    if (trial_score < cur_score) {
      trial.status = out.status;
      trial.iterations = out.iterations;
      out = trial;
      return true;
    }
    return false;
  }

  void scatter_duals(const QpProblem& qp, const Eigen::VectorXd& zl, const Eigen::VectorXd& zu,
                     QpSolution& sol) const {
    sol.z_in_lower.setZero();
    sol.z_in_upper.setZero();
    sol.z_lb.setZero();
    sol.z_ub.setZero();
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const BoxRow& br = rows_[r];
      if (br.var >= 0) {
        if (!std::isinf(br.l)) sol.z_lb[br.var] = zl[static_cast<int>(r)];
        if (!std::isinf(br.u)) sol.z_ub[br.var] = zu[static_cast<int>(r)];
      } else {
        if (!std::isinf(br.l)) sol.z_in_lower[br.in_row] = zl[static_cast<int>(r)];
        if (!std::isinf(br.u)) sol.z_in_upper[br.in_row] = zu[static_cast<int>(r)];
      }
    }
    (void)qp;
  }

  void run_ipm(const QpProblem& qp, const QpOptions& opts, const QpSolution* warm, QpSolution& sol) {
    const int n = qp.num_vars();
    const int me = static_cast<int>(qp.A_eq.rows());
    const int mc = static_cast<int>(rows_.size());

    Eigen::VectorXd l(mc), u(mc);
    for (int i = 0; i < mc; ++i) {
      l[i] = rows_[i].l;
      u[i] = rows_[i].u;
    }

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
    if (warm && warm->x.size() == n) {
      x = warm->x;
      if (warm->y_eq.size() == me) y = warm->y_eq;
    }

    // Warm-start fast path: accept immediately if already optimal.
    if (opts.warm_fast_path && warm && warm->x.size() == n) {
      QpSolution trial = sol;
      trial.x = x;
      trial.y_eq = y;
      trial.z_in_lower = warm->z_in_lower.size() == qp.A_in.rows() ? warm->z_in_lower
                                                                   : Eigen::VectorXd::Zero(qp.A_in.rows());
      trial.z_in_upper = warm->z_in_upper.size() == qp.A_in.rows() ? warm->z_in_upper
                                                                   : Eigen::VectorXd::Zero(qp.A_in.rows());
      trial.z_lb = warm->z_lb.size() == n ? warm->z_lb : Eigen::VectorXd::Zero(n);
      trial.z_ub = warm->z_ub.size() == n ? warm->z_ub : Eigen::VectorXd::Zero(n);
      compute_residuals(qp, trial);
      if (trial.primal_residual <= opts.tol && trial.dual_residual <= opts.tol &&
          trial.comp_residual <= opts.tol) {
        sol = trial;
        sol.status = QpStatus::optimal;
        sol.iterations = 0;
        return;
      }
    }

    Eigen::VectorXd cx = C_ * x;
    Eigen::VectorXd sl(mc), su(mc), zl(mc), zu(mc);
    for (int i = 0; i < mc; ++i) {
      const bool hl = !std::isinf(l[i]), hu = !std::isinf(u[i]);
      sl[i] = hl ? std::max(cx[i] - l[i], 1.0) : 1.0;
      su[i] = hu ? std::max(u[i] - cx[i], 1.0) : 1.0;
      zl[i] = hl ? 1.0 : 0.0;
      zu[i] = hu ? 1.0 : 0.0;
    }

    int n_sides = 0;
    for (int i = 0; i < mc; ++i) {
      if (!std::isinf(l[i])) ++n_sides;
      if (!std::isinf(u[i])) ++n_sides;
    }

    double pscale = 1.0;
    if (qp.b_eq.size()) pscale = std::max(pscale, qp.b_eq.lpNorm<Eigen::Infinity>());
    for (int i = 0; i < mc; ++i) {
      if (!std::isinf(l[i])) pscale = std::max(pscale, std::abs(l[i]));
      if (!std::isinf(u[i])) pscale = std::max(pscale, std::abs(u[i]));
    }

    double dreg = opts.reg_primal, ereg = std::max(opts.reg_dual, 1e-12);
    int stall_count = 0;
    int polish_tries = 0;
    QpSolution best;
    double best_score = kInf;
    int best_age = 0;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
      cx = C_ * x;
      Eigen::VectorXd rd = qp.H * x + qp.g;
      if (me) rd += qp.A_eq.transpose() * y;
      rd += C_.transpose() * (zu - zl);
      Eigen::VectorXd re = me ? Eigen::VectorXd(qp.A_eq * x - qp.b_eq) : Eigen::VectorXd();
      Eigen::VectorXd rl(mc), ru(mc);
      double mu = 0.0;
      for (int i = 0; i < mc; ++i) {
        const bool hl = !std::isinf(l[i]), hu = !std::isinf(u[i]);
        rl[i] = hl ? (cx[i] - sl[i] - l[i]) : 0.0;
        ru[i] = hu ? (cx[i] + su[i] - u[i]) : 0.0;
        if (hl) mu += sl[i] * zl[i];
        if (hu) mu += su[i] * zu[i];
      }
      mu /= std::max(1, n_sides);

      // Convergence bookkeeping on the true (slack-free) residuals.
      {
        QpSolution trial;
        trial.x = x;
        trial.y_eq = y;
        trial.z_in_lower = Eigen::VectorXd::Zero(qp.A_in.rows());
        trial.z_in_upper = Eigen::VectorXd::Zero(qp.A_in.rows());
        trial.z_lb = Eigen::VectorXd::Zero(n);
        trial.z_ub = Eigen::VectorXd::Zero(n);
        scatter_duals(qp, zl, zu, trial);
        compute_residuals(qp, trial);
        if (opts.verbose)
          std::printf("  ipm %3d: rp=%.2e rd=%.2e comp=%.2e mu=%.2e\n", iter, trial.primal_residual,
                      trial.dual_residual, trial.comp_residual, mu);
        if (trial.primal_residual <= opts.tol && trial.dual_residual <= opts.tol &&
            trial.comp_residual <= opts.tol) {
          polish(qp, l, u, sl, su, zl, zu, y, trial, opts.verbose);
          sol = trial;
          sol.status = QpStatus::optimal;
          sol.iterations = iter;
          return;
        }
        // Once the barrier is nearly resolved, one active-set polish usually
        // lands machine-precision KKT.
        if (mu < 1e-6 * std::max(1.0, pscale) && polish_tries < 6) {
          ++polish_tries;
          QpSolution pol = trial;
          if (polish(qp, l, u, sl, su, zl, zu, y, pol, opts.verbose) && pol.primal_residual <= opts.tol &&
              pol.dual_residual <= opts.tol && pol.comp_residual <= opts.tol) {
            sol = pol;
            sol.status = QpStatus::optimal;
            sol.iterations = iter;
            return;
          }
        }

        const double score = std::max({trial.primal_residual / std::max(pscale, 1.0), trial.dual_residual,
                                       trial.comp_residual});
        if (score < best_score) {
          best_score = score;
          best = trial;
          best.iterations = iter;
          best_age = 0;
        } else if (++best_age >= 15) {
          sol = best;  // no progress; the best iterate is what we have
          sol.status = QpStatus::max_iter;
          return;
        }
        // Divergence heuristic: complementarity collapsed but primal stuck.
        const double zmax = std::max(zl.lpNorm<Eigen::Infinity>(), zu.lpNorm<Eigen::Infinity>());
        if (zmax > 1e13 ||
            (mu < 1e-12 * pscale && trial.primal_residual > pscale * std::max(1e-6, 1e3 * opts.tol))) {
          sol = trial;
          sol.status = QpStatus::infeasible;
          sol.iterations = iter;
          return;
        }
      }

      Eigen::VectorXd d(mc), w_diag(mc);
      for (int i = 0; i < mc; ++i) {
        double di = 0.0;
        if (!std::isinf(l[i])) di += zl[i] / sl[i];
        if (!std::isinf(u[i])) di += zu[i] / su[i];
        d[i] = std::max(di, 1e-300);
        w_diag[i] = std::clamp(1.0 / d[i], 1e-16, 1e16);
      }

      SpMat K = assemble_kkt_aug(qp, w_diag, dreg, ereg);
      bool ok = factorize(K);
      int bumps = 0;
      while (!ok && bumps < 6) {
        dreg *= 100.0;
        ereg *= 100.0;
        K = assemble_kkt_aug(qp, w_diag, dreg, ereg);
        ok = factorize(K);
        ++bumps;
      }
      if (!ok) {
        if (best.x.size()) sol = best;
        sol.status = QpStatus::max_iter;
        sol.iterations = iter;
        return;
      }

      auto build_step = [&](double sigma_mu, const Eigen::VectorXd* dsa_l, const Eigen::VectorXd* dza_l,
                            const Eigen::VectorXd* dsa_u, const Eigen::VectorXd* dza_u, Eigen::VectorXd& dx,
                            Eigen::VectorXd& dy, Eigen::VectorXd& dsl, Eigen::VectorXd& dsu,
                            Eigen::VectorXd& dzl, Eigen::VectorXd& dzu) {
        Eigen::VectorXd rcl(mc), rcu(mc);
        for (int i = 0; i < mc; ++i) {
          rcl[i] = !std::isinf(l[i])
                       ? sl[i] * zl[i] - sigma_mu + (dsa_l ? (*dsa_l)[i] * (*dza_l)[i] : 0.0)
                       : 0.0;
          rcu[i] = !std::isinf(u[i])
                       ? su[i] * zu[i] - sigma_mu + (dsa_u ? (*dsa_u)[i] * (*dza_u)[i] : 0.0)
                       : 0.0;
        }
        Eigen::VectorXd w = Eigen::VectorXd::Zero(mc);
        for (int i = 0; i < mc; ++i) {
          if (!std::isinf(l[i])) w[i] += (zl[i] / sl[i]) * rl[i] + rcl[i] / sl[i];
          if (!std::isinf(u[i])) w[i] += (zu[i] / su[i]) * ru[i] - rcu[i] / su[i];
        }
        Eigen::VectorXd rhs(n + me + mc);
        rhs.head(n) = -rd;
        if (me) rhs.segment(n, me) = -re;
        rhs.tail(mc) = -w_diag.cwiseProduct(w);
        Eigen::VectorXd v = solve_refined(K, rhs);
        dx = v.head(n);
        if (me) dy = v.segment(n, me);
        Eigen::VectorXd cdx = C_ * dx;
        dsl.resize(mc);
        dsu.resize(mc);
        dzl.resize(mc);
        dzu.resize(mc);
        for (int i = 0; i < mc; ++i) {
          if (!std::isinf(l[i])) {
            dsl[i] = cdx[i] + rl[i];
            dzl[i] = -(rcl[i] + zl[i] * dsl[i]) / sl[i];
          } else {
            dsl[i] = dzl[i] = 0.0;
          }
          if (!std::isinf(u[i])) {
            dsu[i] = -cdx[i] - ru[i];
            dzu[i] = -(rcu[i] + zu[i] * dsu[i]) / su[i];
          } else {
            dsu[i] = dzu[i] = 0.0;
          }
        }
      };

      auto max_step = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
        double a = 1.0;
        for (int i = 0; i < mc; ++i)
          if (dv[i] < 0.0 && v[i] > 0.0) a = std::min(a, -v[i] / dv[i]);
        return a;
      };

      // Affine (predictor) step.
      Eigen::VectorXd dx, dy, dsl, dsu, dzl, dzu;
      build_step(0.0, nullptr, nullptr, nullptr, nullptr, dx, dy, dsl, dsu, dzl, dzu);
      double ap = std::min(max_step(sl, dsl), max_step(su, dsu));
      double ad = std::min(max_step(zl, dzl), max_step(zu, dzu));
      double mu_aff = 0.0;
      for (int i = 0; i < mc; ++i) {
        if (!std::isinf(l[i])) mu_aff += (sl[i] + ap * dsl[i]) * (zl[i] + ad * dzl[i]);
        if (!std::isinf(u[i])) mu_aff += (su[i] + ap * dsu[i]) * (zu[i] + ad * dzu[i]);
      }
      mu_aff /= std::max(1, n_sides);
      const double sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 1e-8, 0.9);

      // Corrector step.
      Eigen::VectorXd dsl_a = dsl, dsu_a = dsu, dzl_a = dzl, dzu_a = dzu;
      build_step(sigma * mu, &dsl_a, &dzl_a, &dsu_a, &dzu_a, dx, dy, dsl, dsu, dzl, dzu);
      ap = 0.995 * std::min(max_step(sl, dsl), max_step(su, dsu));
      ad = 0.995 * std::min(max_step(zl, dzl), max_step(zu, dzu));
      ap = std::min(ap, 1.0);
      ad = std::min(ad, 1.0);

      if (ap < 1e-10 && ad < 1e-10) {
        if (++stall_count >= 3) {
          QpSolution pol;
          pol.x = x;
          pol.status = QpStatus::max_iter;
          pol.iterations = iter;
          if (polish(qp, l, u, sl, su, zl, zu, y, pol) && pol.primal_residual <= opts.tol &&
              pol.dual_residual <= opts.tol && pol.comp_residual <= opts.tol) {
            sol = pol;
            sol.status = QpStatus::optimal;
            return;
          }
          const bool bad_primal =
              best.x.size() == 0 || best.primal_residual > pscale * std::max(1e-6, 1e3 * opts.tol);
          sol = best.x.size() ? best : sol;
          sol.status = bad_primal ? QpStatus::infeasible : QpStatus::max_iter;
          sol.iterations = iter;
          return;
        }
      } else {
        stall_count = 0;
      }

      x += ap * dx;
      if (me) y += ad * dy;
      for (int i = 0; i < mc; ++i) {
        if (!std::isinf(l[i])) {
          sl[i] += ap * dsl[i];
          zl[i] += ad * dzl[i];
          sl[i] = std::max(sl[i], 1e-300);
          zl[i] = std::max(zl[i], 0.0);
        }
        if (!std::isinf(u[i])) {
          su[i] += ap * dsu[i];
          zu[i] += ad * dzu[i];
          su[i] = std::max(su[i], 1e-300);
          zu[i] = std::max(zu[i], 0.0);
        }
      }
    }

    if (best.x.size()) sol = best;
    sol.iterations = opts.max_iter;
    sol.status = QpStatus::max_iter;
  }
};

}  // namespace racepred
