// Low-level prediction OCP: multiple-shooting transcription of the
// progress-maximizing triple integrator with slacked acceleration constraints,
// solved by SQP at the fast prediction rate.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <memory>
#include <vector>

#include "racepred/dynamics.hpp"
#include "racepred/nlp.hpp"

namespace racepred {

struct LlnlpConfig {
  int N = 60;          // shooting intervals
  double dt = 0.1;     // s
  double v_max = 83.0; // m/s
  double alpha1 = 1e4; // linear slack weight
  double alpha2 = 1e8; // quadratic slack weight
  double tol = 1e-6;
  int max_iter = 200;
  bool verbose = false;

  void validate() const {
    if (N < 2) throw ValidationError("llnlp: N must be >= 2");
    if (!(dt > 0.0)) throw ValidationError("llnlp: dt must be positive");
    if (!(v_max > 0.0)) throw ValidationError("llnlp: v_max must be positive");
    if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw ValidationError("llnlp: slack weights must be positive");
  }
};

struct PredictorParams {
  double w_jerk = 0.5;
  double w_acc = 0.2;
  AccelPolytope poly{5.0, 2.5, 5.0};

  void validate() const {
    if (w_jerk < 0.0 || w_acc < 0.0) throw ValidationError("predictor weights must be nonnegative");
  }
};

struct PredictedTrajectory {
  std::vector<VehicleState> states;              // N+1
  std::vector<double> inputs;                    // N (jerk)
  std::vector<Eigen::Matrix<double, 8, 1>> slacks;
  double dt = 0.1;
  bool converged = false;
  NlpStatus status = NlpStatus::max_iter;
  double kkt_stationarity = kInf, kkt_eq = kInf, kkt_ineq = kInf, kkt_comp = kInf;
  double dynamics_residual = kInf;
  int iterations = 0;
  double solve_time_s = 0.0;
  std::vector<std::vector<int>> active_rows;     // tight acceleration rows per node

  // raw solver payload, reused for warm starts and independent checks
  Eigen::VectorXd primal, lambda, mu, z_lb, z_ub;

  VehicleState interpolate(double t) const {
    const double tk = std::clamp(t / dt, 0.0, static_cast<double>(states.size() - 1));
    const int k = std::min(static_cast<int>(tk), static_cast<int>(states.size()) - 2);
    const double f = tk - k;
    const VehicleState& a = states[k];
    const VehicleState& b = states[k + 1];
    return {a.s + f * (b.s - a.s), a.v + f * (b.v - a.v), a.a + f * (b.a - a.a)};
  }
};

// Transcription is built once per config; initial state, curvature table,
// weights and constraint polytope are injectable parameters.
class LlnlpPredictor {
 public:
  explicit LlnlpPredictor(const LlnlpConfig& cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    dyn_ = discretize_dynamics(cfg_.dt);
    build_problem();
  }

  const LlnlpConfig& config() const { return cfg_; }
  const NlpProblem& problem() const { return problem_; }
  int num_vars() const { return 12 * cfg_.N + 11; }
  int num_eq() const { return 3 * (cfg_.N + 1); }
  int num_ineq() const { return 8 * (cfg_.N + 1); }

  int x_offset(int k) const { return 12 * k; }
  int u_offset(int k) const { return 12 * k + 3; }
  int slack_offset(int k) const { return 12 * k + (k < cfg_.N ? 4 : 3); }

  PredictedTrajectory predict(const VehicleState& x0, const CurvatureTable& table,
                              const PredictorParams& params, const PredictedTrajectory* warm = nullptr) {
    params.validate();
    table.validate();
    if (x0.v < -1e-9 || x0.v > cfg_.v_max + 1e-9)
      throw InfeasibleError("llnlp: initial speed outside [0, v_max]");

    x0_ = Eigen::Vector3d(x0.s, std::clamp(x0.v, 0.0, cfg_.v_max), x0.a);
    table_ = &table;
    params_ = &params;

    Eigen::VectorXd init;
    NlpSolution warm_duals;
    const NlpSolution* warm_ptr = nullptr;
    if (warm && warm->primal.size() == num_vars()) {
      init = shift_primal(warm->primal);
      warm_duals.lambda = shift_block(warm->lambda, 3, 3 * (cfg_.N + 1));
      warm_duals.mu = shift_block(warm->mu, 8, 8 * (cfg_.N + 1));
      warm_duals.z_lb = shift_primal(warm->z_lb);
      warm_duals.z_ub = shift_primal(warm->z_ub);
      // re-pin the initial state
      init.segment<3>(0) = x0_;
      warm_ptr = &warm_duals;
    } else {
      init = cold_start();
    }

    NlpOptions opts;
    opts.tol = cfg_.tol;
    opts.max_iter = cfg_.max_iter;
    opts.hessian_reg = 1e-8;
    opts.step_bound = 1e4;
    opts.verbose = cfg_.verbose;
    NlpSolution sol = sqp_.solve(problem_, init, opts, warm_ptr);
    return extract(sol);
  }

 private:
  LlnlpConfig cfg_;
  DiscreteDynamics dyn_;
  NlpProblem problem_;
  SqpSolver sqp_;
  SpMat eq_jac_;

  // solve-time parameters
  Eigen::Vector3d x0_ = Eigen::Vector3d::Zero();
  const CurvatureTable* table_ = nullptr;
  const PredictorParams* params_ = nullptr;

  VehicleState state_at(const Eigen::VectorXd& z, int k) const {
    return {z[x_offset(k)], z[x_offset(k) + 1], z[x_offset(k) + 2]};
  }

  Eigen::VectorXd cold_start() const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(num_vars());
    for (int k = 0; k <= cfg_.N; ++k) {
      z[x_offset(k)] = x0_[0] + x0_[1] * cfg_.dt * k;
      z[x_offset(k) + 1] = x0_[1];
      z[x_offset(k) + 2] = k == 0 ? x0_[2] : 0.0;
    }
    for (int k = 0; k <= cfg_.N; ++k) {
      const Eigen::Matrix<double, 8, 1> h =
          eval_accel_constraints(state_at(z, k), *table_, params_->poly);
      for (int i = 0; i < 8; ++i) z[slack_offset(k) + i] = std::max(0.0, -h[i]);
    }
    return z;
  }

  Eigen::VectorXd shift_primal(const Eigen::VectorXd& prev) const {
    Eigen::VectorXd z = prev;
    const int N = cfg_.N;
    for (int k = 0; k + 1 < N; ++k) {
      z.segment<3>(x_offset(k)) = prev.segment<3>(x_offset(k + 1));
      z[u_offset(k)] = prev[u_offset(k + 1)];
      z.segment<8>(slack_offset(k)) = prev.segment<8>(slack_offset(k + 1));
    }
    // stage N-1 takes the terminal node, last input repeated
    z.segment<3>(x_offset(N - 1)) = prev.segment<3>(x_offset(N));
    z[u_offset(N - 1)] = prev[u_offset(N - 1)];
    z.segment<8>(slack_offset(N - 1)) = prev.segment<8>(slack_offset(N));
    // extrapolate the terminal node one step
    const Eigen::Vector3d xN = dyn_.step(prev.segment<3>(x_offset(N)), prev[u_offset(N - 1)]);
    z.segment<3>(x_offset(N)) = xN;
    z.segment<8>(slack_offset(N)) = prev.segment<8>(slack_offset(N));
    return z;
  }

  static Eigen::VectorXd shift_block(const Eigen::VectorXd& prev, int block, int total) {
    if (prev.size() != total) return Eigen::VectorXd();
    Eigen::VectorXd out = prev;
    for (int off = 0; off + 2 * block <= total; off += block)
      out.segment(off, block) = prev.segment(off + block, block);
    return out;
  }

  void build_problem() {
    const int n = num_vars();
    const int N = cfg_.N;

    problem_.num_vars = n;
    problem_.num_eq = num_eq();
    problem_.num_ineq = num_ineq();

    problem_.lb = Eigen::VectorXd::Constant(n, -kInf);
    problem_.ub = Eigen::VectorXd::Constant(n, kInf);
    for (int k = 0; k <= N; ++k) {
      problem_.lb[x_offset(k) + 1] = 0.0;  // v >= 0
      problem_.ub[x_offset(k) + 1] = cfg_.v_max;
      for (int i = 0; i < 8; ++i) problem_.lb[slack_offset(k) + i] = 0.0;
    }

    // constant equality Jacobian: x_0 rows then shooting rows
    std::vector<Triplet> jt;
    for (int i = 0; i < 3; ++i) jt.emplace_back(i, i, 1.0);
    for (int k = 0; k < N; ++k) {
      const int row = 3 + 3 * k;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
          if (dyn_.A(r, c) != 0.0) jt.emplace_back(row + r, x_offset(k) + c, -dyn_.A(r, c));
        jt.emplace_back(row + r, u_offset(k), -dyn_.B(r));
        jt.emplace_back(row + r, x_offset(k + 1) + r, 1.0);
      }
    }
    eq_jac_.resize(num_eq(), n);
    eq_jac_.setFromTriplets(jt.begin(), jt.end());

    problem_.objective = [this](const Eigen::VectorXd& z) {
      const int N_ = cfg_.N;
      double f = -z[x_offset(N_)];  // q_N = [-1 0 0]
      for (int k = 0; k < N_; ++k) {
        const double a = z[x_offset(k) + 2];
        const double u = z[u_offset(k)];
        f += params_->w_acc * a * a + params_->w_jerk * u * u;
      }
      for (int k = 0; k <= N_; ++k)
        for (int i = 0; i < 8; ++i) {
          const double s = z[slack_offset(k) + i];
          f += cfg_.alpha1 * s + cfg_.alpha2 * s * s;
        }
      return f;
    };

    problem_.objective_gradient = [this](const Eigen::VectorXd& z) {
      const int N_ = cfg_.N;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(z.size());
      grad[x_offset(N_)] = -1.0;
      for (int k = 0; k < N_; ++k) {
        grad[x_offset(k) + 2] = 2.0 * params_->w_acc * z[x_offset(k) + 2];
        grad[u_offset(k)] = 2.0 * params_->w_jerk * z[u_offset(k)];
      }
      for (int k = 0; k <= N_; ++k)
        for (int i = 0; i < 8; ++i)
          grad[slack_offset(k) + i] = cfg_.alpha1 + 2.0 * cfg_.alpha2 * z[slack_offset(k) + i];
      return grad;
    };

    problem_.eq_constraints = [this](const Eigen::VectorXd& z) {
      const int N_ = cfg_.N;
      Eigen::VectorXd g(num_eq());
      g.segment<3>(0) = z.segment<3>(0) - x0_;
      for (int k = 0; k < N_; ++k)
        g.segment<3>(3 + 3 * k) =
            z.segment<3>(x_offset(k + 1)) - dyn_.step(z.segment<3>(x_offset(k)), z[u_offset(k)]);
      return g;
    };

    problem_.eq_jacobian = [this](const Eigen::VectorXd&) { return eq_jac_; };

    problem_.ineq_constraints = [this](const Eigen::VectorXd& z) {
      const int N_ = cfg_.N;
      Eigen::VectorXd h(num_ineq());
      for (int k = 0; k <= N_; ++k) {
        const Eigen::Matrix<double, 8, 1> hk =
            eval_accel_constraints(state_at(z, k), *table_, params_->poly);
        for (int i = 0; i < 8; ++i) h[8 * k + i] = hk[i] + z[slack_offset(k) + i];
      }
      return h;
    };

    problem_.ineq_jacobian = [this](const Eigen::VectorXd& z) {
      const int N_ = cfg_.N;
      std::vector<Triplet> t;
      t.reserve(static_cast<std::size_t>(32 * (N_ + 1)));
      for (int k = 0; k <= N_; ++k) {
        const Eigen::Matrix<double, 8, 3> J =
            accel_constraint_jacobian(state_at(z, k), *table_, params_->poly);
        for (int i = 0; i < 8; ++i) {
          for (int c = 0; c < 3; ++c) t.emplace_back(8 * k + i, x_offset(k) + c, J(i, c));
          t.emplace_back(8 * k + i, slack_offset(k) + i, 1.0);
        }
      }
      SpMat jh(num_ineq(), num_vars());
      jh.setFromTriplets(t.begin(), t.end());
      return jh;
    };

    problem_.lagrangian_hessian = [this](const Eigen::VectorXd& z, const Eigen::VectorXd&,
                                         const Eigen::VectorXd& mu) {
      const int N_ = cfg_.N;
      std::vector<Triplet> t;
      t.reserve(static_cast<std::size_t>(16 * (N_ + 1)));
      for (int k = 0; k <= N_; ++k) {
        if (k < N_) {
          t.emplace_back(x_offset(k) + 2, x_offset(k) + 2, 2.0 * params_->w_acc);
          t.emplace_back(u_offset(k), u_offset(k), 2.0 * params_->w_jerk);
        }
        for (int i = 0; i < 8; ++i)
          t.emplace_back(slack_offset(k) + i, slack_offset(k) + i, 2.0 * cfg_.alpha2);

        // exact constraint curvature on the (s, v) block, clamped to PSD:
        // d2L = d2f - sum mu_i d2h_i
        Eigen::Matrix<double, 8, 1> muk = mu.segment<8>(8 * k);
        Eigen::Matrix2d Hsv = -accel_constraint_weighted_hessian(state_at(z, k), *table_, params_->poly, muk);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Hsv);
        Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0);
        Hsv = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c)
            if (Hsv(r, c) != 0.0) t.emplace_back(x_offset(k) + r, x_offset(k) + c, Hsv(r, c));
      }
      SpMat hess(num_vars(), num_vars());
      hess.setFromTriplets(t.begin(), t.end());
      return hess;
    };
  }

  PredictedTrajectory extract(const NlpSolution& sol) const {
    const int N = cfg_.N;
    PredictedTrajectory out;
    out.dt = cfg_.dt;
    out.primal = sol.x;
    out.lambda = sol.lambda;
    out.mu = sol.mu;
    out.z_lb = sol.z_lb;
    out.z_ub = sol.z_ub;
    out.converged = sol.status == NlpStatus::converged;
    out.status = sol.status;
    out.iterations = sol.iterations;
    out.solve_time_s = sol.solve_time_s;
    out.kkt_stationarity = sol.stationarity_residual;
    out.kkt_eq = sol.eq_residual;
    out.kkt_ineq = sol.ineq_residual;
    out.kkt_comp = sol.comp_residual;

    out.states.resize(N + 1);
    out.inputs.resize(N);
    out.slacks.resize(N + 1);
    out.active_rows.resize(N + 1);
    for (int k = 0; k <= N; ++k) {
      out.states[k] = state_at(sol.x, k);
      out.slacks[k] = sol.x.segment<8>(slack_offset(k));
      if (k < N) out.inputs[k] = sol.x[u_offset(k)];
    }
    double dyn_res = 0.0;
    for (int k = 0; k < N; ++k) {
      const Eigen::Vector3d xk(out.states[k].s, out.states[k].v, out.states[k].a);
      const Eigen::Vector3d xn(out.states[k + 1].s, out.states[k + 1].v, out.states[k + 1].a);
      dyn_res = std::max(dyn_res, (xn - dyn_.step(xk, out.inputs[k])).lpNorm<Eigen::Infinity>());
    }
    out.dynamics_residual = dyn_res;

    for (int k = 0; k <= N; ++k) {
      const Eigen::Matrix<double, 8, 1> h = eval_accel_constraints(out.states[k], *table_, params_->poly);
      for (int i = 0; i < 8; ++i)
        if (h[i] + out.slacks[k][i] < 1e-6) out.active_rows[k].push_back(i);
    }
    return out;
  }
};

}  // namespace racepred
