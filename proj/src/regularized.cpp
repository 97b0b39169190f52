#include "sks/regularized.hpp"

#include <chrono>
#include <cmath>

#include "sks/linalg.hpp"

namespace sks {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> resolve_tau(const RegOptions& opts, int K) {
  if (!opts.tau_k.empty()) {
    if (static_cast<int>(opts.tau_k.size()) != K)
      throw ConfigError("regularized: tau_k must have length K");
    return opts.tau_k;
  }
  return std::vector<double>(static_cast<size_t>(K), opts.tau);
}

// Model with C~ = [C;0], D~ = [D;I] and a caller-supplied lower-right block
// of the augmented noise covariance.
LdsModel augment_model(const LdsModel& model,
                       const std::vector<Eigen::MatrixXd>& u_noise_blocks) {
  const int n = model.n, m = model.m, p = model.p;
  LdsModel aug;
  aug.n = n;
  aug.m = m;
  aug.p = p + m;
  aug.K = model.K;
  aug.A = model.A;
  aug.B = model.B;
  aug.Q = model.Q;

  auto stack_cd = [&](const Eigen::MatrixXd& C, const Eigen::MatrixXd& D) {
    Eigen::MatrixXd Ct = Eigen::MatrixXd::Zero(p + m, n);
    Ct.topRows(p) = C;
    Eigen::MatrixXd Dt = Eigen::MatrixXd::Zero(p + m, m);
    Dt.topRows(p) = D;
    Dt.bottomRows(m).setIdentity();
    return std::make_pair(Ct, Dt);
  };

  if (model.C.broadcast() && model.D.broadcast()) {
    auto [Ct, Dt] = stack_cd(model.C.at(0), model.D.at(0));
    aug.C = MatSeq(Ct);
    aug.D = MatSeq(Dt);
  } else {
    std::vector<Eigen::MatrixXd> Cs, Ds;
    for (int k = 0; k < model.K; ++k) {
      auto [Ct, Dt] = stack_cd(model.C.at(k), model.D.at(k));
      Cs.push_back(Ct);
      Ds.push_back(Dt);
    }
    aug.C = MatSeq(std::move(Cs));
    aug.D = MatSeq(std::move(Ds));
  }

  auto stack_r = [&](const Eigen::MatrixXd& R, const Eigen::MatrixXd& block) {
    Eigen::MatrixXd Rt = Eigen::MatrixXd::Zero(p + m, p + m);
    Rt.topLeftCorner(p, p) = R;
    Rt.bottomRightCorner(m, m) = block;
    return Rt;
  };
  if (u_noise_blocks.size() == 1 && model.R.broadcast()) {
    aug.R = MatSeq(stack_r(model.R.at(0), u_noise_blocks[0]));
  } else {
    std::vector<Eigen::MatrixXd> Rs;
    for (int k = 0; k < model.K; ++k) {
      const Eigen::MatrixXd& block =
          u_noise_blocks.size() == 1 ? u_noise_blocks[0]
                                     : u_noise_blocks.at(static_cast<size_t>(k));
      Rs.push_back(stack_r(model.R.at(k), block));
    }
    aug.R = MatSeq(std::move(Rs));
  }
  return aug;
}

double l1_norm_sum(const std::vector<Eigen::VectorXd>& u,
                   const std::vector<double>& tau) {
  double s = 0.0;
  for (size_t k = 0; k < u.size(); ++k) s += tau[k] * u[k].lpNorm<1>();
  return s;
}

double group_norm_sum(const std::vector<Eigen::VectorXd>& u, double tau) {
  if (u.empty()) return 0.0;
  const int m = static_cast<int>(u[0].size());
  double s = 0.0;
  for (int i = 0; i < m; ++i) {
    double sq = 0.0;
    for (const auto& uk : u) sq += uk(i) * uk(i);
    s += std::sqrt(sq);
  }
  return tau * s;
}

double max_inf_change(const std::vector<Eigen::VectorXd>& a,
                      const std::vector<Eigen::VectorXd>& b) {
  double d = 0.0;
  for (size_t k = 0; k < a.size(); ++k)
    d = std::max(d, (a[k] - b[k]).lpNorm<Eigen::Infinity>());
  return d;
}

enum class ShrinkKind { EntryWise, GroupRows };

SolverReport admm_l1_impl(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const RegOptions& opts, ShrinkKind kind) {
  const auto t0 = Clock::now();
  model.validate();
  const int m = model.m, K = model.K;
  if (opts.c <= 0) throw ConfigError("l1_rks: need c > 0");
  const std::vector<double> tau = resolve_tau(opts, K);
  for (double t : tau)
    if (t < 0) throw ConfigError("l1_rks: need tau >= 0");

  const double c = opts.c;
  LdsModel aug = augment_model(
      model, {Eigen::MatrixXd((1.0 / c) * Eigen::MatrixXd::Identity(m, m))});

  std::vector<Eigen::VectorXd> t_var(K, Eigen::VectorXd::Zero(m));
  std::vector<Eigen::VectorXd> lambda(K, Eigen::VectorXd::Zero(m));
  std::vector<Eigen::VectorXd> y_aug(K, Eigen::VectorXd::Zero(model.p + m));
  std::vector<Eigen::VectorXd> u_prev;

  RksOptions inner_opts;
  inner_opts.P0 = opts.P0;

  SolverReport report;
  SmoothingResult sr;
  for (int r = 0; r < opts.r_max; ++r) {
    for (int k = 0; k < K; ++k) {
      y_aug[k].head(model.p) = y[k];
      y_aug[k].tail(m) = t_var[k] - lambda[k] / c;
    }
    sr = rks_smooth(aug, y_aug, inner_opts);
    for (const auto& uk : sr.u)
      if (!uk.allFinite()) throw NonFinite("l1_rks: non-finite iterate");

    double primal_sq = 0.0, dual_sq = 0.0;
    if (kind == ShrinkKind::EntryWise) {
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd v = sr.u[k] + lambda[k] / c;
        const Eigen::VectorXd t_new = soft_threshold(v, tau[k] / c);
        dual_sq += c * c * (t_new - t_var[k]).squaredNorm();
        t_var[k] = t_new;
        lambda[k] += c * (sr.u[k] - t_var[k]);
        primal_sq += (sr.u[k] - t_var[k]).squaredNorm();
      }
    } else {
      // Row-wise shrink across time: t(i,:) = v/||v|| * S_{tau/c}(||v||).
      std::vector<Eigen::VectorXd> t_new(K, Eigen::VectorXd::Zero(m));
      for (int i = 0; i < m; ++i) {
        Eigen::VectorXd v(K);
        for (int k = 0; k < K; ++k) v(k) = sr.u[k](i) + lambda[k](i) / c;
        const double nv = v.norm();
        const double scaled = soft_threshold(nv, tau[0] / c);
        const double scale = nv > 0 ? scaled / nv : 0.0;
        for (int k = 0; k < K; ++k) t_new[k](i) = scale * v(k);
      }
      for (int k = 0; k < K; ++k) {
        dual_sq += c * c * (t_new[k] - t_var[k]).squaredNorm();
        t_var[k] = t_new[k];
        lambda[k] += c * (sr.u[k] - t_var[k]);
        primal_sq += (sr.u[k] - t_var[k]).squaredNorm();
      }
    }
    report.primal_residual.push_back(std::sqrt(primal_sq));
    report.dual_residual.push_back(std::sqrt(dual_sq));

    // Objective of the problem the fixed point solves: with the step-6
    // threshold tau/c the ADMM stationary point satisfies the optimality
    // condition of quadratic + 2*tau*penalty.
    const double quad = map_quadratic_cost(model, y, sr.x, sr.u, opts.P0);
    const double pen = kind == ShrinkKind::EntryWise
                           ? l1_norm_sum(sr.u, tau)
                           : group_norm_sum(sr.u, tau[0]);
    report.objective_trace.push_back(quad + 2.0 * pen);

    report.iterations = r + 1;
    if (!u_prev.empty()) {
      const double delta = max_inf_change(sr.u, u_prev);
      report.param_delta.push_back(delta);
      if (opts.early_stop_tol > 0 && delta < opts.early_stop_tol) {
        u_prev = sr.u;
        break;
      }
    }
    u_prev = sr.u;
  }
  report.estimate = std::move(sr);
  report.runtime_s = seconds_since(t0);
  return report;
}

}  // namespace

double soft_threshold(double a, double b) {
  const double mag = std::abs(a) - b;
  if (mag <= 0) return 0.0;
  return a > 0 ? mag : -mag;
}

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& a, double b) {
  Eigen::VectorXd out(a.size());
  for (int i = 0; i < a.size(); ++i) out(i) = soft_threshold(a(i), b);
  return out;
}

Eigen::VectorXd weight_matrix(const Eigen::VectorXd& u_prev, double l,
                              double epsilon_w) {
  if (!(l > 0 && l < 2)) throw ConfigError("weight_matrix: need 0 < l < 2");
  Eigen::VectorXd w(u_prev.size());
  for (int i = 0; i < u_prev.size(); ++i)
    w(i) = std::pow(std::max(std::abs(u_prev(i)), epsilon_w), 2.0 - l);
  return w;
}

double map_quadratic_cost(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const std::vector<Eigen::VectorXd>& x,
                          const std::vector<Eigen::VectorXd>& u,
                          const Eigen::MatrixXd& P0) {
  const int n = model.n, m = model.m, K = model.K;
  double cost = 0.0;
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd r = y[k] - model.C.at(k) * x[k] - model.D.at(k) * u[k];
    Eigen::LLT<Eigen::MatrixXd> llt(model.R.at(k));
    cost += r.dot(llt.solve(r));
  }
  for (int k = 0; k + 1 < K; ++k) {
    const Eigen::VectorXd r =
        x[k + 1] - model.A.at(k) * x[k] - model.B.at(k) * u[k];
    Eigen::LLT<Eigen::MatrixXd> llt(model.Q.at(k));
    cost += r.dot(llt.solve(r));
  }
  Eigen::MatrixXd P0r = P0;
  if (P0r.size() == 0) P0r = Eigen::MatrixXd::Identity(n + m, n + m);
  Eigen::MatrixXd At(n, n + m);
  At << model.A.at(0), model.B.at(0);
  const Eigen::MatrixXd P1 = symmetrized(At * P0r * At.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(P1);
  cost += x[0].dot(llt.solve(x[0]));
  return cost;
}

SolverReport l1_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const RegOptions& opts) {
  return admm_l1_impl(model, y, opts, ShrinkKind::EntryWise);
}

SolverReport group_l1_rks(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const RegOptions& opts) {
  if (!opts.tau_k.empty())
    throw ConfigError("group_l1_rks: single scalar tau only");
  return admm_l1_impl(model, y, opts, ShrinkKind::GroupRows);
}

SolverReport reweighted_l2_rks(const LdsModel& model,
                               const std::vector<Eigen::VectorXd>& y,
                               const RegOptions& opts) {
  const auto t0 = Clock::now();
  model.validate();
  if (!(opts.l > 0 && opts.l < 2))
    throw ConfigError("reweighted_l2_rks: need 0 < l < 2");
  const int m = model.m, K = model.K;
  const std::vector<double> tau = resolve_tau(opts, K);
  for (double t : tau)
    if (!(t > 0)) throw ConfigError("reweighted_l2_rks: need tau > 0");

  std::vector<Eigen::VectorXd> y_aug(K, Eigen::VectorXd::Zero(model.p + m));
  for (int k = 0; k < K; ++k) y_aug[k].head(model.p) = y[k];

  std::vector<Eigen::VectorXd> u_cur(K, Eigen::VectorXd::Ones(m));
  RksOptions inner_opts;
  inner_opts.P0 = opts.P0;

  SolverReport report;
  SmoothingResult sr;
  for (int r = 0; r < opts.r_max; ++r) {
    std::vector<Eigen::MatrixXd> blocks;
    for (int k = 0; k < K; ++k) {
      const Eigen::VectorXd w = weight_matrix(u_cur[k], opts.l, opts.epsilon_w);
      blocks.push_back((2.0 / (tau[k] * opts.l)) * w.asDiagonal());
    }
    LdsModel aug = augment_model(model, blocks);
    sr = rks_smooth(aug, y_aug, inner_opts);
    for (const auto& uk : sr.u)
      if (!uk.allFinite()) throw NonFinite("reweighted_l2_rks: non-finite iterate");

    double pen = 0.0;
    for (int k = 0; k < K; ++k)
      pen += tau[k] * sr.u[k].array().abs().pow(opts.l).sum();
    report.objective_trace.push_back(
        map_quadratic_cost(model, y, sr.x, sr.u, opts.P0) + pen);

    const double delta = max_inf_change(sr.u, u_cur);
    report.param_delta.push_back(delta);
    u_cur = sr.u;
    report.iterations = r + 1;
    if (opts.early_stop_tol > 0 && delta < opts.early_stop_tol) break;
  }
  report.estimate = std::move(sr);
  report.runtime_s = seconds_since(t0);
  return report;
}

SolverReport ridge_rks(const LdsModel& model,
                       const std::vector<Eigen::VectorXd>& y,
                       const RegOptions& opts) {
  const auto t0 = Clock::now();
  model.validate();
  if (!(opts.tau > 0)) throw ConfigError("ridge_rks: need tau > 0");
  const int m = model.m, K = model.K;
  LdsModel aug = augment_model(
      model,
      {Eigen::MatrixXd((1.0 / opts.tau) * Eigen::MatrixXd::Identity(m, m))});
  std::vector<Eigen::VectorXd> y_aug(K, Eigen::VectorXd::Zero(model.p + m));
  for (int k = 0; k < K; ++k) y_aug[k].head(model.p) = y[k];
  RksOptions inner_opts;
  inner_opts.P0 = opts.P0;

  SolverReport report;
  report.estimate = rks_smooth(aug, y_aug, inner_opts);
  report.iterations = 1;
  double pen = 0.0;
  for (const auto& uk : report.estimate.u) pen += opts.tau * uk.squaredNorm();
  report.objective_trace.push_back(
      map_quadratic_cost(model, y, report.estimate.x, report.estimate.u,
                         opts.P0) +
      pen);
  report.runtime_s = seconds_since(t0);
  return report;
}

}  // namespace sks
