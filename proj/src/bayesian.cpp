#include "sks/bayesian.hpp"

#include <chrono>
#include <cmath>

#include "recursion_common.hpp"
#include "sks/linalg.hpp"

namespace sks {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kLog2Pi = 1.8378770664093453;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_measurements(const LdsModel& model,
                        const std::vector<Eigen::VectorXd>& y) {
  if (static_cast<int>(y.size()) != model.K)
    throw DimensionMismatch("bayesian: measurement sequence must have length K");
  for (const auto& yk : y)
    if (yk.size() != model.p)
      throw DimensionMismatch("bayesian: bad measurement length");
}

struct EstepOut {
  std::vector<Eigen::VectorXd> xi_s, xi_f;
  std::vector<Eigen::MatrixXd> P_s, P_f;
  std::vector<Eigen::MatrixXd> lag_one;
  double loglik = 0.0;
  bool regularized = false;
};

// Kalman filter / RTS smoother on the augmented model, exploiting the
// guaranteed structure: the prediction covariance is blkdiag(P^x_pred,
// diag(gamma_k)) and the transition has zero rows below the state block.
template <typename GammaAt>
EstepOut sbl_estep(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                   GammaAt gamma_at, const Eigen::MatrixXd& P0,
                   bool want_lag_one, double cov_blowup) {
  const int n = model.n, m = model.m, p = model.p, K = model.K;
  const int d = n + m;

  EstepOut out;
  out.xi_f.resize(K);
  out.P_f.resize(K);
  std::vector<Eigen::MatrixXd> Px_pred(K);

  for (int k = 0; k < K; ++k) {
    const int kp = k == 0 ? 0 : k - 1;
    Eigen::MatrixXd At(n, d);
    At << model.A.at(kp), model.B.at(kp);
    Eigen::VectorXd x_pred;
    if (k == 0) {
      x_pred = Eigen::VectorXd::Zero(n);
      Px_pred[k] = detail::sym(At * P0 * At.transpose());  // Q_0 = 0
    } else {
      x_pred = At * out.xi_f[k - 1];
      Px_pred[k] =
          detail::sym(At * out.P_f[k - 1] * At.transpose() + model.Q.at(kp));
    }
    const Eigen::VectorXd& gamma = gamma_at(k);

    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd& D = model.D.at(k);
    const Eigen::MatrixXd& R = model.R.at(k);

    // P_pred C_bar^T with P_pred = blkdiag(Px_pred, diag(gamma)).
    Eigen::MatrixXd PCt(d, p);
    PCt.topRows(n) = Px_pred[k] * C.transpose();
    PCt.bottomRows(m) = gamma.asDiagonal() * D.transpose();
    const Eigen::MatrixXd S =
        detail::sym(R + C * PCt.topRows(n) + D * PCt.bottomRows(m));
    Eigen::LLT<Eigen::MatrixXd> s_llt(S);
    if (s_llt.info() != Eigen::Success)
      throw CovarianceBlowup("sbl: innovation covariance not PD");

    const Eigen::VectorXd innov = y[k] - C * x_pred;
    const Eigen::MatrixXd G = s_llt.solve(PCt.transpose()).transpose();  // d x p

    out.xi_f[k].resize(d);
    out.xi_f[k].head(n) = x_pred;
    out.xi_f[k].tail(m).setZero();
    out.xi_f[k] += G * innov;

    Eigen::MatrixXd Pf = -G * PCt.transpose();
    Pf.topLeftCorner(n, n) += Px_pred[k];
    Pf.diagonal().tail(m) += gamma;
    out.P_f[k] = detail::sym(Pf);

    const double logdetS =
        2.0 * s_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.loglik += -0.5 * (innov.dot(s_llt.solve(innov)) + logdetS + p * kLog2Pi);

    if (!out.xi_f[k].allFinite() || !out.P_f[k].allFinite())
      throw NonFinite("sbl: non-finite filter state");
    if (out.P_f[k].cwiseAbs().maxCoeff() > cov_blowup)
      throw CovarianceBlowup("sbl: filtered covariance exceeded blowup bound");
  }

  out.xi_s.resize(K);
  out.P_s.resize(K);
  out.xi_s[K - 1] = out.xi_f[K - 1];
  out.P_s[K - 1] = out.P_f[K - 1];
  if (want_lag_one) out.lag_one.resize(K - 1);
  for (int k = K - 2; k >= 0; --k) {
    Eigen::MatrixXd At(n, d);
    At << model.A.at(k), model.B.at(k);
    detail::PredSolver solver(Px_pred[k + 1]);
    out.regularized |= solver.regularized;
    // Smoother gain [K1 | 0]: only the state columns of A_bar are nonzero.
    const Eigen::MatrixXd PfAt = out.P_f[k] * At.transpose();  // d x n
    const Eigen::MatrixXd K1 = solver.ldlt.solve(PfAt.transpose()).transpose();
    out.xi_s[k] =
        out.xi_f[k] + K1 * (out.xi_s[k + 1].head(n) - At * out.xi_f[k]);
    const Eigen::MatrixXd d11 =
        out.P_s[k + 1].topLeftCorner(n, n) - Px_pred[k + 1];
    out.P_s[k] = detail::sym(out.P_f[k] + K1 * d11 * K1.transpose());
    if (want_lag_one)
      out.lag_one[k] = out.P_s[k + 1].leftCols(n) * K1.transpose();
  }
  return out;
}

SmoothingResult to_result(const LdsModel& model, EstepOut&& e) {
  const int n = model.n, m = model.m, K = model.K;
  SmoothingResult res;
  for (int k = 0; k < K; ++k) {
    res.x.push_back(e.xi_s[k].head(n));
    res.u.push_back(e.xi_s[k].tail(m));
    res.P_xi.push_back(e.P_s[k]);
    res.P_x.push_back(e.P_s[k].topLeftCorner(n, n));
    res.P_u.push_back(e.P_s[k].bottomRightCorner(m, m));
  }
  res.lag_one = std::move(e.lag_one);
  res.prediction_regularized = e.regularized;
  return res;
}

SolverReport sbl_impl(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                      SblOptions opts) {
  const auto t0 = Clock::now();
  model.validate();
  check_measurements(model, y);
  const int m = model.m, K = model.K;
  if (opts.r_max < 1) throw ConfigError("sbl_rks: need r_max >= 1");

  Eigen::MatrixXd P0 = opts.P0;
  if (P0.size() == 0)
    P0 = Eigen::MatrixXd::Identity(model.n + m, model.n + m);

  const int ng = opts.joint ? 1 : K;
  std::vector<Eigen::VectorXd> gammas(ng, Eigen::VectorXd::Ones(m));
  if (!opts.gamma0.empty()) {
    if (static_cast<int>(opts.gamma0.size()) != ng)
      throw ConfigError("sbl_rks: gamma0 must have one entry per step (or one shared)");
    gammas = opts.gamma0;
    for (auto& g : gammas)
      g = g.cwiseMax(opts.gamma_floor);
  }
  auto gamma_at = [&](int k) -> const Eigen::VectorXd& {
    return gammas[opts.joint ? 0 : k];
  };

  SolverReport report;
  EstepOut e;
  for (int r = 0; r < opts.r_max; ++r) {
    e = sbl_estep(model, y, gamma_at, P0, opts.want_lag_one, opts.cov_blowup);
    report.objective_trace.push_back(e.loglik);
    report.iterations = r + 1;
    if (opts.freeze_gamma) break;

    double delta = 0.0;
    if (opts.joint) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
      for (int k = 0; k < K; ++k)
        acc += sbl_mstep(e.xi_s[k].tail(m),
                         e.P_s[k].bottomRightCorner(m, m), 0.0);
      Eigen::VectorXd g_new = (acc / K).cwiseMax(opts.gamma_floor);
      delta = ((g_new - gammas[0]).cwiseAbs().array() /
               gammas[0].array()).maxCoeff();
      gammas[0] = g_new;
    } else {
      for (int k = 0; k < K; ++k) {
        Eigen::VectorXd g_new =
            sbl_mstep(e.xi_s[k].tail(m), e.P_s[k].bottomRightCorner(m, m),
                      opts.gamma_floor);
        delta = std::max(
            delta,
            ((g_new - gammas[k]).cwiseAbs().array() / gammas[k].array())
                .maxCoeff());
        gammas[k] = g_new;
      }
    }
    report.param_delta.push_back(delta);
    if (delta < opts.eps_thres) break;
  }

  report.estimate = to_result(model, std::move(e));
  report.runtime_s = seconds_since(t0);
  return report;
}

}  // namespace

AugmentedModel make_augmented(const LdsModel& model, int k,
                              const Eigen::VectorXd& gamma_next) {
  const int n = model.n, m = model.m;
  AugmentedModel am;
  am.A_bar = Eigen::MatrixXd::Zero(n + m, n + m);
  am.A_bar.topLeftCorner(n, n) = model.A.at(k);
  am.A_bar.topRightCorner(n, m) = model.B.at(k);
  am.C_bar.resize(model.p, n + m);
  am.C_bar << model.C.at(k), model.D.at(k);
  am.Q_bar = Eigen::MatrixXd::Zero(n + m, n + m);
  am.Q_bar.topLeftCorner(n, n) = model.Q.at(k);
  am.Q_bar.diagonal().tail(m) = gamma_next;
  return am;
}

Eigen::VectorXd sbl_mstep(const Eigen::VectorXd& u_hat,
                          const Eigen::MatrixXd& P_u, double gamma_floor) {
  Eigen::VectorXd g =
      u_hat.array().square() + P_u.diagonal().array();
  return gamma_floor > 0 ? g.cwiseMax(gamma_floor).eval() : g;
}

SolverReport sbl_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                     const SblOptions& opts) {
  return sbl_impl(model, y, opts);
}

SolverReport msbl_rks(const LdsModel& model,
                      const std::vector<Eigen::VectorXd>& y,
                      const SblOptions& opts) {
  SblOptions o = opts;
  o.joint = true;
  return sbl_impl(model, y, o);
}

SolverReport sbl_rks_state_meas(const LdsModel& model,
                                const std::vector<Eigen::VectorXd>& y,
                                const SblOptions& opts) {
  const auto t0 = Clock::now();
  model.validate();
  check_measurements(model, y);
  const int n = model.n, m = model.m, p = model.p, K = model.K;
  const int d = n + m;
  if (K < 2) throw DimensionMismatch("sbl_rks_state_meas: need K >= 2");

  Eigen::MatrixXd P0x = Eigen::MatrixXd::Identity(n, n);
  if (opts.P0.size() != 0) P0x = opts.P0.topLeftCorner(n, n);

  const int ng = opts.joint ? 1 : K - 1;
  std::vector<Eigen::VectorXd> gammas(ng, Eigen::VectorXd::Ones(m));
  if (!opts.gamma0.empty()) {
    if (static_cast<int>(opts.gamma0.size()) != ng)
      throw ConfigError("sbl_rks_state_meas: bad gamma0 length");
    gammas = opts.gamma0;
    for (auto& g : gammas) g = g.cwiseMax(opts.gamma_floor);
  }
  auto gamma_at = [&](int k) -> const Eigen::VectorXd& {
    return gammas[opts.joint ? 0 : k];
  };

  SolverReport report;
  std::vector<Eigen::VectorXd> xi_f(K), xi_s;
  std::vector<Eigen::MatrixXd> P_f(K), P_s, P_star(K);

  for (int r = 0; r < opts.r_max; ++r) {
    double loglik = 0.0;
    for (int k = 0; k < K; ++k) {
      const Eigen::MatrixXd& C = model.C.at(k);
      const Eigen::MatrixXd& R = model.R.at(k);
      if (k == 0) {
        const Eigen::MatrixXd& A0 = model.A.at(0);
        const Eigen::MatrixXd Ps0 = detail::sym(A0 * P0x * A0.transpose());
        const Eigen::MatrixXd CP = C * Ps0;
        const Eigen::MatrixXd S = detail::sym(R + CP * C.transpose());
        Eigen::LLT<Eigen::MatrixXd> s_llt(S);
        if (s_llt.info() != Eigen::Success)
          throw CovarianceBlowup("sbl_rks_state_meas: innovation cov not PD");
        const Eigen::MatrixXd L = s_llt.solve(CP).transpose();
        const Eigen::MatrixXd ImLC = Eigen::MatrixXd::Identity(n, n) - L * C;
        xi_f[0] = Eigen::VectorXd::Zero(d);
        xi_f[0].head(n) = L * y[0];
        P_f[0] = Eigen::MatrixXd::Zero(d, d);
        P_f[0].topLeftCorner(n, n) = detail::sym(
            ImLC * Ps0 * ImLC.transpose() + L * R * L.transpose());
        P_star[0] = Ps0;
        const double logdetS =
            2.0 *
            s_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        loglik += -0.5 * (y[0].dot(s_llt.solve(y[0])) + logdetS + p * kLog2Pi);
        continue;
      }

      const Eigen::MatrixXd& A = model.A.at(k - 1);
      const Eigen::MatrixXd& B = model.B.at(k - 1);
      const Eigen::VectorXd& gamma = gamma_at(k - 1);
      const Eigen::MatrixXd Px_prev = P_f[k - 1].topLeftCorner(n, n);
      const Eigen::MatrixXd Ps =
          detail::sym(A * Px_prev * A.transpose() + model.Q.at(k - 1));
      P_star[k] = Ps;
      Eigen::LDLT<Eigen::MatrixXd> ps_ldlt(Ps);
      if (ps_ldlt.info() != Eigen::Success)
        throw SingularInputGram("sbl_rks_state_meas: P* not PD");

      // Input gain with the prior precision folded in.
      const Eigen::MatrixXd PsInvB = ps_ldlt.solve(B);
      Eigen::MatrixXd gram = B.transpose() * PsInvB;
      gram.diagonal() += gamma.cwiseInverse();
      Eigen::LLT<Eigen::MatrixXd> gram_llt(gram);
      if (gram_llt.info() != Eigen::Success)
        throw SingularInputGram("sbl_rks_state_meas: input gram singular");
      const Eigen::MatrixXd J = gram_llt.solve(PsInvB.transpose());  // m x n

      const Eigen::MatrixXd CP = C * Ps;
      const Eigen::MatrixXd S = detail::sym(R + CP * C.transpose());
      Eigen::LLT<Eigen::MatrixXd> s_llt(S);
      if (s_llt.info() != Eigen::Success)
        throw CovarianceBlowup("sbl_rks_state_meas: innovation cov not PD");
      const Eigen::MatrixXd L = s_llt.solve(CP).transpose();
      const Eigen::MatrixXd ImLC = Eigen::MatrixXd::Identity(n, n) - L * C;
      const Eigen::MatrixXd SB = ImLC * B;
      const Eigen::MatrixXd F =
          Eigen::PartialPivLU<Eigen::MatrixXd>(
              Eigen::MatrixXd::Identity(n, n) - SB * J)
              .solve(L);
      const Eigen::MatrixXd M =
          Eigen::PartialPivLU<Eigen::MatrixXd>(
              Eigen::MatrixXd::Identity(m, m) - J * SB)
              .solve(J * L);

      const Eigen::VectorXd x_pred_mean = A * xi_f[k - 1].head(n);
      const Eigen::VectorXd innov = y[k] - C * x_pred_mean;
      const Eigen::MatrixXd ImFC = Eigen::MatrixXd::Identity(n, n) - F * C;
      xi_f[k].resize(d);
      xi_f[k].head(n) = x_pred_mean + F * innov;
      xi_f[k].tail(m) = M * innov;

      Eigen::MatrixXd Z(d, d);
      Z.topLeftCorner(n, n) = ImFC * A;
      Z.topRightCorner(n, m) = ImFC * B;
      Z.bottomLeftCorner(m, n) = -M * C * A;
      Z.bottomRightCorner(m, m) =
          Eigen::MatrixXd::Identity(m, m) - M * C * B;
      Eigen::MatrixXd N(d, n + p);
      N.topLeftCorner(n, n) = ImFC;
      N.topRightCorner(n, p) = -F;
      N.bottomLeftCorner(m, n) = -M * C;
      N.bottomRightCorner(m, p) = -M;

      Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(d, d);
      mid.topLeftCorner(n, n) = Px_prev;
      mid.diagonal().tail(m) = gamma;
      Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(n + p, n + p);
      noise.topLeftCorner(n, n) = model.Q.at(k - 1);
      noise.bottomRightCorner(p, p) = R;
      P_f[k] = detail::sym(Z * mid * Z.transpose() +
                           N * noise * N.transpose());
      if (!xi_f[k].allFinite() || !P_f[k].allFinite())
        throw NonFinite("sbl_rks_state_meas: non-finite filter state");
      if (P_f[k].cwiseAbs().maxCoeff() > opts.cov_blowup)
        throw CovarianceBlowup("sbl_rks_state_meas: covariance blowup");

      // Innovation likelihood with the prior-inflated prediction.
      const Eigen::MatrixXd BgB =
          B * gamma.asDiagonal() * B.transpose();
      const Eigen::MatrixXd Sfull =
          detail::sym(R + C * (Ps + BgB) * C.transpose());
      Eigen::LLT<Eigen::MatrixXd> sf_llt(Sfull);
      if (sf_llt.info() != Eigen::Success)
        throw CovarianceBlowup("sbl_rks_state_meas: likelihood cov not PD");
      const double logdetS =
          2.0 * sf_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      loglik +=
          -0.5 * (innov.dot(sf_llt.solve(innov)) + logdetS + p * kLog2Pi);
    }

    bool regularized = false;
    detail::state_only_backward(model, xi_f, P_f, P_star, xi_s, P_s,
                                opts.want_lag_one ? &report.estimate.lag_one
                                                  : nullptr,
                                regularized);
    report.estimate.prediction_regularized |= regularized;
    report.objective_trace.push_back(loglik);
    report.iterations = r + 1;
    if (opts.freeze_gamma) break;

    double delta = 0.0;
    if (opts.joint) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
      for (int k = 0; k + 1 < K; ++k)
        acc += sbl_mstep(xi_s[k + 1].tail(m),
                         P_s[k + 1].bottomRightCorner(m, m), 0.0);
      Eigen::VectorXd g_new = (acc / (K - 1)).cwiseMax(opts.gamma_floor);
      delta =
          ((g_new - gammas[0]).cwiseAbs().array() / gammas[0].array()).maxCoeff();
      gammas[0] = g_new;
    } else {
      for (int k = 0; k + 1 < K; ++k) {
        Eigen::VectorXd g_new =
            sbl_mstep(xi_s[k + 1].tail(m),
                      P_s[k + 1].bottomRightCorner(m, m), opts.gamma_floor);
        delta = std::max(
            delta, ((g_new - gammas[k]).cwiseAbs().array() / gammas[k].array())
                       .maxCoeff());
        gammas[k] = g_new;
      }
    }
    report.param_delta.push_back(delta);
    if (delta < opts.eps_thres) break;
  }

  SmoothingResult& res = report.estimate;
  res.x.clear();
  res.u.clear();
  res.P_x.clear();
  res.P_u.clear();
  res.P_xi.clear();
  for (int k = 0; k < K; ++k) {
    res.x.push_back(xi_s[k].head(n));
    res.P_x.push_back(P_s[k].topLeftCorner(n, n));
    res.P_xi.push_back(P_s[k]);
    if (k > 0) {
      res.u.push_back(xi_s[k].tail(m));
      res.P_u.push_back(P_s[k].bottomRightCorner(m, m));
    }
  }
  report.runtime_s = seconds_since(t0);
  return report;
}

VbState vb_init(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                bool joint, bool drop_terminal_coupling) {
  model.validate();
  check_measurements(model, y);
  VbState st;
  st.joint = joint;
  st.drop_terminal_coupling = drop_terminal_coupling;
  st.y = y;
  const int K = model.K;
  st.mean_x.assign(K, Eigen::VectorXd::Zero(model.n));
  st.mean_u.assign(K, Eigen::VectorXd::Zero(model.m));
  st.P_x.assign(K, Eigen::MatrixXd::Identity(model.n, model.n));
  st.P_u.assign(K, Eigen::MatrixXd::Identity(model.m, model.m));
  st.beta.assign(joint ? 1 : K, Eigen::VectorXd::Ones(model.m));
  return st;
}

void vb_update_x(int k, VbState& st, const LdsModel& model) {
  const int K = model.K;
  const Eigen::MatrixXd& C = model.C.at(k);
  const Eigen::MatrixXd& D = model.D.at(k);
  const Eigen::MatrixXd Rinv = spd_inverse(model.R.at(k));
  const Eigen::MatrixXd RinvC = Rinv * C;
  const Eigen::MatrixXd Qprev_inv = spd_inverse(model.Q.at(k == 0 ? 0 : k - 1));
  const bool terminal = (k == K - 1);
  const bool use_term = !(terminal && st.drop_terminal_coupling);

  Eigen::MatrixXd prec = C.transpose() * RinvC + Qprev_inv;
  Eigen::MatrixXd AtQinv;  // A_k^T Q_k^-1
  if (use_term) {
    const Eigen::MatrixXd Qk_inv = spd_inverse(model.Q.at(k));
    AtQinv = model.A.at(k).transpose() * Qk_inv;
    prec += AtQinv * model.A.at(k);
  }
  st.P_x[k] = spd_inverse(detail::sym(prec));

  Eigen::VectorXd rhs = RinvC.transpose() * st.y[k];
  if (k > 0)
    rhs += Qprev_inv * (model.A.at(k - 1) * st.mean_x[k - 1] +
                        model.B.at(k - 1) * st.mean_u[k - 1]);
  Eigen::VectorXd coupling = C.transpose() * (Rinv * (D * st.mean_u[k]));
  if (use_term) coupling += AtQinv * (model.B.at(k) * st.mean_u[k]);
  rhs -= coupling;
  if (use_term && k + 1 < K) rhs += AtQinv * st.mean_x[k + 1];
  st.mean_x[k] = st.P_x[k] * rhs;
}

void vb_update_u(int k, VbState& st, const LdsModel& model) {
  const int K = model.K;
  const Eigen::MatrixXd& C = model.C.at(k);
  const Eigen::MatrixXd& D = model.D.at(k);
  const Eigen::MatrixXd Rinv = spd_inverse(model.R.at(k));
  const Eigen::MatrixXd DtRinv = D.transpose() * Rinv;
  const bool terminal = (k == K - 1);
  const bool use_term = !(terminal && st.drop_terminal_coupling);

  Eigen::MatrixXd prec = DtRinv * D;
  Eigen::MatrixXd BtQinv;  // B_k^T Q_k^-1
  if (use_term) {
    const Eigen::MatrixXd Qk_inv = spd_inverse(model.Q.at(k));
    BtQinv = model.B.at(k).transpose() * Qk_inv;
    prec += BtQinv * model.B.at(k);
  }
  prec.diagonal() += st.beta[st.joint ? 0 : k];
  st.P_u[k] = spd_inverse(detail::sym(prec));

  Eigen::VectorXd rhs = DtRinv * st.y[k];
  rhs -= (DtRinv * C) * st.mean_x[k];
  if (use_term) {
    rhs -= BtQinv * (model.A.at(k) * st.mean_x[k]);
    if (k + 1 < K) rhs += BtQinv * st.mean_x[k + 1];
  }
  st.mean_u[k] = st.P_u[k] * rhs;
}

void vb_update_beta(int k, VbState& st, double a, double b) {
  const int m = static_cast<int>(st.mean_u[k].size());
  if (st.b_tilde.empty())
    st.b_tilde.assign(st.beta.size(), Eigen::VectorXd::Ones(m));
  Eigen::VectorXd second =
      st.mean_u[k].array().square() + st.P_u[k].diagonal().array();
  Eigen::VectorXd bt = b + 0.5 * second.array();
  st.b_tilde[k] = bt;
  st.beta[k] = ((a + 0.5) / bt.array())
                   .min(st.beta_ceiling)
                   .max(1e-12);
}

void vb_update_beta_shared(VbState& st, double a, double b) {
  const int K = static_cast<int>(st.mean_u.size());
  const int m = static_cast<int>(st.mean_u[0].size());
  if (st.b_tilde.empty()) st.b_tilde.assign(1, Eigen::VectorXd::Ones(m));
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < K; ++k)
    acc += (st.mean_u[k].array().square() + st.P_u[k].diagonal().array())
               .matrix();
  Eigen::VectorXd bt = b + (0.5 / K) * acc.array();
  st.b_tilde[0] = bt;
  st.beta[0] = ((a + 0.5) / bt.array()).min(st.beta_ceiling).max(1e-12);
}

double vb_elbo(const VbState& st, const LdsModel& model, double a, double b,
               bool beta_frozen) {
  const int n = model.n, m = model.m, p = model.p, K = model.K;
  double elbo = 0.0;

  // Measurement terms.
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd& D = model.D.at(k);
    const Eigen::MatrixXd Rinv = spd_inverse(model.R.at(k));
    const Eigen::VectorXd r =
        st.y[k] - C * st.mean_x[k] - D * st.mean_u[k];
    const double quad =
        r.dot(Rinv * r) +
        (Rinv * (C * st.P_x[k] * C.transpose() +
                 D * st.P_u[k] * D.transpose()))
            .trace();
    elbo += -0.5 * (quad + spd_logdet(model.R.at(k)) + p * kLog2Pi);
  }

  // Dynamics terms, including the k = 1 boundary with x_0 = 0 and, unless
  // dropped, the terminal coupling with x_{K+1} = 0.
  for (int k = 0; k <= K - 1; ++k) {
    const Eigen::MatrixXd& Qk = model.Q.at(k == 0 ? 0 : k - 1);
    const Eigen::MatrixXd Qinv = spd_inverse(Qk);
    Eigen::VectorXd r;
    double trace = 0.0;
    if (k == 0) {
      r = st.mean_x[0];
      trace = (Qinv * st.P_x[0]).trace();
    } else {
      const Eigen::MatrixXd& A = model.A.at(k - 1);
      const Eigen::MatrixXd& B = model.B.at(k - 1);
      r = st.mean_x[k] - A * st.mean_x[k - 1] - B * st.mean_u[k - 1];
      trace = (Qinv * (st.P_x[k] + A * st.P_x[k - 1] * A.transpose() +
                       B * st.P_u[k - 1] * B.transpose()))
                  .trace();
    }
    elbo += -0.5 * (r.dot(Qinv * r) + trace + spd_logdet(Qk) + n * kLog2Pi);
  }
  if (!st.drop_terminal_coupling) {
    const Eigen::MatrixXd& A = model.A.at(K - 1);
    const Eigen::MatrixXd& B = model.B.at(K - 1);
    const Eigen::MatrixXd& Qk = model.Q.at(K - 1);
    const Eigen::MatrixXd Qinv = spd_inverse(Qk);
    const Eigen::VectorXd r = -(A * st.mean_x[K - 1] + B * st.mean_u[K - 1]);
    const double trace = (Qinv * (A * st.P_x[K - 1] * A.transpose() +
                                  B * st.P_u[K - 1] * B.transpose()))
                             .trace();
    elbo += -0.5 * (r.dot(Qinv * r) + trace + spd_logdet(Qk) + n * kLog2Pi);
  }

  // Input priors and Gaussian entropies.
  const double a_tilde = a + 0.5;
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd& beta = st.beta[st.joint ? 0 : k];
    const Eigen::VectorXd second =
        st.mean_u[k].array().square() + st.P_u[k].diagonal().array();
    for (int i = 0; i < m; ++i) {
      double elog;  // <log beta_i>
      if (beta_frozen || st.b_tilde.empty()) {
        elog = std::log(beta(i));
      } else {
        const Eigen::VectorXd& bt = st.b_tilde[st.joint ? 0 : k];
        elog = digamma(a_tilde) - std::log(bt(i));
      }
      elbo += 0.5 * (elog - beta(i) * second(i) - kLog2Pi);
    }
    elbo += 0.5 * spd_logdet(st.P_x[k]) + 0.5 * n * (1.0 + kLog2Pi);
    elbo += 0.5 * spd_logdet(st.P_u[k]) + 0.5 * m * (1.0 + kLog2Pi);
  }

  // Gamma prior and entropy of q(beta).
  if (!beta_frozen && !st.b_tilde.empty()) {
    const int nb = st.joint ? 1 : K;
    for (int kb = 0; kb < nb; ++kb) {
      const Eigen::VectorXd& bt = st.b_tilde[kb];
      const Eigen::VectorXd& beta = st.beta[kb];
      for (int i = 0; i < m; ++i) {
        const double elog = digamma(a_tilde) - std::log(bt(i));
        elbo += a * std::log(b) - std::lgamma(a) + (a - 1.0) * elog -
                b * beta(i);
        elbo += a_tilde - std::log(bt(i)) + std::lgamma(a_tilde) +
                (1.0 - a_tilde) * digamma(a_tilde);
      }
    }
  }
  return elbo;
}

SolverReport vb_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const VbOptions& opts) {
  const auto t0 = Clock::now();
  if (!(opts.a > 0 && opts.b > 0)) throw ConfigError("vb_rks: need a, b > 0");
  if (opts.r_max < 1 || opts.r_tilde_max < 1)
    throw ConfigError("vb_rks: need r_max, r_tilde_max >= 1");

  VbState st = vb_init(model, y, opts.joint, opts.drop_terminal_coupling);
  st.beta_ceiling = opts.beta_ceiling;
  if (!opts.beta0.empty()) {
    if (opts.beta0.size() != st.beta.size())
      throw ConfigError("vb_rks: bad beta0 length");
    st.beta = opts.beta0;
  }

  const int K = model.K;
  SolverReport report;
  for (int r = 0; r < opts.r_max; ++r) {
    for (int rt = 0; rt < opts.r_tilde_max; ++rt) {
      for (int k = 0; k < K; ++k) vb_update_x(k, st, model);
      for (int k = 0; k < K; ++k) vb_update_u(k, st, model);
    }
    double delta = 0.0;
    if (!opts.freeze_beta) {
      std::vector<Eigen::VectorXd> old = st.beta;
      if (opts.joint)
        vb_update_beta_shared(st, opts.a, opts.b);
      else
        for (int k = 0; k < K; ++k) vb_update_beta(k, st, opts.a, opts.b);
      for (size_t i = 0; i < old.size(); ++i)
        delta = std::max(delta, ((st.beta[i] - old[i]).cwiseAbs().array() /
                                 old[i].array())
                                    .maxCoeff());
    }
    report.param_delta.push_back(delta);
    report.objective_trace.push_back(
        vb_elbo(st, model, opts.a, opts.b, opts.freeze_beta));
    report.iterations = r + 1;
    for (const auto& mu : st.mean_u)
      if (!mu.allFinite()) throw NonFinite("vb_rks: non-finite iterate");
  }

  SmoothingResult& res = report.estimate;
  const int n = model.n, m = model.m;
  for (int k = 0; k < K; ++k) {
    res.x.push_back(st.mean_x[k]);
    res.u.push_back(st.mean_u[k]);
    res.P_x.push_back(st.P_x[k]);
    res.P_u.push_back(st.P_u[k]);
    Eigen::MatrixXd Pxi = Eigen::MatrixXd::Zero(n + m, n + m);
    Pxi.topLeftCorner(n, n) = st.P_x[k];
    Pxi.bottomRightCorner(m, m) = st.P_u[k];
    res.P_xi.push_back(Pxi);
  }
  report.runtime_s = seconds_since(t0);
  return report;
}

}  // namespace sks
