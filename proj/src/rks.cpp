#include "sks/rks.hpp"

#include <cmath>

#include "recursion_common.hpp"
#include "sks/linalg.hpp"

namespace sks {

using detail::PredSolver;

namespace {

constexpr double kRankTol = 1e-10;  // singular value ratio for rank checks

Eigen::MatrixXd concat_ab(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd At(A.rows(), A.cols() + B.cols());
  At << A, B;
  return At;
}

void check_measurements(const LdsModel& model,
                        const std::vector<Eigen::VectorXd>& y) {
  if (static_cast<int>(y.size()) != model.K)
    throw DimensionMismatch("rks: measurement sequence must have length K");
  for (const auto& yk : y)
    if (yk.size() != model.p)
      throw DimensionMismatch("rks: bad measurement length");
}

}  // namespace

Gains compute_gains(const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                    const Eigen::MatrixXd& R, const Eigen::MatrixXd& P_x_pred) {
  const int n = static_cast<int>(C.cols());
  const int m = static_cast<int>(D.cols());
  const int p = static_cast<int>(D.rows());
  if (C.rows() != p || R.rows() != p || R.cols() != p || P_x_pred.rows() != n ||
      P_x_pred.cols() != n)
    throw DimensionMismatch("compute_gains: inconsistent dimensions");

  if (p < m)
    throw SingularFeedthrough(
        "compute_gains: p < m, D cannot have full column rank");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) < kRankTol * sv(0))
    throw SingularFeedthrough("compute_gains: D^T R^-1 D numerically singular");

  Eigen::LLT<Eigen::MatrixXd> r_llt(R);
  if (r_llt.info() != Eigen::Success)
    throw DimensionMismatch("compute_gains: R not positive definite");

  Gains g;
  const Eigen::MatrixXd RinvD = r_llt.solve(D);
  const Eigen::MatrixXd gram = D.transpose() * RinvD;  // m x m
  Eigen::LLT<Eigen::MatrixXd> gram_llt(gram);
  if (gram_llt.info() != Eigen::Success)
    throw SingularFeedthrough("compute_gains: D^T R^-1 D numerically singular");
  g.J = gram_llt.solve(RinvD.transpose());

  const Eigen::MatrixXd CP = C * P_x_pred;
  const Eigen::MatrixXd S = R + CP * C.transpose();
  Eigen::LLT<Eigen::MatrixXd> s_llt(S);
  if (s_llt.info() != Eigen::Success)
    throw DimensionMismatch("compute_gains: innovation covariance not PD");
  g.L = s_llt.solve(CP).transpose();

  const Eigen::MatrixXd JC = g.J * C;  // m x n
  const Eigen::MatrixXd LD = g.L * D;  // n x m
  const Eigen::MatrixXd top_lhs =
      Eigen::MatrixXd::Identity(n, n) - LD * JC;
  const Eigen::MatrixXd top_rhs = g.L - LD * g.J;
  const Eigen::MatrixXd bot_lhs =
      Eigen::MatrixXd::Identity(m, m) - JC * LD;
  const Eigen::MatrixXd bot_rhs = g.J - JC * g.L;

  g.G.resize(n + m, p);
  g.G.topRows(n) = Eigen::PartialPivLU<Eigen::MatrixXd>(top_lhs).solve(top_rhs);
  g.G.bottomRows(m) =
      Eigen::PartialPivLU<Eigen::MatrixXd>(bot_lhs).solve(bot_rhs);
  if (!g.G.allFinite())
    throw NonFinite("compute_gains: non-finite gain matrix");
  return g;
}

SmoothingResult rks_smooth(const LdsModel& model,
                           const std::vector<Eigen::VectorXd>& y,
                           const RksOptions& opts) {
  model.validate();
  check_measurements(model, y);
  const int n = model.n, m = model.m, K = model.K;
  const int d = n + m;

  Eigen::MatrixXd P0 = opts.P0;
  if (P0.size() == 0) P0 = Eigen::MatrixXd::Identity(d, d);
  if (P0.rows() != d || P0.cols() != d)
    throw DimensionMismatch("rks_smooth: P0 must be (n+m) x (n+m)");

  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(d, n);
  T.topRows(n).setIdentity();

  SmoothingResult res;
  std::vector<Eigen::VectorXd> xi_f(K);
  std::vector<Eigen::MatrixXd> P_f(K), P_pred(K);

  // Forward filtering.
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd At =
        concat_ab(model.A.at(k == 0 ? 0 : k - 1), model.B.at(k == 0 ? 0 : k - 1));
    Eigen::VectorXd x_pred;
    Eigen::MatrixXd Px_pred;
    if (k == 0) {
      x_pred = Eigen::VectorXd::Zero(n);
      Px_pred = At * P0 * At.transpose();  // Q_0 = 0
    } else {
      x_pred = At * xi_f[k - 1];
      Px_pred = At * P_f[k - 1] * At.transpose() + model.Q.at(k - 1);
    }
    Px_pred = symmetrized(Px_pred);
    P_pred[k] = Px_pred;

    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd& D = model.D.at(k);
    const Eigen::MatrixXd& R = model.R.at(k);
    Gains g = compute_gains(C, D, R, Px_pred);

    const Eigen::VectorXd innov = y[k] - C * x_pred;
    xi_f[k] = T * x_pred + g.G * innov;
    const Eigen::MatrixXd TmGC = T - g.G * C;
    P_f[k] = symmetrized(TmGC * Px_pred * TmGC.transpose() +
                         g.G * R * g.G.transpose());
    if (!xi_f[k].allFinite() || !P_f[k].allFinite())
      throw NonFinite("rks_smooth: non-finite filter state");

    if (opts.collect_diagnostics) {
      res.J_gain.push_back(g.J);
      res.G_gain.push_back(g.G);
      res.innovation_norm.push_back(innov.norm());
      res.x_filt.push_back(xi_f[k].head(n));
      res.u_filt.push_back(xi_f[k].tail(m));
      res.P_xi_filt.push_back(P_f[k]);
    }
  }

  // Backward smoothing.
  std::vector<Eigen::VectorXd> xi_s(K);
  std::vector<Eigen::MatrixXd> P_s(K);
  xi_s[K - 1] = xi_f[K - 1];
  P_s[K - 1] = P_f[K - 1];
  if (opts.want_lag_one) res.lag_one.resize(K - 1);
  for (int k = K - 2; k >= 0; --k) {
    const Eigen::MatrixXd At = concat_ab(model.A.at(k), model.B.at(k));
    PredSolver solver(P_pred[k + 1]);
    res.prediction_regularized |= solver.regularized;
    // K_k = P_f A~^T (P^x_pred)^-1, via the symmetric solve.
    const Eigen::MatrixXd Kk =
        solver.ldlt.solve(At * P_f[k]).transpose();  // (n+m) x n
    xi_s[k] = xi_f[k] + Kk * (xi_s[k + 1].head(n) - At * xi_f[k]);
    const Eigen::MatrixXd dP =
        P_s[k + 1].topLeftCorner(n, n) - P_pred[k + 1];
    P_s[k] = symmetrized(P_f[k] + Kk * dP * Kk.transpose());
    if (opts.want_lag_one)
      res.lag_one[k] = P_s[k + 1].leftCols(n) * Kk.transpose();
  }

  for (int k = 0; k < K; ++k) {
    res.x.push_back(xi_s[k].head(n));
    res.u.push_back(xi_s[k].tail(m));
    res.P_xi.push_back(P_s[k]);
    res.P_x.push_back(P_s[k].topLeftCorner(n, n));
    res.P_u.push_back(P_s[k].bottomRightCorner(m, m));
  }
  return res;
}

SmoothingResult rks_smooth_state_only(const LdsModel& model,
                                      const std::vector<Eigen::VectorXd>& y,
                                      const RksOptions& opts) {
  model.validate();
  check_measurements(model, y);
  const int n = model.n, m = model.m, K = model.K;
  const int d = n + m;
  if (K < 2)
    throw DimensionMismatch("rks_smooth_state_only: need K >= 2");

  Eigen::MatrixXd P0x = Eigen::MatrixXd::Identity(n, n);
  if (opts.P0.size() != 0) {
    if (opts.P0.rows() >= n && opts.P0.cols() >= n)
      P0x = opts.P0.topLeftCorner(n, n);
    else
      throw DimensionMismatch("rks_smooth_state_only: P0 too small");
  }

  SmoothingResult res;
  // State of the recursion: xi_k = [x_k; u_{k-1}], with u_0 fixed at zero.
  std::vector<Eigen::VectorXd> xi_f(K);
  std::vector<Eigen::MatrixXd> P_f(K), P_star(K);

  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd& R = model.R.at(k);
    if (k == 0) {
      // Step-1 prediction from xi_{0|0} = 0 with Q_0 = 0, then a plain
      // measurement update (no input enters x_1).
      const Eigen::MatrixXd& A0 = model.A.at(0);
      const Eigen::MatrixXd Ps0 = symmetrized(A0 * P0x * A0.transpose());
      const Eigen::MatrixXd CP = C * Ps0;
      const Eigen::MatrixXd S = R + CP * C.transpose();
      Eigen::LLT<Eigen::MatrixXd> s_llt(S);
      if (s_llt.info() != Eigen::Success)
        throw DimensionMismatch("rks_smooth_state_only: innovation cov not PD");
      const Eigen::MatrixXd L = s_llt.solve(CP).transpose();
      const Eigen::MatrixXd ImLC = Eigen::MatrixXd::Identity(n, n) - L * C;
      Eigen::VectorXd xf = L * y[0];
      Eigen::MatrixXd Pxf = symmetrized(ImLC * Ps0 * ImLC.transpose() +
                                        L * R * L.transpose());
      xi_f[0] = Eigen::VectorXd::Zero(d);
      xi_f[0].head(n) = xf;
      P_f[0] = Eigen::MatrixXd::Zero(d, d);
      P_f[0].topLeftCorner(n, n) = Pxf;
      P_star[0] = Ps0;
      if (opts.collect_diagnostics) {
        res.innovation_norm.push_back((y[0]).norm());
        res.x_filt.push_back(xf);
      }
      continue;
    }

    const Eigen::MatrixXd& A = model.A.at(k - 1);
    const Eigen::MatrixXd& B = model.B.at(k - 1);
    const Eigen::MatrixXd Px_prev = P_f[k - 1].topLeftCorner(n, n);
    const Eigen::MatrixXd Ps =
        symmetrized(A * Px_prev * A.transpose() + model.Q.at(k - 1));
    P_star[k] = Ps;
    Eigen::LDLT<Eigen::MatrixXd> ps_ldlt(Ps);
    if (ps_ldlt.info() != Eigen::Success)
      throw SingularInputGram("rks_smooth_state_only: P* not PD");

    const Eigen::MatrixXd CP = C * Ps;
    const Eigen::MatrixXd S = R + CP * C.transpose();
    Eigen::LLT<Eigen::MatrixXd> s_llt(S);
    if (s_llt.info() != Eigen::Success)
      throw DimensionMismatch("rks_smooth_state_only: innovation cov not PD");
    const Eigen::MatrixXd L = s_llt.solve(CP).transpose();
    const Eigen::MatrixXd ImLC = Eigen::MatrixXd::Identity(n, n) - L * C;

    Eigen::MatrixXd F, M;
    const bool no_input = B.isZero(0.0);
    if (no_input) {
      F = L;
      M = Eigen::MatrixXd::Zero(m, model.p);
    } else {
      const Eigen::MatrixXd PsInvB = ps_ldlt.solve(B);
      const Eigen::MatrixXd gram = B.transpose() * PsInvB;  // m x m
      Eigen::LLT<Eigen::MatrixXd> gram_llt(gram);
      if (gram_llt.info() != Eigen::Success)
        throw SingularInputGram(
            "rks_smooth_state_only: B^T (P*)^-1 B singular");
      const Eigen::MatrixXd J = gram_llt.solve(PsInvB.transpose());  // m x n
      const Eigen::MatrixXd SB = ImLC * B;                           // n x m
      F = Eigen::PartialPivLU<Eigen::MatrixXd>(
              Eigen::MatrixXd::Identity(n, n) - SB * J)
              .solve(L);
      M = Eigen::PartialPivLU<Eigen::MatrixXd>(
              Eigen::MatrixXd::Identity(m, m) - J * SB)
              .solve(J * L);
    }

    const Eigen::VectorXd x_pred_mean = A * xi_f[k - 1].head(n);
    const Eigen::VectorXd innov = y[k] - C * x_pred_mean;
    const Eigen::MatrixXd ImFC = Eigen::MatrixXd::Identity(n, n) - F * C;

    xi_f[k].resize(d);
    xi_f[k].head(n) = x_pred_mean + F * innov;
    xi_f[k].tail(m) = M * innov;

    const Eigen::MatrixXd Pxx = symmetrized(
        ImFC * Ps * ImFC.transpose() + F * R * F.transpose());
    const Eigen::MatrixXd MC = M * C;
    const Eigen::MatrixXd Puu = symmetrized(
        MC * Ps * MC.transpose() + M * R * M.transpose());
    const Eigen::MatrixXd Pxu =
        -ImFC * Ps * MC.transpose() + F * R * M.transpose();
    P_f[k].resize(d, d);
    P_f[k].topLeftCorner(n, n) = Pxx;
    P_f[k].bottomRightCorner(m, m) = Puu;
    P_f[k].topRightCorner(n, m) = Pxu;
    P_f[k].bottomLeftCorner(m, n) = Pxu.transpose();
    if (!xi_f[k].allFinite() || !P_f[k].allFinite())
      throw NonFinite("rks_smooth_state_only: non-finite filter state");

    if (opts.collect_diagnostics) {
      res.innovation_norm.push_back(innov.norm());
      res.x_filt.push_back(xi_f[k].head(n));
      res.u_filt.push_back(xi_f[k].tail(m));
    }
  }

  // Backward pass with A^ = [A, 0] and B^ = [I, -B].
  std::vector<Eigen::VectorXd> xi_s;
  std::vector<Eigen::MatrixXd> P_s;
  detail::state_only_backward(model, xi_f, P_f, P_star, xi_s, P_s,
                              opts.want_lag_one ? &res.lag_one : nullptr,
                              res.prediction_regularized);

  for (int k = 0; k < K; ++k) {
    res.x.push_back(xi_s[k].head(n));
    res.P_x.push_back(P_s[k].topLeftCorner(n, n));
    res.P_xi.push_back(P_s[k]);
    if (k > 0) {
      res.u.push_back(xi_s[k].tail(m));
      res.P_u.push_back(P_s[k].bottomRightCorner(m, m));
    }
  }
  return res;
}

SmoothingResult batch_map_oracle(const LdsModel& model,
                                 const std::vector<Eigen::VectorXd>& y,
                                 MeasurementMode mode, const RksOptions& opts,
                                 double ridge) {
  model.validate();
  check_measurements(model, y);
  const int n = model.n, m = model.m, K = model.K;
  const bool direct = mode == MeasurementMode::DirectFeedthrough;
  const int nu = direct ? K : K - 1;  // number of unknown inputs
  const int N = K * n + nu * m;
  if (N > 4000)
    throw MemoryLimit("batch_map_oracle: stacked system too large");

  auto xoff = [&](int k) { return k * n; };
  auto uoff = [&](int k) { return K * n + k * m; };

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(N);

  // Prior on x_1, mirroring the recursion's step-1 prediction.
  {
    Eigen::MatrixXd P1;
    if (direct) {
      Eigen::MatrixXd P0 = opts.P0.size()
                               ? opts.P0
                               : Eigen::MatrixXd::Identity(n + m, n + m);
      if (P0.rows() != n + m || P0.cols() != n + m)
        throw DimensionMismatch("batch_map_oracle: P0 must be (n+m)x(n+m)");
      const Eigen::MatrixXd At = concat_ab(model.A.at(0), model.B.at(0));
      P1 = symmetrized(At * P0 * At.transpose());
    } else {
      const Eigen::MatrixXd P0x =
          opts.P0.size() ? Eigen::MatrixXd(opts.P0.topLeftCorner(n, n))
                         : Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n));
      const Eigen::MatrixXd& A0 = model.A.at(0);
      P1 = symmetrized(A0 * P0x * A0.transpose());
    }
    Eigen::LLT<Eigen::MatrixXd> llt(P1);
    if (llt.info() != Eigen::Success)
      throw SingularHessian("batch_map_oracle: x_1 prior covariance not PD");
    H.block(xoff(0), xoff(0), n, n) +=
        llt.solve(Eigen::MatrixXd::Identity(n, n));
  }

  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd Rinv = spd_inverse(model.R.at(k));
    H.block(xoff(k), xoff(k), n, n) += C.transpose() * Rinv * C;
    b.segment(xoff(k), n) += C.transpose() * Rinv * y[k];
    if (direct) {
      const Eigen::MatrixXd& D = model.D.at(k);
      H.block(xoff(k), uoff(k), n, m) += C.transpose() * Rinv * D;
      H.block(uoff(k), xoff(k), m, n) += D.transpose() * Rinv * C;
      H.block(uoff(k), uoff(k), m, m) += D.transpose() * Rinv * D;
      b.segment(uoff(k), m) += D.transpose() * Rinv * y[k];
    }
  }

  for (int k = 0; k + 1 < K; ++k) {
    const Eigen::MatrixXd& A = model.A.at(k);
    const Eigen::MatrixXd& B = model.B.at(k);
    const Eigen::MatrixXd Qinv = spd_inverse(model.Q.at(k));
    H.block(xoff(k + 1), xoff(k + 1), n, n) += Qinv;
    H.block(xoff(k), xoff(k), n, n) += A.transpose() * Qinv * A;
    H.block(uoff(k), uoff(k), m, m) += B.transpose() * Qinv * B;
    const Eigen::MatrixXd QinvA = Qinv * A;
    const Eigen::MatrixXd QinvB = Qinv * B;
    H.block(xoff(k + 1), xoff(k), n, n) -= QinvA;
    H.block(xoff(k), xoff(k + 1), n, n) -= QinvA.transpose();
    H.block(xoff(k + 1), uoff(k), n, m) -= QinvB;
    H.block(uoff(k), xoff(k + 1), m, n) -= QinvB.transpose();
    H.block(xoff(k), uoff(k), n, m) += A.transpose() * QinvB;
    H.block(uoff(k), xoff(k), m, n) += QinvB.transpose() * A;
  }

  if (ridge > 0.0) H += ridge * Eigen::MatrixXd::Identity(N, N);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success)
    throw SingularHessian("batch_map_oracle: factorization failed");
  {
    const Eigen::VectorXd d = ldlt.vectorD();
    if (d.minCoeff() <= 1e-12 * d.cwiseAbs().maxCoeff())
      throw SingularHessian("batch_map_oracle: stacked Hessian singular");
  }
  Eigen::VectorXd z = ldlt.solve(b);
  // One round of iterative refinement; the stacked Hessian can be poorly
  // conditioned when the state grows over the horizon.
  z += ldlt.solve(b - H * z);
  Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(N, N));
  cov += ldlt.solve(Eigen::MatrixXd::Identity(N, N) - H * cov);
  cov = symmetrized(cov);

  SmoothingResult res;
  for (int k = 0; k < K; ++k) {
    res.x.push_back(z.segment(xoff(k), n));
    res.P_x.push_back(cov.block(xoff(k), xoff(k), n, n));
  }
  for (int k = 0; k < nu; ++k) {
    res.u.push_back(z.segment(uoff(k), m));
    res.P_u.push_back(cov.block(uoff(k), uoff(k), m, m));
  }
  // Joint per-step covariance in the layout of the matching recursion.
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd Pxi = Eigen::MatrixXd::Zero(n + m, n + m);
    const int ku = direct ? k : k - 1;  // u index paired with x_k
    Pxi.topLeftCorner(n, n) = cov.block(xoff(k), xoff(k), n, n);
    if (ku >= 0 && ku < nu) {
      Pxi.bottomRightCorner(m, m) = cov.block(uoff(ku), uoff(ku), m, m);
      Pxi.topRightCorner(n, m) = cov.block(xoff(k), uoff(ku), n, m);
      Pxi.bottomLeftCorner(m, n) = cov.block(uoff(ku), xoff(k), m, n);
    }
    res.P_xi.push_back(Pxi);
  }
  return res;
}

}  // namespace sks
