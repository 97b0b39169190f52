#include "sks/bp.hpp"

#include <chrono>
#include <cmath>

#include "recursion_common.hpp"
#include "sks/linalg.hpp"
#include "sks/regularized.hpp"

namespace sks {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kRankTol = 1e-10;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Group prox: v * max(0, 1 - kappa/||v||) applied per coordinate row.
void group_prox(Eigen::VectorXd& z, const Eigen::VectorXd& v, double kappa,
                int K, int m) {
  for (int i = 0; i < m; ++i) {
    double sq = 0.0;
    for (int k = 0; k < K; ++k) sq += v(k * m + i) * v(k * m + i);
    const double norm = std::sqrt(sq);
    const double scale =
        norm > kappa ? (norm - kappa) / norm : 0.0;
    for (int k = 0; k < K; ++k) z(k * m + i) = scale * v(k * m + i);
  }
}

}  // namespace

StackedSystem build_stacked_system(const LdsModel& model,
                                   const std::vector<Eigen::VectorXd>& y) {
  model.validate();
  if (!model.time_invariant())
    throw ConfigError("build_stacked_system: requires a time-invariant model");
  const int n = model.n, m = model.m, p = model.p, K = model.K;
  if (static_cast<int>(y.size()) != K)
    throw DimensionMismatch("build_stacked_system: measurements must have length K");
  const double entries = static_cast<double>(K) * p * K * m;
  if (entries > 5e7)
    throw MemoryLimit("build_stacked_system: stacked system exceeds 5e7 entries");

  const Eigen::MatrixXd& A = model.A.at(0);
  const Eigen::MatrixXd& B = model.B.at(0);
  const Eigen::MatrixXd& C = model.C.at(0);
  const Eigen::MatrixXd& D = model.D.at(0);

  StackedSystem s;
  s.n = n;
  s.m = m;
  s.p = p;
  s.K = K;
  s.y_tilde.resize(K * p);
  for (int k = 0; k < K; ++k) {
    if (y[k].size() != p)
      throw DimensionMismatch("build_stacked_system: bad measurement length");
    s.y_tilde.segment(k * p, p) = y[k];
  }

  // Powers C A^j, j = 0..K-1.
  std::vector<Eigen::MatrixXd> CA(K);
  CA[0] = C;
  for (int j = 1; j < K; ++j) CA[j] = CA[j - 1] * A;

  s.O.resize(K * p, n);
  for (int k = 0; k < K; ++k) s.O.middleRows(k * p, p) = CA[k];

  s.Gamma = Eigen::MatrixXd::Zero(K * p, K * m);
  std::vector<Eigen::MatrixXd> CAB(K > 1 ? K - 1 : 0);
  if (K > 1) {
    CAB[0] = C * B;
    for (int j = 1; j + 1 < K; ++j) CAB[j] = CA[j] * B;
  }
  for (int i = 0; i < K; ++i) {
    s.Gamma.block(i * p, i * m, p, m) = D;
    for (int j = 0; j < i; ++j)
      s.Gamma.block(i * p, j * m, p, m) = CAB[i - j - 1];
  }

  s.M = Eigen::MatrixXd::Zero(K * p, (K - 1) * n);
  for (int i = 1; i < K; ++i)
    for (int j = 0; j < i; ++j)
      s.M.block(i * p, j * n, p, n) = CA[i - j - 1];

  const Eigen::MatrixXd& Q = model.Q.at(0);
  const Eigen::MatrixXd& R = model.R.at(0);
  Eigen::MatrixXd MQ(K * p, (K - 1) * n);
  for (int j = 0; j + 1 < K; ++j)
    MQ.middleCols(j * n, n) = s.M.middleCols(j * n, n) * Q;
  s.Q_tilde = MQ * s.M.transpose();
  for (int k = 0; k < K; ++k) s.Q_tilde.block(k * p, k * p, p, p) += R;
  s.Q_tilde = symmetrized(s.Q_tilde);
  return s;
}

ReducedSystem reduce_and_whiten(const StackedSystem& stacked) {
  const int Kp = static_cast<int>(stacked.O.rows());

  // Pi = I - U_O U_O^T over the numerical column space of O.
  Eigen::BDCSVD<Eigen::MatrixXd> osvd(stacked.O, Eigen::ComputeThinU);
  const Eigen::VectorXd& osv = osvd.singularValues();
  int rank_o = 0;
  for (int i = 0; i < osv.size(); ++i)
    if (osv(i) > kRankTol * osv(0)) ++rank_o;
  ReducedSystem red;
  red.Pi = Eigen::MatrixXd::Identity(Kp, Kp);
  if (rank_o > 0) {
    const Eigen::MatrixXd U = osvd.matrixU().leftCols(rank_o);
    red.Pi -= U * U.transpose();
  }

  const Eigen::MatrixXd PiGamma = red.Pi * stacked.Gamma;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(PiGamma,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  int R = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(0) > 0 && sv(i) > kRankTol * sv(0)) ++R;
  if (R == 0)
    throw RankCollapse("reduce_and_whiten: Pi * Gamma has rank zero");
  red.rank = R;
  red.Psi1 = svd.matrixU().leftCols(R).transpose();
  red.Lambda = sv.head(R);
  red.Phi1 = svd.matrixV().leftCols(R).transpose();

  const Eigen::MatrixXd W = red.Psi1 * red.Pi;  // R x Kp
  red.Q_bar = symmetrized(W * stacked.Q_tilde * W.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(red.Q_bar);
  if (llt.info() != Eigen::Success)
    throw SingularGram("reduce_and_whiten: reduced noise covariance not PD");
  const Eigen::MatrixXd Lfac = llt.matrixL();
  red.y_bar = Lfac.triangularView<Eigen::Lower>().solve(W * stacked.y_tilde);
  red.Gamma_bar =
      Lfac.triangularView<Eigen::Lower>().solve(W * stacked.Gamma);
  return red;
}

double epsilon_default(int R) {
  if (R < 1) throw ConfigError("epsilon_default: need R >= 1");
  const double r = static_cast<double>(R);
  return std::sqrt(r) * (1.0 + 2.0 * std::sqrt(2.0 / r));
}

Eigen::VectorXd bpdn_solve(const Eigen::MatrixXd& Gamma_bar,
                           const Eigen::VectorXd& y_bar, double epsilon,
                           const BpdnMode& mode, const BpdnOptions& opts) {
  if (epsilon < 0) throw ConfigError("bpdn_solve: need epsilon >= 0");
  const int rows = static_cast<int>(Gamma_bar.rows());
  const int N = static_cast<int>(Gamma_bar.cols());
  if (y_bar.size() != rows)
    throw DimensionMismatch("bpdn_solve: y length mismatch");
  if (mode.group && (mode.K <= 0 || mode.m <= 0 || mode.K * mode.m != N))
    throw DimensionMismatch("bpdn_solve: group mode needs K*m == cols");

  // Feasibility: distance from y to range(Gamma_bar).
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Gamma_bar);
  {
    const Eigen::VectorXd u_ls = cod.solve(y_bar);
    const double resid = (y_bar - Gamma_bar * u_ls).norm();
    if (resid > epsilon * (1.0 + 1e-9) + 1e-12)
      throw Infeasible("bpdn_solve: epsilon below the least-squares residual");
  }

  const double rho = opts.rho;
  // Factor for the u-update solve (I + G^T G) u = rhs, using the kernel
  // (I + G G^T) on the smaller side when rows < N.
  const bool woodbury = rows < N;
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (woodbury) {
    llt.compute(Eigen::MatrixXd::Identity(rows, rows) +
                Gamma_bar * Gamma_bar.transpose());
  } else {
    llt.compute(Eigen::MatrixXd::Identity(N, N) +
                Gamma_bar.transpose() * Gamma_bar);
  }
  auto solve_normal = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
    if (!woodbury) return llt.solve(rhs);
    return rhs - Gamma_bar.transpose() * llt.solve(Gamma_bar * rhs);
  };

  Eigen::VectorXd u = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd z1 = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd z2 = Eigen::VectorXd::Zero(rows);
  Eigen::VectorXd l1 = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd l2 = Eigen::VectorXd::Zero(rows);

  const double sqrt_dims = std::sqrt(static_cast<double>(N + rows));
  for (int it = 0; it < opts.max_iter; ++it) {
    u = solve_normal((z1 - l1) + Gamma_bar.transpose() * (z2 - l2));
    const Eigen::VectorXd Gu = Gamma_bar * u;

    const Eigen::VectorXd z1_old = z1;
    const Eigen::VectorXd z2_old = z2;
    const Eigen::VectorXd v1 = u + l1;
    if (mode.group)
      group_prox(z1, v1, 1.0 / rho, mode.K, mode.m);
    else
      z1 = soft_threshold(v1, 1.0 / rho);
    const Eigen::VectorXd v2 = Gu + l2;
    const Eigen::VectorXd r = v2 - y_bar;
    const double rn = r.norm();
    z2 = rn <= epsilon ? v2 : Eigen::VectorXd(y_bar + (epsilon / rn) * r);

    l1 += u - z1;
    l2 += Gu - z2;

    const double pri =
        std::sqrt((u - z1).squaredNorm() + (Gu - z2).squaredNorm());
    const double dual =
        rho * std::sqrt((z1 - z1_old).squaredNorm() +
                        (Gamma_bar.transpose() * (z2 - z2_old)).squaredNorm());
    const double pri_scale = std::max(
        std::sqrt(u.squaredNorm() + Gu.squaredNorm()),
        std::sqrt(z1.squaredNorm() + z2.squaredNorm()));
    const double dual_scale =
        rho * std::sqrt(l1.squaredNorm() +
                        (Gamma_bar.transpose() * l2).squaredNorm());
    if (pri <= sqrt_dims * opts.eps_abs + opts.eps_rel * pri_scale &&
        dual <= sqrt_dims * opts.eps_abs + opts.eps_rel * dual_scale)
      break;
  }

  // Hard feasibility: pull the iterate onto the constraint ball if ADMM
  // stopped marginally outside it.
  const Eigen::VectorXd resid = y_bar - Gamma_bar * u;
  const double rn = resid.norm();
  if (rn > epsilon) {
    const double target = epsilon * (1.0 - 1e-9);
    const double alpha = rn > 0 ? 1.0 - target / rn : 0.0;
    u += cod.solve(alpha * resid);
  }
  if (!u.allFinite()) throw NonFinite("bpdn_solve: non-finite solution");
  return u;
}

Eigen::VectorXd wls_initial_state(const StackedSystem& stacked,
                                  const Eigen::VectorXd& u_star) {
  if (u_star.size() != stacked.Gamma.cols())
    throw DimensionMismatch("wls_initial_state: bad input length");
  Eigen::LLT<Eigen::MatrixXd> q_llt(stacked.Q_tilde);
  if (q_llt.info() != Eigen::Success)
    throw SingularGram("wls_initial_state: Q~ not PD");
  const Eigen::MatrixXd QinvO = q_llt.solve(stacked.O);
  const Eigen::MatrixXd gram = stacked.O.transpose() * QinvO;
  Eigen::LLT<Eigen::MatrixXd> g_llt(gram);
  if (g_llt.info() != Eigen::Success)
    throw SingularGram("wls_initial_state: O^T Q~^-1 O singular");
  return g_llt.solve(QinvO.transpose() *
                     (stacked.y_tilde - stacked.Gamma * u_star));
}

SmoothingResult known_input_smoother(const LdsModel& model,
                                     const std::vector<Eigen::VectorXd>& y,
                                     const std::vector<Eigen::VectorXd>& u,
                                     const Eigen::VectorXd& x1,
                                     const Eigen::MatrixXd& P1) {
  const int n = model.n, K = model.K;
  if (static_cast<int>(u.size()) != K)
    throw DimensionMismatch("known_input_smoother: inputs must have length K");

  std::vector<Eigen::VectorXd> xf(K);
  std::vector<Eigen::MatrixXd> Pf(K), Ppred(K);
  xf[0] = x1;
  Pf[0] = P1;
  for (int k = 1; k < K; ++k) {
    const Eigen::MatrixXd& A = model.A.at(k - 1);
    const Eigen::MatrixXd& B = model.B.at(k - 1);
    const Eigen::MatrixXd& C = model.C.at(k);
    const Eigen::MatrixXd& D = model.D.at(k);
    const Eigen::MatrixXd& R = model.R.at(k);
    const Eigen::VectorXd xpred = A * xf[k - 1] + B * u[k - 1];
    Ppred[k] = symmetrized(A * Pf[k - 1] * A.transpose() + model.Q.at(k - 1));
    const Eigen::MatrixXd CP = C * Ppred[k];
    const Eigen::MatrixXd S = R + CP * C.transpose();
    Eigen::LLT<Eigen::MatrixXd> s_llt(S);
    if (s_llt.info() != Eigen::Success)
      throw CovarianceBlowup("known_input_smoother: innovation cov not PD");
    const Eigen::MatrixXd G = s_llt.solve(CP).transpose();
    xf[k] = xpred + G * (y[k] - D * u[k] - C * xpred);
    Pf[k] = symmetrized(
        (Eigen::MatrixXd::Identity(n, n) - G * C) * Ppred[k]);
  }

  std::vector<Eigen::VectorXd> xs(K);
  std::vector<Eigen::MatrixXd> Ps(K);
  xs[K - 1] = xf[K - 1];
  Ps[K - 1] = Pf[K - 1];
  for (int k = K - 2; k >= 1; --k) {
    const Eigen::MatrixXd& A = model.A.at(k);
    const Eigen::MatrixXd& B = model.B.at(k);
    const Eigen::MatrixXd Qinv = spd_inverse(model.Q.at(k));
    detail::PredSolver solver(Ppred[k + 1]);
    const Eigen::MatrixXd Kk =
        solver.ldlt.solve(A * Pf[k]).transpose();  // n x n
    // Correction term P (I - K A)^T A^T Q^-1 B u, which equals K B u.
    const Eigen::MatrixXd corr =
        Pf[k] * (Eigen::MatrixXd::Identity(n, n) - Kk * A).transpose() *
        A.transpose() * Qinv * B;
    xs[k] = xf[k] + Kk * (xs[k + 1] - A * xf[k]) - corr * u[k];
    Ps[k] = symmetrized(Pf[k] +
                        Kk * (Ps[k + 1] - Ppred[k + 1]) * Kk.transpose());
  }
  xs[0] = x1;
  Ps[0] = Pf[0];

  SmoothingResult res;
  res.x = std::move(xs);
  res.u = u;
  res.P_x = std::move(Ps);
  return res;
}

namespace {

SolverReport bp_impl(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                     const BpOptions& opts, bool group) {
  const auto t0 = Clock::now();
  StackedSystem stacked = build_stacked_system(model, y);
  ReducedSystem red = reduce_and_whiten(stacked);
  const double eps =
      opts.epsilon < 0 ? epsilon_default(red.rank) : opts.epsilon;
  BpdnMode mode;
  if (group) {
    mode.group = true;
    mode.K = model.K;
    mode.m = model.m;
  }
  const Eigen::VectorXd u_stacked =
      bpdn_solve(red.Gamma_bar, red.y_bar, eps, mode, opts.bpdn);
  const Eigen::VectorXd x1 = wls_initial_state(stacked, u_stacked);

  const int m = model.m, K = model.K;
  std::vector<Eigen::VectorXd> u(K);
  for (int k = 0; k < K; ++k) u[k] = u_stacked.segment(k * m, m);

  Eigen::MatrixXd P1;
  {
    Eigen::LLT<Eigen::MatrixXd> q_llt(stacked.Q_tilde);
    const Eigen::MatrixXd gram =
        stacked.O.transpose() * q_llt.solve(stacked.O);
    P1 = spd_inverse(symmetrized(gram));
  }

  SolverReport report;
  report.estimate = known_input_smoother(model, y, u, x1, P1);
  report.iterations = 1;
  report.runtime_s = seconds_since(t0);
  return report;
}

}  // namespace

SolverReport bp_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const BpOptions& opts) {
  return bp_impl(model, y, opts, false);
}

SolverReport group_bp_rks(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const BpOptions& opts) {
  return bp_impl(model, y, opts, true);
}

}  // namespace sks
