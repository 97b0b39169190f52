#pragma once

// Internal helpers shared by the smoother implementations.

#include <Eigen/Dense>
#include <vector>

#include "sks/model.hpp"

namespace sks::detail {

inline constexpr double kPredRegularizer = 1e-12;

// LDLT of a prediction covariance with a tiny-ridge fallback for the
// backward-pass inverse when Q is nearly singular.
struct PredSolver {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  bool regularized = false;

  explicit PredSolver(const Eigen::MatrixXd& P) {
    ldlt.compute(P);
    bool bad = ldlt.info() != Eigen::Success;
    if (!bad) {
      const Eigen::VectorXd d = ldlt.vectorD();
      bad = d.minCoeff() <= kPredRegularizer * d.cwiseAbs().maxCoeff();
    }
    if (bad) {
      Eigen::MatrixXd Pr =
          P + kPredRegularizer * Eigen::MatrixXd::Identity(P.rows(), P.cols());
      ldlt.compute(Pr);
      regularized = true;
    }
  }
};

inline Eigen::MatrixXd sym(const Eigen::MatrixXd& P) {
  return 0.5 * (P + P.transpose());
}

// Backward pass over xi_k = [x_k; u_{k-1}] with A^ = [A, 0], B^ = [I, -B].
// xi_f/P_f are the filtered quantities, P_star[k] the covariance of the
// state prediction used at filter step k. Fills xi_s/P_s (and lag_one when
// non-null: Cov(xi_{k+1}, xi_k | Y) = P_{k+1|K} B^^T K_k^T).
inline void state_only_backward(const LdsModel& model,
                                const std::vector<Eigen::VectorXd>& xi_f,
                                const std::vector<Eigen::MatrixXd>& P_f,
                                const std::vector<Eigen::MatrixXd>& P_star,
                                std::vector<Eigen::VectorXd>& xi_s,
                                std::vector<Eigen::MatrixXd>& P_s,
                                std::vector<Eigen::MatrixXd>* lag_one,
                                bool& regularized) {
  const int n = model.n, m = model.m, K = model.K;
  xi_s.resize(K);
  P_s.resize(K);
  xi_s[K - 1] = xi_f[K - 1];
  P_s[K - 1] = P_f[K - 1];
  if (lag_one) lag_one->resize(K - 1);
  for (int k = K - 2; k >= 0; --k) {
    const Eigen::MatrixXd& A = model.A.at(k);
    const Eigen::MatrixXd& B = model.B.at(k);
    PredSolver solver(P_star[k + 1]);
    regularized |= solver.regularized;
    const Eigen::MatrixXd PfAt = P_f[k].leftCols(n) * A.transpose();  // d x n
    const Eigen::MatrixXd Kk = solver.ldlt.solve(PfAt.transpose()).transpose();

    const Eigen::VectorXd m_next =
        xi_s[k + 1].head(n) - B * xi_s[k + 1].tail(m);
    xi_s[k] = xi_f[k] + Kk * (m_next - A * xi_f[k].head(n));

    const Eigen::MatrixXd BhP =
        P_s[k + 1].topRows(n) - B * P_s[k + 1].bottomRows(m);  // n x d
    const Eigen::MatrixXd BhPBh =
        BhP.leftCols(n) - BhP.rightCols(m) * B.transpose();  // n x n
    P_s[k] = sym(P_f[k] + Kk * (BhPBh - P_star[k + 1]) * Kk.transpose());
    if (lag_one) {
      const Eigen::MatrixXd PBh =
          P_s[k + 1].leftCols(n) - P_s[k + 1].rightCols(m) * B.transpose();
      (*lag_one)[k] = PBh * Kk.transpose();
    }
  }
}

}  // namespace sks::detail
