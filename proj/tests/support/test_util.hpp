#pragma once

// Shared helpers for the test suites.

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "sks/model.hpp"

namespace test_util {

inline Eigen::MatrixXd randn(int r, int c, std::mt19937_64& eng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = g(eng);
  return M;
}

inline Eigen::MatrixXd random_spd(int d, std::mt19937_64& eng,
                                  double ridge = 0.5) {
  const Eigen::MatrixXd G = randn(d, d, eng);
  return G * G.transpose() / d + ridge * Eigen::MatrixXd::Identity(d, d);
}

// Random time-invariant model with SPD Q, R (not the benchmark generator;
// exercises arbitrary covariances).
inline sks::LdsModel random_model(int n, int m, int p, int K,
                                  std::mt19937_64& eng) {
  sks::LdsModel md;
  md.n = n;
  md.m = m;
  md.p = p;
  md.K = K;
  md.A = sks::MatSeq(randn(n, n, eng));
  md.B = sks::MatSeq(randn(n, m, eng));
  md.C = sks::MatSeq(randn(p, n, eng));
  md.D = sks::MatSeq(randn(p, m, eng));
  md.Q = sks::MatSeq(random_spd(n, eng));
  md.R = sks::MatSeq(random_spd(p, eng));
  return md;
}

// As random_model but with A rescaled to spectral radius 0.95, so the state
// (and the covariances) stay O(1) over the horizon and route-equivalence
// checks are not dominated by conditioning.
inline sks::LdsModel random_stable_model(int n, int m, int p, int K,
                                         std::mt19937_64& eng) {
  sks::LdsModel md = random_model(n, m, p, K, eng);
  Eigen::MatrixXd A = md.A.at(0);
  const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
  if (rho > 1e-12) A *= 0.95 / rho;
  md.A = sks::MatSeq(A);
  return md;
}

// Remaps the singular values of M linearly into [lo, hi].
inline Eigen::MatrixXd conditioned(const Eigen::MatrixXd& M, double lo,
                                   double hi) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sv = svd.singularValues();
  const double smin = sv.minCoeff(), smax = sv.maxCoeff();
  for (int i = 0; i < sv.size(); ++i)
    sv(i) = smax > smin
                ? lo + (hi - lo) * (sv(i) - smin) / (smax - smin)
                : hi;
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

// Instance family for route-equivalence checks: stable A and a
// well-conditioned feedthrough, so the comparison is not dominated by the
// condition number of an exploding covariance.
inline sks::LdsModel random_equiv_model(int n, int m, int p, int K,
                                        std::mt19937_64& eng) {
  sks::LdsModel md = random_stable_model(n, m, p, K, eng);
  md.D = sks::MatSeq(conditioned(md.D.at(0), 1.0, 2.0));
  return md;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

inline double max_rel_err_seq(const std::vector<Eigen::VectorXd>& a,
                              const std::vector<Eigen::VectorXd>& b) {
  double scale = 0.0, err = 0.0;
  const size_t K = std::min(a.size(), b.size());
  for (size_t k = 0; k < K; ++k) {
    scale = std::max(scale, b[k].norm());
    err = std::max(err, (a[k] - b[k]).norm());
  }
  return err / std::max(scale, 1e-300);
}

}  // namespace test_util
