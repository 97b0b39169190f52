#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace sks {

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& P) {
  return 0.5 * (P + P.transpose());
}

// Inverse of a symmetric positive definite matrix via Cholesky.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A);

// log det of an SPD matrix via Cholesky.
double spd_logdet(const Eigen::MatrixXd& A);

// Eigenvalues of the symmetric part >= -tol_scale * ||P||.
bool is_psd(const Eigen::MatrixXd& P, double tol_scale = 1e-8);

double digamma(double x);

// Derives independent sub-seeds from a base seed (splitmix64 step).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace sks
