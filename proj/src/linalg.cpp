#include "sks/linalg.hpp"

#include <cmath>

#include "sks/errors.hpp"

namespace sks {

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw SingularGram("spd_inverse: matrix is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
}

double spd_logdet(const Eigen::MatrixXd& A) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw SingularGram("spd_logdet: matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

bool is_psd(const Eigen::MatrixXd& P, double tol_scale) {
  const Eigen::MatrixXd S = symmetrized(P);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return false;
  const double scale = S.norm();
  return es.eigenvalues().minCoeff() >= -tol_scale * (scale > 0 ? scale : 1.0);
}

double digamma(double x) {
  // Recurrence up to x >= 6, then the asymptotic series.
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
  return result;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace sks
