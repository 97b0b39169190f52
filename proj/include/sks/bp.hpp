#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sks/model.hpp"
#include "sks/report.hpp"

namespace sks {

// Batch form of a time-invariant system over the whole horizon:
//   y~ = O x_1 + Gamma u~ + M w~ + v~
struct StackedSystem {
  Eigen::VectorXd y_tilde;  // K*p
  Eigen::MatrixXd O;        // K*p x n observability matrix
  Eigen::MatrixXd Gamma;    // K*p x K*m block lower triangular
  Eigen::MatrixXd M;        // K*p x (K-1)*n noise propagation
  Eigen::MatrixXd Q_tilde;  // K*p x K*p stacked noise covariance
  int n = 0, m = 0, p = 0, K = 0;
};

// Refuses instances with K*p * K*m > 5e7 entries.
StackedSystem build_stacked_system(const LdsModel& model,
                                   const std::vector<Eigen::VectorXd>& y);

// Projection onto the orthogonal complement of range(O), rank reduction of
// Pi*Gamma by SVD, and prewhitening with Q_bar^{-1/2} (inverse Cholesky
// factor). The whitened noise has identity covariance by construction.
struct ReducedSystem {
  Eigen::VectorXd y_bar;      // R
  Eigen::MatrixXd Gamma_bar;  // R x K*m
  int rank = 0;               // R
  Eigen::MatrixXd Pi;         // K*p x K*p projector
  Eigen::MatrixXd Psi1;       // R x K*p left singular vectors (rows)
  Eigen::VectorXd Lambda;     // R singular values
  Eigen::MatrixXd Phi1;       // R x K*m right singular vectors (rows)
  Eigen::MatrixXd Q_bar;      // R x R reduced noise covariance
};
ReducedSystem reduce_and_whiten(const StackedSystem& stacked);

// epsilon = sqrt(R) * (1 + 2*sqrt(2/R))
double epsilon_default(int R);

struct BpdnMode {
  bool group = false;  // block shrinkage of coordinate rows across time
  int K = 0;           // required in group mode
  int m = 0;
};

struct BpdnOptions {
  double rho = 1.0;
  int max_iter = 5000;
  double eps_abs = 1e-8;
  double eps_rel = 1e-6;
};

// min ||u||_1 (or the row-group norm) s.t. ||y_bar - Gamma_bar u|| <= eps,
// by ADMM with projection onto the residual ball. The returned point is
// always feasible; throws Infeasible when eps is below the least-squares
// residual. Deterministic for fixed inputs.
Eigen::VectorXd bpdn_solve(const Eigen::MatrixXd& Gamma_bar,
                           const Eigen::VectorXd& y_bar, double epsilon,
                           const BpdnMode& mode = {},
                           const BpdnOptions& opts = {});

// Weighted least squares x_1 = (O^T Q~^-1 O)^-1 O^T Q~^-1 (y~ - Gamma u*).
Eigen::VectorXd wls_initial_state(const StackedSystem& stacked,
                                  const Eigen::VectorXd& u_star);

// Kalman filter / RTS smoother with known inputs, pinned at
// x_{1|K} = x_{1|1} = x1 with covariance P1. The backward sweep applies the
// correction term P (I - K A)^T A^T Q^-1 B u_k.
SmoothingResult known_input_smoother(const LdsModel& model,
                                     const std::vector<Eigen::VectorXd>& y,
                                     const std::vector<Eigen::VectorXd>& u,
                                     const Eigen::VectorXd& x1,
                                     const Eigen::MatrixXd& P1);

struct BpOptions {
  double epsilon = -1.0;  // < 0 selects epsilon_default(R)
  BpdnOptions bpdn;
  Eigen::MatrixXd P0;  // unused placeholder for interface parity
};

// Full pipeline: stack, project, whiten, basis-pursuit input recovery, WLS
// initial state, then the known-input Kalman smoother. The smoother is
// seeded with x_{1|1} = x_1* and P^x_{1|1} = (O^T Q~^-1 O)^-1.
SolverReport bp_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const BpOptions& opts = {});

// Group variant for jointly sparse inputs.
SolverReport group_bp_rks(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const BpOptions& opts = {});

}  // namespace sks
