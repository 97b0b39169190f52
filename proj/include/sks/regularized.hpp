#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sks/model.hpp"
#include "sks/report.hpp"

namespace sks {

// Entry-wise soft thresholding S_b(a) = sgn(a) * max(|a| - b, 0).
double soft_threshold(double a, double b);
Eigen::VectorXd soft_threshold(const Eigen::VectorXd& a, double b);

// Diagonal of the reweighting matrix diag(max(|u_prev|, epsilon_w))^(2-l).
Eigen::VectorXd weight_matrix(const Eigen::VectorXd& u_prev, double l,
                              double epsilon_w);

struct RegOptions {
  double tau = 1.0;             // regularization weight, broadcast across steps
  std::vector<double> tau_k;    // optional per-step override (l1 only)
  double c = 1.0;               // ADMM penalty scalar
  double l = 1.0;               // exponent for the reweighted-l2 scheme, in (0,2)
  double epsilon_w = 1e-8;      // reweighting floor, keeps the modified R SPD
  int r_max = 30;
  // Early exit when max_k ||u_k^{(r)} - u_k^{(r-1)}||_inf falls below this;
  // 0 disables. The benchmark wires 1e-7 * sigma_u here.
  double early_stop_tol = 0.0;
  Eigen::MatrixXd P0;           // forwarded to the inner smoother
};

// ADMM on the l1-regularized smoothing cost. Each iteration augments the
// measurements with the split variable and solves one pass of rks_smooth on
// the model (C~ = [C;0], D~ = [D;I], R~ = blkdiag(R, I/c)); then applies the
// soft-threshold t-update and the dual ascent step. Works for any p since
// D~ always has full column rank.
SolverReport l1_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const RegOptions& opts);

// Row-wise group variant for jointly sparse inputs: the t-update shrinks
// whole coordinate rows t(i,:) across time. Single scalar tau.
SolverReport group_l1_rks(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const RegOptions& opts);

// Majorize-minimize scheme for the |u|^l penalty, 0 < l < 2: each iteration
// re-solves the smoother with R~ = blkdiag(R, (2/(tau*l)) * W_k) and
// W_k = diag(max(|u_k^{(r-1)}|, epsilon_w))^(2-l). The traced objective
// (quadratic cost + tau * sum |u|^l) is non-increasing.
SolverReport reweighted_l2_rks(const LdsModel& model,
                               const std::vector<Eigen::VectorXd>& y,
                               const RegOptions& opts);

// Fixed Tikhonov baseline: one smoother pass with the penalty tau*||u_k||^2.
// This is the p < m stand-in for the plain smoother.
SolverReport ridge_rks(const LdsModel& model,
                       const std::vector<Eigen::VectorXd>& y,
                       const RegOptions& opts);

// Quadratic part of the smoothing cost at (x, u), including the x_1 prior
// term implied by P0; used for objective traces and stationarity checks.
double map_quadratic_cost(const LdsModel& model,
                          const std::vector<Eigen::VectorXd>& y,
                          const std::vector<Eigen::VectorXd>& x,
                          const std::vector<Eigen::VectorXd>& u,
                          const Eigen::MatrixXd& P0 = {});

}  // namespace sks
