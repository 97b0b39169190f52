#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sks/model.hpp"

namespace sks {

// Filtering gain matrices of the direct-feedthrough smoother:
//   J = (D^T R^-1 D)^-1 D^T R^-1
//   L = P C^T (R + C P C^T)^-1
//   G = [ (I - L D J C)^-1 L (I - D J) ; (I - J C L D)^-1 J (I - C L) ]
// They satisfy J D = I_m and G D = [0; I_m].
struct Gains {
  Eigen::MatrixXd J;  // m x p
  Eigen::MatrixXd L;  // n x p
  Eigen::MatrixXd G;  // (n+m) x p
};

// Throws SingularFeedthrough when D is column rank deficient (smallest
// singular value below 1e-10 of the largest, or p < m).
Gains compute_gains(const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                    const Eigen::MatrixXd& R, const Eigen::MatrixXd& P_x_pred);

enum class MeasurementMode { DirectFeedthrough, StateOnly };

struct RksOptions {
  // P^xi_{0|0}. (n+m)x(n+m) for the direct-feedthrough smoother; for the
  // state-only recursion only the top-left n x n block is used as the prior
  // covariance of x_1. Empty means identity.
  Eigen::MatrixXd P0;
  bool collect_diagnostics = false;
  bool want_lag_one = false;
};

// Joint smoothed estimates of states and inputs. For the direct-feedthrough
// model u has K entries and P_xi[k] is Cov([x_k; u_k] | Y). For the
// state-only model u has K-1 entries, P_xi[k] is Cov([x_k; u_{k-1}] | Y)
// (the u_0 block of P_xi[0] is identically zero), and P_u[k] is the
// covariance of u_{k+1-1} = u_k aligned with the u vector.
struct SmoothingResult {
  std::vector<Eigen::VectorXd> x;
  std::vector<Eigen::VectorXd> u;
  std::vector<Eigen::MatrixXd> P_xi;
  std::vector<Eigen::MatrixXd> P_x;  // state marginal per step
  std::vector<Eigen::MatrixXd> P_u;  // input marginal, aligned with u
  std::vector<Eigen::MatrixXd> lag_one;  // Cov(xi_{k+1}, xi_k | Y), size K-1

  // Diagnostics, filled when RksOptions::collect_diagnostics is set.
  std::vector<Eigen::VectorXd> x_filt, u_filt;
  std::vector<Eigen::MatrixXd> P_xi_filt;
  std::vector<Eigen::MatrixXd> J_gain, G_gain;
  std::vector<double> innovation_norm;
  bool prediction_regularized = false;
};

// Recursive minimizer of the joint MAP cost
//   sum_k ||y_k - C_k x_k - D_k u_k||^2_{R_k^-1}
//     + sum_{k<K} ||x_{k+1} - A_k x_k - B_k u_k||^2_{Q_k^-1}
// via forward filtering and backward smoothing. Requires full column rank
// D_k (p >= m). The step-1 prediction uses the step-1 system matrices with
// Q_0 = 0, so the implied prior on x_1 is N(0, [A_1 B_1] P0 [A_1 B_1]^T).
SmoothingResult rks_smooth(const LdsModel& model,
                           const std::vector<Eigen::VectorXd>& y,
                           const RksOptions& opts = {});

// Recursion for measurements y_k = C_k x_k + v_k (no feedthrough); inputs
// are estimable only up to step K-1. Steps with B_{k-1} exactly zero reduce
// to the classical Kalman update.
SmoothingResult rks_smooth_state_only(const LdsModel& model,
                                      const std::vector<Eigen::VectorXd>& y,
                                      const RksOptions& opts = {});

// Dense normal-equations solve of the same MAP cost over the stacked
// unknown [x_1..x_K, u_1..u_K] (or [x_1..x_K, u_1..u_{K-1}] in state-only
// mode). Exact minimizer and exact posterior covariances; intended for
// K*(n+m) <= 2000. ridge adds ridge*I to the Hessian.
SmoothingResult batch_map_oracle(const LdsModel& model,
                                 const std::vector<Eigen::VectorXd>& y,
                                 MeasurementMode mode,
                                 const RksOptions& opts = {},
                                 double ridge = 0.0);

}  // namespace sks
