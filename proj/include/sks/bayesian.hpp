#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sks/model.hpp"
#include "sks/report.hpp"

namespace sks {

// xi_{k+1} = A_bar xi_k + [w_k; z_k] with z_k = u_{k+1},
// y_k = C_bar xi_k + v_k, Cov([w;z]) = Q_bar.
struct AugmentedModel {
  Eigen::MatrixXd A_bar;  // (n+m) x (n+m) = [[A,B],[0,0]]
  Eigen::MatrixXd C_bar;  // p x (n+m)    = [C, D]
  Eigen::MatrixXd Q_bar;  // blkdiag(Q_k, diag(gamma_{k+1}))
};
AugmentedModel make_augmented(const LdsModel& model, int k,
                              const Eigen::VectorXd& gamma_next);

// M-step of the evidence maximization: gamma(i) = u_hat(i)^2 + P_u(i,i),
// floored at gamma_floor.
Eigen::VectorXd sbl_mstep(const Eigen::VectorXd& u_hat,
                          const Eigen::MatrixXd& P_u,
                          double gamma_floor = 1e-10);

struct SblOptions {
  int r_max = 30;
  double eps_thres = 1e-6;    // stop on max relative gamma change
  double gamma_floor = 1e-10;
  double cov_blowup = 1e12;
  bool joint = false;         // one gamma shared across steps (MMV variant)
  bool freeze_gamma = false;  // run E-steps only, keep gamma at gamma0
  std::vector<Eigen::VectorXd> gamma0;  // empty = all-ones
  Eigen::MatrixXd P0;                   // P^xi_{0|0}, default identity
  bool want_lag_one = false;
};

// Evidence-maximization smoother: per-entry Gaussian prior variances gamma
// learned by EM, E-step = Kalman filter/RTS smoother on the augmented model.
// The report's objective_trace carries the marginal log-likelihood computed
// from the filter innovations; it is non-decreasing across iterations.
SolverReport sbl_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                     const SblOptions& opts = {});

// Jointly sparse variant: one gamma shared across k, M-step averages the
// per-step second moments.
SolverReport msbl_rks(const LdsModel& model,
                      const std::vector<Eigen::VectorXd>& y,
                      const SblOptions& opts = {});

// Variant for measurements y_k = C_k x_k + v_k: filter on [x_k; u_{k-1}]
// with the input prior folded into the gain, then the [A,0]/[I,-B] smoother.
// Estimates inputs up to step K-1.
SolverReport sbl_rks_state_meas(const LdsModel& model,
                                const std::vector<Eigen::VectorXd>& y,
                                const SblOptions& opts = {});

// Mean-field state of the variational smoother. beta holds the precision
// means <beta_k>; b_tilde the Gamma rate parameters of q(beta_k) (shape is
// a + 1/2). In joint mode both have a single shared entry.
struct VbState {
  std::vector<Eigen::VectorXd> mean_x, mean_u;
  std::vector<Eigen::MatrixXd> P_x, P_u;
  std::vector<Eigen::VectorXd> beta;
  std::vector<Eigen::VectorXd> b_tilde;
  std::vector<Eigen::VectorXd> y;
  bool joint = false;
  bool drop_terminal_coupling = false;
  double beta_ceiling = 1e12;
};

VbState vb_init(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                bool joint = false, bool drop_terminal_coupling = false);

// Coordinate updates of the factorized posterior; k is zero-based.
void vb_update_x(int k, VbState& state, const LdsModel& model);
void vb_update_u(int k, VbState& state, const LdsModel& model);
void vb_update_beta(int k, VbState& state, double a, double b);
void vb_update_beta_shared(VbState& state, double a, double b);

// Evidence lower bound of the factorized family; with frozen beta the Gamma
// factors are treated as fixed parameters.
double vb_elbo(const VbState& state, const LdsModel& model, double a, double b,
               bool beta_frozen = false);

struct VbOptions {
  double a = 1e-6;  // Gamma shape hyperprior
  double b = 1e-6;  // Gamma rate hyperprior
  int r_max = 30;
  int r_tilde_max = 3;
  bool joint = false;  // shared beta (MMV variant)
  bool freeze_beta = false;
  bool drop_terminal_coupling = false;
  double beta_ceiling = 1e12;
  std::vector<Eigen::VectorXd> beta0;  // empty = all-ones
};

// Mean-field coordinate-ascent smoother with Gamma hyperpriors on the input
// precisions. objective_trace carries the ELBO per outer iteration.
SolverReport vb_rks(const LdsModel& model, const std::vector<Eigen::VectorXd>& y,
                    const VbOptions& opts = {});

}  // namespace sks
