#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "sks/errors.hpp"

namespace sks {

// Sequence of per-step matrices. A single entry is broadcast to every step,
// which is how time-invariant systems are stored.
class MatSeq {
 public:
  MatSeq() = default;
  explicit MatSeq(Eigen::MatrixXd single) { mats_.push_back(std::move(single)); }
  explicit MatSeq(std::vector<Eigen::MatrixXd> per_step) : mats_(std::move(per_step)) {}

  const Eigen::MatrixXd& at(int k) const {
    return mats_.size() == 1 ? mats_[0] : mats_.at(static_cast<size_t>(k));
  }
  bool broadcast() const { return mats_.size() == 1; }
  int count() const { return static_cast<int>(mats_.size()); }
  bool empty() const { return mats_.empty(); }
  const std::vector<Eigen::MatrixXd>& raw() const { return mats_; }

 private:
  std::vector<Eigen::MatrixXd> mats_;
};

// Discrete-time linear dynamical system
//   x_{k+1} = A_k x_k + B_k u_k + w_k,   w_k ~ N(0, Q_k)
//   y_k     = C_k x_k + D_k u_k + v_k,   v_k ~ N(0, R_k)
// with k = 1..K. D may be all-zero for the state-only measurement model.
struct LdsModel {
  int n = 0;  // state dimension
  int m = 0;  // input dimension
  int p = 0;  // measurement dimension
  int K = 0;  // horizon length
  MatSeq A, B, C, D, Q, R;

  // Checks dimensions, sequence lengths (1 or K) and that every Q_k, R_k is
  // symmetric positive definite. Throws on violation.
  void validate() const;

  // R_k = sigma_v^2 * I for all k.
  void set_measurement_noise_std(double sigma_v);

  bool time_invariant() const {
    return A.broadcast() && B.broadcast() && C.broadcast() && D.broadcast() &&
           Q.broadcast() && R.broadcast();
  }
};

// Time-invariant system with i.i.d. standard normal entries in A, B, C, D
// and Q = I, R = I (scale R afterwards via set_measurement_noise_std).
LdsModel build_random_system(int n, int m, int p, int K, std::uint64_t seed);

enum class SupportMode { TimeVarying, Joint };

struct SparseInputs {
  std::vector<Eigen::VectorXd> u;          // K vectors of length m
  std::vector<std::vector<int>> supports;  // sorted index sets, |S_k| = s
};

// Each u_k has exactly s nonzeros at uniformly random locations, values
// drawn N(0, sigma_u^2). Joint mode reuses one support for every step.
SparseInputs generate_sparse_inputs(int m, int K, int s, double sigma_u,
                                    SupportMode mode, std::uint64_t seed);

// sigma_v from the measurement SNR relation snr = s * sigma_u^2 / sigma_v^2.
double snr_to_sigma_v(double snr_db, int s, double sigma_u);

struct SparseTrajectory {
  std::vector<Eigen::VectorXd> x;  // K states
  std::vector<Eigen::VectorXd> u;  // K inputs
  std::vector<Eigen::VectorXd> y;  // K measurements
  std::vector<Eigen::VectorXd> w;  // K-1 process noise draws
  std::vector<Eigen::VectorXd> v;  // K measurement noise draws
  std::vector<std::vector<int>> supports;
  double sigma_u = 0.0;
  double sigma_v = 0.0;
  std::uint64_t seed = 0;
};

struct SimulateOptions {
  // When false, w and v are exactly zero during simulation. Estimators still
  // receive the nominal positive definite Q, R from the model.
  bool noise_enabled = true;
};

SparseTrajectory simulate(const LdsModel& model, const SparseInputs& inputs,
                          const Eigen::VectorXd& x1, std::uint64_t seed,
                          SimulateOptions opts = {});

// x1 drawn i.i.d. standard normal from the same seed stream.
SparseTrajectory simulate(const LdsModel& model, const SparseInputs& inputs,
                          std::uint64_t seed, SimulateOptions opts = {});

// Recompute measurements from the recorded states, inputs and noise.
std::vector<Eigen::VectorXd> replay_measurements(const LdsModel& model,
                                                 const SparseTrajectory& traj);

}  // namespace sks
