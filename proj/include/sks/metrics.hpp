#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace sks {

// Pooled normalized mean squared error:
//   sum_k ||truth_k - est_k||^2 / sum_k ||truth_k||^2.
// Sequences are compared over their common prefix (state-only estimators
// return one fewer input). Throws ZeroReference on zero truth energy.
double nmse(const std::vector<Eigen::VectorXd>& truth,
            const std::vector<Eigen::VectorXd>& est);

double to_db(double ratio);

// Average over k of Hamming(true support, estimated support) / m, with the
// estimated support thresholded at 0.8 * sigma_u in magnitude and the true
// support taken from the exact nonzero pattern of true_u.
double fsrr(const std::vector<Eigen::VectorXd>& true_u,
            const std::vector<Eigen::VectorXd>& est_u, double sigma_u);

struct MetricsRecord {
  std::string algo;
  int p = 0, n = 0, m = 0, K = 0, s = 0;
  double snr_db = 0.0;
  long long seed = 0;  // -1 on aggregate rows
  double nmse_state = 0.0;
  double nmse_input = 0.0;
  double fsrr = 0.0;
  double runtime_s = 0.0;
  int iters = 0;
  std::string status = "ok";
};

// Exact column order:
// algo,p,n,m,K,s,snr_db,seed,nmse_state,nmse_input,nmse_state_db,
// nmse_input_db,fsrr,runtime_s,iters,status
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
std::string metrics_to_csv(const std::vector<MetricsRecord>& rows);
std::vector<MetricsRecord> metrics_from_csv(const std::string& csv);

}  // namespace sks
