#include "sks/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sks/linalg.hpp"

namespace sks {

namespace {

void check_seq(const MatSeq& seq, const char* name, int rows, int cols, int K) {
  if (seq.empty())
    throw DimensionMismatch(std::string("model: missing matrix sequence ") + name);
  if (seq.count() != 1 && seq.count() != K)
    throw DimensionMismatch(std::string("model: ") + name +
                            " must have length 1 or K");
  for (const auto& M : seq.raw()) {
    if (M.rows() != rows || M.cols() != cols)
      throw DimensionMismatch(std::string("model: bad dimensions for ") + name);
  }
}

void check_spd(const MatSeq& seq, const char* name) {
  for (const auto& M : seq.raw()) {
    if (!M.isApprox(M.transpose(), 1e-12))
      throw DimensionMismatch(std::string("model: ") + name + " not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
      throw DimensionMismatch(std::string("model: ") + name +
                              " not positive definite");
  }
}

}  // namespace

void LdsModel::validate() const {
  if (n <= 0 || m <= 0 || p <= 0 || K <= 0)
    throw DimensionMismatch("model: dimensions must be positive");
  check_seq(A, "A", n, n, K);
  check_seq(B, "B", n, m, K);
  check_seq(C, "C", p, n, K);
  check_seq(D, "D", p, m, K);
  check_seq(Q, "Q", n, n, K);
  check_seq(R, "R", p, p, K);
  check_spd(Q, "Q");
  check_spd(R, "R");
}

void LdsModel::set_measurement_noise_std(double sigma_v) {
  R = MatSeq(Eigen::MatrixXd(sigma_v * sigma_v *
                             Eigen::MatrixXd::Identity(p, p)));
}

LdsModel build_random_system(int n, int m, int p, int K, std::uint64_t seed) {
  if (n <= 0 || m <= 0 || p <= 0 || K <= 0)
    throw DimensionMismatch("build_random_system: dimensions must be positive");
  std::mt19937_64 eng(mix_seed(seed, 0x5d5));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = gauss(eng);
    return M;
  };
  LdsModel model;
  model.n = n;
  model.m = m;
  model.p = p;
  model.K = K;
  model.A = MatSeq(randn(n, n));
  model.B = MatSeq(randn(n, m));
  model.C = MatSeq(randn(p, n));
  model.D = MatSeq(randn(p, m));
  model.Q = MatSeq(Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n)));
  model.R = MatSeq(Eigen::MatrixXd(Eigen::MatrixXd::Identity(p, p)));
  return model;
}

SparseInputs generate_sparse_inputs(int m, int K, int s, double sigma_u,
                                    SupportMode mode, std::uint64_t seed) {
  if (s > m || s < 0) throw DimensionMismatch("generate_sparse_inputs: need 0 <= s <= m");
  if (m <= 0 || K <= 0)
    throw DimensionMismatch("generate_sparse_inputs: m, K must be positive");
  std::mt19937_64 eng(mix_seed(seed, 0xa11));
  std::normal_distribution<double> gauss(0.0, sigma_u);

  auto draw_support = [&]() {
    // Partial Fisher-Yates over 0..m-1.
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < s; ++i) {
      std::uniform_int_distribution<int> pick(i, m - 1);
      std::swap(idx[i], idx[pick(eng)]);
    }
    std::vector<int> supp(idx.begin(), idx.begin() + s);
    std::sort(supp.begin(), supp.end());
    return supp;
  };

  SparseInputs out;
  std::vector<int> shared;
  if (mode == SupportMode::Joint) shared = draw_support();
  for (int k = 0; k < K; ++k) {
    std::vector<int> supp =
        (mode == SupportMode::Joint) ? shared : draw_support();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
    for (int i : supp) u(i) = gauss(eng);
    out.u.push_back(std::move(u));
    out.supports.push_back(std::move(supp));
  }
  return out;
}

double snr_to_sigma_v(double snr_db, int s, double sigma_u) {
  if (!(s >= 1) || !(sigma_u > 0) || !std::isfinite(snr_db))
    throw ConfigError("snr_to_sigma_v: need finite snr_db, s >= 1, sigma_u > 0");
  return std::sqrt(static_cast<double>(s) * sigma_u * sigma_u /
                   std::pow(10.0, snr_db / 10.0));
}

namespace {

SparseTrajectory simulate_impl(const LdsModel& model, const SparseInputs& inputs,
                               const Eigen::VectorXd* x1, std::uint64_t seed,
                               SimulateOptions opts) {
  model.validate();
  const int K = model.K;
  if (static_cast<int>(inputs.u.size()) != K)
    throw DimensionMismatch("simulate: inputs must have length K");
  for (const auto& u : inputs.u)
    if (u.size() != model.m) throw DimensionMismatch("simulate: bad input length");
  if (x1 && x1->size() != model.n)
    throw DimensionMismatch("simulate: bad x1 length");

  std::mt19937_64 eng(mix_seed(seed, 0x51e));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn_vec = [&](int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = gauss(eng);
    return v;
  };

  SparseTrajectory traj;
  traj.supports = inputs.supports;
  traj.u = inputs.u;
  traj.seed = seed;

  Eigen::VectorXd x = x1 ? *x1 : randn_vec(model.n);
  for (int k = 0; k < K; ++k) {
    traj.x.push_back(x);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(model.p);
    if (opts.noise_enabled) {
      // R_k = L L^T, v = L z.
      Eigen::LLT<Eigen::MatrixXd> llt(model.R.at(k));
      v = llt.matrixL() * randn_vec(model.p);
    }
    traj.v.push_back(v);
    traj.y.push_back(model.C.at(k) * x + model.D.at(k) * inputs.u[k] + v);
    if (k + 1 < K) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(model.n);
      if (opts.noise_enabled) {
        Eigen::LLT<Eigen::MatrixXd> llt(model.Q.at(k));
        w = llt.matrixL() * randn_vec(model.n);
      }
      traj.w.push_back(w);
      x = model.A.at(k) * x + model.B.at(k) * inputs.u[k] + w;
    }
  }
  return traj;
}

}  // namespace

SparseTrajectory simulate(const LdsModel& model, const SparseInputs& inputs,
                          const Eigen::VectorXd& x1, std::uint64_t seed,
                          SimulateOptions opts) {
  return simulate_impl(model, inputs, &x1, seed, opts);
}

SparseTrajectory simulate(const LdsModel& model, const SparseInputs& inputs,
                          std::uint64_t seed, SimulateOptions opts) {
  return simulate_impl(model, inputs, nullptr, seed, opts);
}

std::vector<Eigen::VectorXd> replay_measurements(const LdsModel& model,
                                                 const SparseTrajectory& traj) {
  const int K = model.K;
  std::vector<Eigen::VectorXd> y;
  Eigen::VectorXd x = traj.x.at(0);
  for (int k = 0; k < K; ++k) {
    y.push_back(model.C.at(k) * x + model.D.at(k) * traj.u.at(k) + traj.v.at(k));
    if (k + 1 < K)
      x = model.A.at(k) * x + model.B.at(k) * traj.u.at(k) + traj.w.at(k);
  }
  return y;
}

}  // namespace sks
