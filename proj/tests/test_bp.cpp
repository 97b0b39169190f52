#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "sks/bayesian.hpp"
#include "sks/bp.hpp"
#include "sks/metrics.hpp"
#include "sks/regularized.hpp"
#include "test_util.hpp"

using namespace sks;
using test_util::max_rel_err_seq;
using test_util::randn;

namespace {

LdsModel scalar_model(double a, double b, double c, double d, int K) {
  LdsModel md;
  md.n = md.m = md.p = 1;
  md.K = K;
  md.A = MatSeq(Eigen::MatrixXd::Constant(1, 1, a));
  md.B = MatSeq(Eigen::MatrixXd::Constant(1, 1, b));
  md.C = MatSeq(Eigen::MatrixXd::Constant(1, 1, c));
  md.D = MatSeq(Eigen::MatrixXd::Constant(1, 1, d));
  md.Q = MatSeq(Eigen::MatrixXd::Identity(1, 1));
  md.R = MatSeq(Eigen::MatrixXd::Identity(1, 1));
  return md;
}

}  // namespace

TEST_CASE("stacked system degenerates correctly at K = 1") {
  std::mt19937_64 eng(2);
  const LdsModel md = test_util::random_model(2, 3, 4, 1, eng);
  std::vector<Eigen::VectorXd> y = {randn(4, 1, eng)};
  const StackedSystem s = build_stacked_system(md, y);
  CHECK((s.O - md.C.at(0)).norm() == 0.0);
  CHECK((s.Gamma - md.D.at(0)).norm() == 0.0);
  CHECK(s.M.cols() == 0);
  CHECK((s.Q_tilde - md.R.at(0)).norm() == 0.0);
}

TEST_CASE("stacked system scalar K = 2 block check") {
  const double a = 1.7, b = 0.4, c = 0.9, d = -1.2;
  const LdsModel md = scalar_model(a, b, c, d, 2);
  std::vector<Eigen::VectorXd> y = {Eigen::VectorXd::Zero(1),
                                    Eigen::VectorXd::Zero(1)};
  const StackedSystem s = build_stacked_system(md, y);
  Eigen::MatrixXd expect(2, 2);
  expect << d, 0.0, c * b, d;
  CHECK((s.Gamma - expect).norm() < 1e-15);
  Eigen::MatrixXd O_expect(2, 1);
  O_expect << c, c * a;
  CHECK((s.O - O_expect).norm() < 1e-15);
}

TEST_CASE("stacked identity reproduces simulated measurements") {
  std::mt19937_64 eng(3);
  const LdsModel md = test_util::random_model(3, 2, 3, 6, eng);
  const SparseInputs inputs =
      generate_sparse_inputs(2, 6, 1, 2.0, SupportMode::TimeVarying, 5);
  const SparseTrajectory traj = simulate(md, inputs, 6);
  const StackedSystem s = build_stacked_system(md, traj.y);

  Eigen::VectorXd u_st(6 * 2), w_st(5 * 3), v_st(6 * 3);
  for (int k = 0; k < 6; ++k) u_st.segment(k * 2, 2) = traj.u[k];
  for (int k = 0; k < 5; ++k) w_st.segment(k * 3, 3) = traj.w[k];
  for (int k = 0; k < 6; ++k) v_st.segment(k * 3, 3) = traj.v[k];
  const Eigen::VectorXd y_pred =
      s.O * traj.x[0] + s.Gamma * u_st + s.M * w_st + v_st;
  CHECK((y_pred - s.y_tilde).norm() < 1e-10 * (1.0 + s.y_tilde.norm()));
}

TEST_CASE("projection is idempotent and annihilates the observability range") {
  std::mt19937_64 eng(4);
  const LdsModel md = test_util::random_model(3, 4, 2, 5, eng);
  std::vector<Eigen::VectorXd> y;
  for (int k = 0; k < 5; ++k) y.push_back(randn(2, 1, eng));
  const StackedSystem s = build_stacked_system(md, y);
  const ReducedSystem red = reduce_and_whiten(s);
  CHECK((red.Pi * red.Pi - red.Pi).norm() < 1e-10 * (1.0 + red.Pi.norm()));
  CHECK((red.Pi * s.O).norm() < 1e-10 * (1.0 + s.O.norm()));
  // Full-rank fixture rank rule: R = min(Kp - n, Km) = min(10-3, 20) = 7.
  CHECK(red.rank == 7);
}

TEST_CASE("square invertible observability collapses the reduction") {
  std::mt19937_64 eng(5);
  // Kp = n with invertible O: projection removes everything.
  const LdsModel md = test_util::random_model(2, 2, 2, 1, eng);
  std::vector<Eigen::VectorXd> y = {randn(2, 1, eng)};
  const StackedSystem s = build_stacked_system(md, y);
  CHECK_THROWS_AS(reduce_and_whiten(s), RankCollapse);
}

TEST_CASE("whitened noise covariance is the identity in Monte-Carlo") {
  std::mt19937_64 eng(6);
  const LdsModel md = test_util::random_model(3, 4, 2, 5, eng);
  std::vector<Eigen::VectorXd> y;
  for (int k = 0; k < 5; ++k) y.push_back(randn(2, 1, eng));
  const StackedSystem s = build_stacked_system(md, y);
  const ReducedSystem red = reduce_and_whiten(s);
  const int R = red.rank;

  // Whitener applied to fresh draws of n~ = M w~ + v~.
  Eigen::LLT<Eigen::MatrixXd> qllt(md.Q.at(0)), rllt(md.R.at(0));
  const Eigen::MatrixXd Lq = qllt.matrixL(), Lr = rllt.matrixL();
  const Eigen::MatrixXd W = red.Psi1 * red.Pi;
  Eigen::LLT<Eigen::MatrixXd> qbar_llt(red.Q_bar);
  const Eigen::MatrixXd Lbar = qbar_llt.matrixL();

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(R, R);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    Eigen::VectorXd noise(5 * 2);
    Eigen::VectorXd w_st(4 * 3);
    for (int k = 0; k < 4; ++k)
      w_st.segment(k * 3, 3) = Lq * randn(3, 1, eng);
    Eigen::VectorXd v_st(5 * 2);
    for (int k = 0; k < 5; ++k)
      v_st.segment(k * 2, 2) = Lr * randn(2, 1, eng);
    const Eigen::VectorXd nt = s.M * w_st + v_st;
    const Eigen::VectorXd z =
        Lbar.triangularView<Eigen::Lower>().solve(W * nt);
    acc += z * z.transpose();
  }
  acc /= draws;
  CHECK((acc - Eigen::MatrixXd::Identity(R, R)).norm() <
        0.02 * std::sqrt(static_cast<double>(R)));
}

TEST_CASE("epsilon_default values") {
  CHECK(epsilon_default(100) == doctest::Approx(12.8284271247).epsilon(1e-9));
  CHECK(epsilon_default(2) == doctest::Approx(4.2426406871).epsilon(1e-9));
  CHECK(epsilon_default(8) == doctest::Approx(5.6568542495).epsilon(1e-9));
}

TEST_CASE("bpdn trivial geometry") {
  std::mt19937_64 eng(7);
  // eps >= ||y||: zero is optimal.
  const Eigen::MatrixXd G = randn(4, 6, eng);
  const Eigen::VectorXd y = randn(4, 1, eng);
  const Eigen::VectorXd u0 = bpdn_solve(G, y, y.norm() * 1.01);
  CHECK(u0.norm() < 1e-9);

  // eps = 0 with a square invertible matrix: the unique feasible point.
  const Eigen::MatrixXd Gs = randn(4, 4, eng);
  const Eigen::VectorXd ys = randn(4, 1, eng);
  const Eigen::VectorXd us = bpdn_solve(Gs, ys, 0.0);
  CHECK((Gs * us - ys).norm() < 1e-6 * (1.0 + ys.norm()));
  CHECK((us - Gs.partialPivLu().solve(ys)).norm() < 1e-5);
}

TEST_CASE("bpdn recovers a sparse vector and matches a long reference run") {
  std::mt19937_64 eng(8);
  const Eigen::MatrixXd G = randn(20, 50, eng) / std::sqrt(20.0);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(50);
  truth(4) = 2.0;
  truth(17) = -1.5;
  truth(33) = 1.0;
  const Eigen::VectorXd y = G * truth;
  const double eps = 1e-6;
  const Eigen::VectorXd u = bpdn_solve(G, y, eps);
  CHECK((u - truth).norm() < 1e-3 * truth.norm());
  CHECK((y - G * u).norm() <= eps * (1.0 + 1e-6) + 1e-9);

  BpdnOptions long_opts;
  long_opts.max_iter = 500000;
  long_opts.eps_abs = 1e-14;
  long_opts.eps_rel = 1e-14;
  const Eigen::VectorXd u_ref = bpdn_solve(G, y, eps, {}, long_opts);
  CHECK(std::abs(u.lpNorm<1>() - u_ref.lpNorm<1>()) <
        1e-4 * u_ref.lpNorm<1>());
}

TEST_CASE("bpdn infeasible epsilon is detected") {
  Eigen::MatrixXd G(2, 1);
  G << 1.0, 1.0;
  Eigen::VectorXd y(2);
  y << 1.0, -1.0;
  CHECK_THROWS_AS(bpdn_solve(G, y, 0.1), Infeasible);
}

TEST_CASE("bpdn feasibility is a hard postcondition") {
  std::mt19937_64 eng(9);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::MatrixXd G = randn(10, 30, eng);
    const Eigen::VectorXd y = randn(10, 1, eng);
    const double eps = 0.3;
    BpdnOptions loose;
    loose.max_iter = 40;  // force an early stop
    const Eigen::VectorXd u = bpdn_solve(G, y, eps, {}, loose);
    CHECK((y - G * u).norm() <= eps * (1.0 + 1e-6) + 1e-9);
  }
}

TEST_CASE("wls initial state") {
  std::mt19937_64 eng(10);
  const LdsModel md = test_util::random_model(3, 2, 4, 5, eng);
  const SparseInputs inputs =
      generate_sparse_inputs(2, 5, 1, 3.0, SupportMode::TimeVarying, 11);
  SimulateOptions so;
  so.noise_enabled = false;
  const SparseTrajectory traj = simulate(md, inputs, 12, so);
  const StackedSystem s = build_stacked_system(md, traj.y);

  Eigen::VectorXd u_st(5 * 2);
  for (int k = 0; k < 5; ++k) u_st.segment(k * 2, 2) = traj.u[k];
  // Zero noise and exact inputs: WLS recovers the true initial state.
  const Eigen::VectorXd x1 = wls_initial_state(s, u_st);
  CHECK((x1 - traj.x[0]).norm() < 1e-8 * (1.0 + traj.x[0].norm()));

  // Residual is Q~^-1-orthogonal to range(O).
  std::mt19937_64 eng2(13);
  const SparseTrajectory noisy = simulate(md, inputs, 14);
  const StackedSystem s2 = build_stacked_system(md, noisy.y);
  const Eigen::VectorXd x1n = wls_initial_state(s2, u_st);
  const Eigen::VectorXd resid = s2.y_tilde - s2.O * x1n - s2.Gamma * u_st;
  const Eigen::VectorXd check =
      s2.O.transpose() * s2.Q_tilde.llt().solve(resid);
  CHECK(check.norm() < 1e-8 * (1.0 + resid.norm()));
}

TEST_CASE("wls with orthonormal O and identity noise is a projection") {
  std::mt19937_64 eng(15);
  Eigen::MatrixXd O = randn(6, 2, eng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(O);
  O = qr.householderQ() * Eigen::MatrixXd::Identity(6, 2);
  StackedSystem s;
  s.O = O;
  s.Gamma = randn(6, 4, eng);
  s.Q_tilde = Eigen::MatrixXd::Identity(6, 6);
  s.y_tilde = randn(6, 1, eng);
  const Eigen::VectorXd u = randn(4, 1, eng);
  const Eigen::VectorXd x1 = wls_initial_state(s, u);
  const Eigen::VectorXd expect = O.transpose() * (s.y_tilde - s.Gamma * u);
  CHECK((x1 - expect).norm() < 1e-12);
}

TEST_CASE("known-input smoother equals the classical RTS") {
  std::mt19937_64 eng(16);
  const LdsModel md = test_util::random_stable_model(3, 2, 4, 6, eng);
  const SparseInputs inputs =
      generate_sparse_inputs(2, 6, 2, 2.0, SupportMode::TimeVarying, 17);
  const SparseTrajectory traj = simulate(md, inputs, 18);

  const Eigen::VectorXd x1 = traj.x[0];
  const Eigen::MatrixXd P1 = 0.3 * Eigen::MatrixXd::Identity(3, 3);
  const SmoothingResult mine =
      known_input_smoother(md, traj.y, traj.u, x1, P1);
  const oracles::RtsOut ref = oracles::classical_rts(
      md, traj.y, traj.u, x1, P1, /*seed_is_filtered=*/true);
  // The reference smooths step 1 as well; ours pins it, so compare k >= 2
  // and the pinned step separately.
  CHECK((mine.x[0] - x1).norm() == 0.0);
  for (int k = 1; k < md.K; ++k)
    CHECK(test_util::rel_err(mine.x[k], ref.x[k]) < 1e-10);
}

TEST_CASE("bp pipeline recovers supports exactly without noise") {
  const int n = 4, m = 20, p = 8, K = 5, s = 2;
  const double sigma_u = 5.0;
  int good = 0;
  for (int seed = 0; seed < 10; ++seed) {
    LdsModel md = build_random_system(n, m, p, K, 100 + seed);
    md.set_measurement_noise_std(snr_to_sigma_v(20.0, s, sigma_u));
    const SparseInputs inputs = generate_sparse_inputs(
        m, K, s, sigma_u, SupportMode::TimeVarying, 200 + seed);
    SimulateOptions so;
    so.noise_enabled = false;
    const SparseTrajectory traj = simulate(md, inputs, 300 + seed, so);

    BpOptions opts;
    opts.epsilon = 1e-8;
    const SolverReport rep = bp_rks(md, traj.y, opts);
    double err = 0.0, scale = 0.0;
    for (int k = 0; k < K; ++k) {
      err += (rep.estimate.u[k] - inputs.u[k]).squaredNorm();
      scale += inputs.u[k].squaredNorm();
    }
    if (std::sqrt(err / scale) < 1e-4) ++good;
  }
  CHECK(good >= 9);
}

TEST_CASE("group bp with single-step groups equals plain bp") {
  const int n = 3, m = 8, p = 6, K = 1;
  LdsModel md = build_random_system(n, m, p, K, 42);
  md.set_measurement_noise_std(1.0);
  const SparseInputs inputs =
      generate_sparse_inputs(m, K, 2, 5.0, SupportMode::TimeVarying, 43);
  const SparseTrajectory traj = simulate(md, inputs, 44);
  const SolverReport a = bp_rks(md, traj.y);
  const SolverReport b = group_bp_rks(md, traj.y);
  CHECK(max_rel_err_seq(a.estimate.u, b.estimate.u) < 1e-10);
}

TEST_CASE("bp sits between sbl and the ridge baseline at desk scale") {
  const int n = 6, m = 24, p = 10, K = 8, s = 2;
  const double sigma_u = 5.0;
  double nm_bp = 0, nm_sbl = 0, nm_ridge = 0;
  const int trials = 3;
  for (int t = 0; t < trials; ++t) {
    LdsModel md = build_random_system(n, m, p, K, 700 + t);
    md.set_measurement_noise_std(snr_to_sigma_v(20.0, s, sigma_u));
    const SparseInputs inputs = generate_sparse_inputs(
        m, K, s, sigma_u, SupportMode::TimeVarying, 800 + t);
    const SparseTrajectory traj = simulate(md, inputs, 900 + t);

    nm_bp += nmse(inputs.u, bp_rks(md, traj.y).estimate.u);
    nm_sbl += nmse(inputs.u, sbl_rks(md, traj.y, {}).estimate.u);
    RegOptions ridge;
    ridge.tau = 1.0;
    nm_ridge += nmse(inputs.u, ridge_rks(md, traj.y, ridge).estimate.u);
  }
  CHECK(nm_sbl < nm_bp);
  CHECK(nm_bp < nm_ridge);
}

TEST_CASE("memory guard refuses oversized stacked systems") {
  LdsModel md = build_random_system(2, 600, 400, 20, 1);
  std::vector<Eigen::VectorXd> y(20, Eigen::VectorXd::Zero(400));
  CHECK_THROWS_AS(build_stacked_system(md, y), MemoryLimit);
}
