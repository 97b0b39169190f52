#pragma once

#include <vector>

#include "sks/rks.hpp"

namespace sks {

// Estimates plus the iteration trace of the producing solver.
struct SolverReport {
  SmoothingResult estimate;
  std::vector<double> objective_trace;  // objective / marginal log-likelihood
  std::vector<double> primal_residual;  // ADMM solvers only
  std::vector<double> dual_residual;
  std::vector<double> param_delta;      // per-iteration iterate or hyperparameter change
  int iterations = 0;
  double runtime_s = 0.0;
};

}  // namespace sks
