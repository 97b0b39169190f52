#pragma once

#include <stdexcept>
#include <string>

namespace sks {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// D_k^T R_k^-1 D_k is numerically singular: the input is not identifiable
// from the current measurement alone, use a sparsity-aware estimator.
struct SingularFeedthrough : Error { using Error::Error; };

struct DimensionMismatch : Error { using Error::Error; };

// B^T (P*)^-1 B singular in the state-only input recursion.
struct SingularInputGram : Error { using Error::Error; };

struct SingularHessian : Error { using Error::Error; };
struct SingularGram : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct CovarianceBlowup : Error { using Error::Error; };
struct ZeroReference : Error { using Error::Error; };
struct Infeasible : Error { using Error::Error; };
struct RankCollapse : Error { using Error::Error; };
struct MemoryLimit : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace sks
