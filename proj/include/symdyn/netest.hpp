#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symdyn/model.hpp"

namespace symdyn::netest {

// Tie-corrected Kendall tau-b. Returns NaN when either vector is constant
// (tie-correction denominator is zero). Throws ValidationError on length
// mismatch or fewer than 2 elements.
double kendall_tau_b(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Pairwise tau-b over the columns of an n x k data matrix. Diagonal is 1,
// constant columns give 0 off-diagonal entries (reported via
// `zero_variance_out` when non-null). Throws DegenerateInputError when every
// column is constant.
Eigen::MatrixXd kendall_matrix(const Eigen::MatrixXd& data,
                               std::vector<int>* zero_variance_out = nullptr);
Eigen::MatrixXd kendall_matrix(const model::SymptomSeries& series,
                               std::vector<int>* zero_variance_out = nullptr);

struct RidgeInfo {
  double amount = 0.0;           // uniform diagonal inflation applied
  double min_eigenvalue = 0.0;   // before inflation
  double condition_number = 0.0; // after inflation
};

// Partial correlations via precision-matrix inversion:
//   p_ij = -q_ij / sqrt(q_ii * q_jj),  q = inv(r).
// If the smallest eigenvalue of r is below `ridge_target`, the minimal uniform
// diagonal inflation reaching it is added first (recorded in `info`). Throws
// NonInvertibleError when more than `ridge_cap` inflation would be needed, and
// ValidationError when r is not symmetric.
Eigen::MatrixXd partial_from_correlation(const Eigen::MatrixXd& r,
                                         double ridge_target = 1e-6,
                                         double ridge_cap = 0.1,
                                         RidgeInfo* info = nullptr);

// Two-sided p-values for partial Kendall coefficients using the normal
// approximation with n_eff = n - g:
//   z = p_ij * sqrt(9 n_eff (n_eff - 1) / (2 (2 n_eff + 5)))
// Throws InsufficientDataError unless n > g + 2.
Eigen::MatrixXd partial_significance(const Eigen::MatrixXd& partial, int n, int g);

// Permutation alternative: per cell (i, j), permutes column j's time order,
// recomputes that column's Kendall correlations and the partial matrix, and
// counts two-sided exceedances. Deterministic for a fixed seed; each cell
// draws from its own (seed, i, j) stream.
Eigen::MatrixXd partial_significance_permutation(const Eigen::MatrixXd& data,
                                                 int iterations, std::uint64_t seed,
                                                 double ridge_target = 1e-6,
                                                 double ridge_cap = 0.1);

// Benjamini-Yekutieli step-up at level alpha: reject p_(k) when
// p_(k) <= k * alpha / (m * c(m)), c(m) = sum_{i<=m} 1/i. Returns rejection
// flags in input order; empty input gives empty output.
std::vector<bool> fdr_by(const std::vector<double>& pvalues, double alpha = 0.05);

enum class SignificanceBackend { analytic, permutation };

struct NetworkConfig {
  double ridge_target = 1e-6;
  double ridge_cap = 0.1;
  double alpha = 0.05;
  SignificanceBackend backend = SignificanceBackend::analytic;
  int permutations = 500;
  std::uint64_t seed = 0;
};

struct NetworkDiagnostics {
  std::vector<int> zero_variance_items;  // 0-based item indices
  double ridge_applied = 0.0;
  double min_eigenvalue = 0.0;
  double condition_number = 0.0;
  int n_tests = 0;
  std::string backend_used;  // "analytic" or "permutation" (+ fallback note)
};

struct SymptomNetwork {
  Eigen::MatrixXd a;        // symmetric, zero diagonal, masked partials
  Eigen::MatrixXd pvalues;  // two-sided, diagonal 0
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  int n_obs = 0;
  NetworkDiagnostics diagnostics;

  int size() const { return static_cast<int>(a.rows()); }
};

// Full pipeline: Kendall matrix -> partial correlations -> significance ->
// BY-FDR over the k(k-1)/2 unique off-diagonal cells. Entries failing the mask
// are set to 0. When the analytic backend is selected but n <= g + 2, the
// permutation backend is used instead and the fallback is recorded in the
// diagnostics. Throws DegenerateInputError / NonInvertibleError, which callers
// record as patient exclusions.
SymptomNetwork estimate_network(const Eigen::MatrixXd& data,
                                const NetworkConfig& cfg = {});
SymptomNetwork estimate_network(const model::SymptomSeries& series,
                                const NetworkConfig& cfg = {});

}  // namespace symdyn::netest
