#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symdyn/model.hpp"
#include "symdyn/netest.hpp"

namespace symdyn::control {

// Input matrix specification: identity over all nodes (default), a node
// subset (one unit column per node), or an explicit matrix.
struct InputSpec {
  std::optional<std::vector<int>> nodes;       // 0-based
  std::optional<Eigen::MatrixXd> matrix;

  Eigen::MatrixXd materialize(int n) const;
};

struct ControlConfig {
  double horizon = 1.0;        // T
  double rho = 1.0;            // input-cost weight
  bool use_state_cost = false; // S = I when true, S = 0 otherwise
  InputSpec input;
  double step = 0.001;
  // Relative boundary tolerance: converged requires
  //   ||x(T) - x_T|| <= boundary_tol * (1 + ||x0||).
  double boundary_tol = 1e-5;
  bool normalize_a = false;    // replace A by A / (1 + |lambda_max|) - I
  double solve_residual_tol = 1e-6;

  void validate() const;  // throws ValidationError
};

struct ControlTrajectory {
  Eigen::VectorXd times;   // 0..T at spacing `step`
  Eigen::MatrixXd x;       // (#times) x n states
  Eigen::MatrixXd u;       // (#times) x m inputs
  double energy = 0.0;     // trapezoidal integral of u'u
  double boundary_error = 0.0;
  bool converged = false;
};

// Solves the linear-quadratic two-point boundary-value problem through the
// Hamiltonian block matrix
//   H = [[A, -(1/(2 rho)) B B'], [-2 S, -A']],
// solves E12 p0 = x_T - E11 x0 (- affine term when S x_T != 0) for the initial
// costate with E = exp(H T), then steps states/costates on the grid with
// u = -(1/(2 rho)) B' p. Throws NonConvergentError when the costate solve is
// rank-deficient or its residual exceeds cfg.solve_residual_tol, and
// NumericalOverflowError when the trajectory leaves the finite range.
ControlTrajectory optimal_control(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  const Eigen::VectorXd& x0, const Eigen::VectorXd& xt,
                                  const ControlConfig& cfg = {});

struct GramianEnergy {
  double energy = 0.0;
  Eigen::VectorXd times;
  Eigen::MatrixXd u;  // minimum-energy input sampled on the grid
  double gramian_condition = 0.0;
};

// Closed-form minimum-energy oracle for the S = 0 problem:
//   W_T = integral_0^T exp(A s) B B' exp(A' s) ds   (Van Loan block exponential)
//   u*(t) = B' exp(A'(T - t)) W_T^{-1} (x_T - exp(A T) x0)
//   energy = (x_T - exp(A T) x0)' W_T^{-1} (x_T - exp(A T) x0).
// Throws IllConditionedError when cond(W_T) exceeds `condition_threshold`.
GramianEnergy min_energy_gramian(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 const Eigen::VectorXd& x0, const Eigen::VectorXd& xt,
                                 double horizon, int grid_steps = 1000,
                                 double condition_threshold = 1e12);

struct EnergyResult {
  double e0 = 0.0;
  bool converged = false;
  double boundary_error = 0.0;
  bool normalized_a = false;  // echoed from config, recorded in exports
};

// E0: optimal-control energy from the current symptom state to the all-zero
// state on the network's interaction matrix.
EnergyResult energy_to_zero(const netest::SymptomNetwork& network,
                            const Eigen::VectorXd& x0, const ControlConfig& cfg = {});

struct EnergyPoint {
  int obs_index = 0;
  double day = 0.0;
  int bdi_sum = 0;
  double e0 = 0.0;
  bool converged = false;
  double boundary_error = 0.0;
};

struct EnergySeries {
  std::string patient_id;
  std::vector<EnergyPoint> points;
  bool excluded = false;        // any non-convergent point excludes the patient
  std::string exclusion_reason;
  bool normalized_a = false;
};

// E0 at every observation of the series. Non-convergence is recorded, not
// thrown; `excluded` mirrors the clinical bookkeeping.
EnergySeries energy_series(const model::SymptomSeries& series,
                           const netest::SymptomNetwork& network,
                           const ControlConfig& cfg = {});

struct EigenvalueMultiplicity {
  std::complex<double> value;
  int geometric_multiplicity = 0;
};

struct ControllabilityResult {
  std::vector<EigenvalueMultiplicity> table;  // distinct eigenvalues
  int n_d = 0;                                // max geometric multiplicity
  std::complex<double> lambda_m;              // maximizing eigenvalue
};

// Exact controllability: N_D = max_i mu(lambda_i), mu(lambda) =
// N - rank(lambda I - A). Distinct eigenvalues are clustered within
// rank_tol * max(1, spectral radius); ranks use singular values with threshold
// rank_tol * sigma_max. Ties for the maximum multiplicity resolve to the
// eigenvalue with the largest magnitude, then positive real part first.
ControllabilityResult exact_controllability(const Eigen::MatrixXd& a,
                                            double rank_tol = 1e-8);

struct DriverAnalysis {
  int n_nodes = 0;
  std::vector<EigenvalueMultiplicity> eigenvalues;
  std::complex<double> lambda_m;
  int n_d = 0;
  std::vector<int> drivers;  // sorted 0-based node indices, |drivers| == n_d
  bool pbh_lambda_m = false;
  bool pbh_all = false;
};

// Picks the n_d linearly dependent rows of (lambda_M I - A) by an in-order
// rank-revealing sweep (lowest-index rows are preferred as pivots), builds B
// with one unit column per driver and verifies rank([lambda_M I - A, B]) = N.
// pbh_all additionally checks every distinct eigenvalue.
DriverAnalysis select_driver_nodes(const Eigen::MatrixXd& a, double rank_tol = 1e-8);

struct PbhReport {
  bool controllable = false;
  std::vector<std::pair<std::complex<double>, bool>> per_eigenvalue;
};

// PBH test: rank([lambda I - A, B]) = N for every distinct eigenvalue of A.
PbhReport pbh_verify(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                     double rank_tol = 1e-8);

struct DriverSummary {
  int n_networks = 0;
  double median_n_d = 0.0;
  int min_n_d = 0;
  int max_n_d = 0;
  std::vector<int> item_driver_counts;  // per node, how many networks use it
  std::vector<int> ranking;             // node indices by descending count
};

DriverSummary driver_summary(const std::vector<DriverAnalysis>& analyses);

// Matrix exponential helper shared by the solvers (scaling-and-squaring Pade).
Eigen::MatrixXd expm(const Eigen::MatrixXd& m);

}  // namespace symdyn::control
