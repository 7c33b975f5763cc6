#include "symdyn/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <unsupported/Eigen/MatrixFunctions>

namespace symdyn::control {

namespace {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

int numerical_rank(const MatrixXcd& m, double rank_tol) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<MatrixXcd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  const double threshold = rank_tol * sv[0];
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > threshold) ++rank;
  return rank;
}

double spectral_radius(const MatrixXd& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

// Distinct eigenvalues of A, clustered within rank_tol * max(1, spectral radius).
std::vector<std::complex<double>> distinct_eigenvalues(const MatrixXd& a,
                                                       double rank_tol) {
  const VectorXcd eigs = a.eigenvalues();
  const double radius = eigs.size() ? eigs.cwiseAbs().maxCoeff() : 0.0;
  const double tol = rank_tol * std::max(1.0, radius);

  std::vector<std::complex<double>> values(eigs.data(), eigs.data() + eigs.size());
  std::sort(values.begin(), values.end(), [](auto l, auto r) {
    if (l.real() != r.real()) return l.real() < r.real();
    return l.imag() < r.imag();
  });

  std::vector<std::vector<std::complex<double>>> clusters;
  for (const auto& v : values) {
    bool placed = false;
    for (auto& cluster : clusters) {
      if (std::abs(v - cluster.front()) <= tol) {
        cluster.push_back(v);
        placed = true;
        break;
      }
    }
    if (!placed) clusters.push_back({v});
  }

  std::vector<std::complex<double>> out;
  out.reserve(clusters.size());
  for (const auto& cluster : clusters) {
    std::complex<double> mean = 0.0;
    for (const auto& v : cluster) mean += v;
    out.push_back(mean / static_cast<double>(cluster.size()));
  }
  return out;
}

MatrixXcd shift_matrix(const MatrixXd& a, std::complex<double> lambda) {
  MatrixXcd m = -a.cast<std::complex<double>>();
  m.diagonal().array() += lambda;
  return m;
}

}  // namespace

Eigen::MatrixXd expm(const Eigen::MatrixXd& m) { return m.exp(); }

Eigen::MatrixXd InputSpec::materialize(int n) const {
  if (matrix) {
    if (matrix->rows() != n)
      throw ValidationError("input matrix has " + std::to_string(matrix->rows()) +
                            " rows, expected " + std::to_string(n));
    return *matrix;
  }
  if (nodes) {
    if (nodes->empty()) throw ValidationError("input node subset is empty");
    std::set<int> seen;
    MatrixXd b = MatrixXd::Zero(n, static_cast<int>(nodes->size()));
    for (size_t c = 0; c < nodes->size(); ++c) {
      int node = (*nodes)[c];
      if (node < 0 || node >= n)
        throw ValidationError("input node index " + std::to_string(node) +
                              " outside [0, " + std::to_string(n) + ")");
      if (!seen.insert(node).second)
        throw ValidationError("duplicate input node index " + std::to_string(node));
      b(node, static_cast<int>(c)) = 1.0;
    }
    return b;
  }
  return MatrixXd::Identity(n, n);
}

void ControlConfig::validate() const {
  if (!(horizon > 0)) throw ValidationError("control horizon must be positive");
  if (!(rho > 0)) throw ValidationError("rho must be positive");
  if (!(step > 0) || step > horizon)
    throw ValidationError("step must satisfy 0 < step <= horizon");
  if (!(boundary_tol > 0)) throw ValidationError("boundary_tol must be positive");
  if (!(solve_residual_tol > 0))
    throw ValidationError("solve_residual_tol must be positive");
}

ControlTrajectory optimal_control(const MatrixXd& a, const MatrixXd& b,
                                  const VectorXd& x0, const VectorXd& xt,
                                  const ControlConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  if (a.cols() != n) throw ValidationError("interaction matrix must be square");
  if (b.rows() != n || x0.size() != n || xt.size() != n)
    throw ValidationError("optimal_control: inconsistent dimensions");

  const double T = cfg.horizon;
  const int n_steps = std::max<int>(1, static_cast<int>(std::llround(T / cfg.step)));
  const double h = T / n_steps;

  // Hamiltonian of the first-order conditions; the affine piece 2 S x_T only
  // appears with a state cost and a nonzero target.
  MatrixXd hamiltonian = MatrixXd::Zero(2 * n, 2 * n);
  hamiltonian.topLeftCorner(n, n) = a;
  hamiltonian.topRightCorner(n, n) = -(b * b.transpose()) / (2.0 * cfg.rho);
  hamiltonian.bottomRightCorner(n, n) = -a.transpose();
  VectorXd affine = VectorXd::Zero(2 * n);
  if (cfg.use_state_cost) {
    hamiltonian.bottomLeftCorner(n, n) = -2.0 * MatrixXd::Identity(n, n);
    affine.tail(n) = 2.0 * xt;
  }

  const bool augmented = affine.norm() > 0.0;
  const int dim = 2 * n + (augmented ? 1 : 0);
  MatrixXd system = MatrixXd::Zero(dim, dim);
  system.topLeftCorner(2 * n, 2 * n) = hamiltonian;
  if (augmented) system.block(0, 2 * n, 2 * n, 1) = affine;

  const MatrixXd big = expm(system * T);
  const MatrixXd e11 = big.topLeftCorner(n, n);
  const MatrixXd e12 = big.block(0, n, n, n);
  VectorXd rhs = xt - e11 * x0;
  if (augmented) rhs -= big.block(0, 2 * n, n, 1);

  Eigen::ColPivHouseholderQR<MatrixXd> solver(e12);
  const VectorXd p0 = solver.solve(rhs);
  const double residual = (e12 * p0 - rhs).norm() / (1.0 + rhs.norm());
  if (solver.rank() < n || residual > cfg.solve_residual_tol)
    throw NonConvergentError(
        "costate solve failed (rank " + std::to_string(solver.rank()) + "/" +
        std::to_string(n) + ", relative residual " + std::to_string(residual) + ")");

  const MatrixXd stepper = expm(system * h);
  VectorXd z = VectorXd::Zero(dim);
  z.head(n) = x0;
  z.segment(n, n) = p0;
  if (augmented) z[2 * n] = 1.0;

  ControlTrajectory traj;
  traj.times.resize(n_steps + 1);
  traj.x.resize(n_steps + 1, n);
  traj.u.resize(n_steps + 1, m);
  double energy = 0.0;
  for (int k = 0; k <= n_steps; ++k) {
    traj.times[k] = k * h;
    traj.x.row(k) = z.head(n);
    const VectorXd u = -(b.transpose() * z.segment(n, n)) / (2.0 * cfg.rho);
    traj.u.row(k) = u;
    const double weight = (k == 0 || k == n_steps) ? 0.5 : 1.0;
    energy += weight * u.squaredNorm();
    if (k < n_steps) z = stepper * z;
  }
  traj.energy = energy * h;

  if (!traj.x.allFinite() || !traj.u.allFinite() || !std::isfinite(traj.energy))
    throw NumericalOverflowError(
        "non-finite trajectory values (spectral radius " +
        std::to_string(spectral_radius(a)) + ", horizon " + std::to_string(T) + ")");

  traj.boundary_error = (traj.x.row(n_steps).transpose() - xt).norm();
  const double tol = cfg.boundary_tol * (1.0 + x0.norm());
  traj.converged = traj.boundary_error <= tol;
  return traj;
}

GramianEnergy min_energy_gramian(const MatrixXd& a, const MatrixXd& b,
                                 const VectorXd& x0, const VectorXd& xt, double horizon,
                                 int grid_steps, double condition_threshold) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n || b.rows() != n || x0.size() != n || xt.size() != n)
    throw ValidationError("min_energy_gramian: inconsistent dimensions");
  if (!(horizon > 0)) throw ValidationError("horizon must be positive");
  if (grid_steps < 1) throw ValidationError("grid_steps must be at least 1");

  // Van Loan construction: exp([[-A, BB'], [0, A']] T) has e^{A'T} in the
  // lower-right block and e^{-AT} W_T in the upper-right block.
  MatrixXd block = MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -a;
  block.topRightCorner(n, n) = b * b.transpose();
  block.bottomRightCorner(n, n) = a.transpose();
  const MatrixXd e = expm(block * horizon);
  const MatrixXd exp_at = e.bottomRightCorner(n, n).transpose();  // e^{A T}
  MatrixXd gramian = exp_at * e.topRightCorner(n, n);
  gramian = 0.5 * (gramian + gramian.transpose());

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gramian);
  const double min_eig = eig.eigenvalues().minCoeff();
  const double max_eig = eig.eigenvalues().maxCoeff();
  const double condition =
      min_eig > 0 ? max_eig / min_eig : std::numeric_limits<double>::infinity();
  if (!(min_eig > 0) || condition > condition_threshold)
    throw IllConditionedError("controllability Gramian condition " +
                              std::to_string(condition) + " exceeds threshold " +
                              std::to_string(condition_threshold));

  const VectorXd v = xt - exp_at * x0;
  const VectorXd w = eig.eigenvectors() *
                     (eig.eigenvalues().cwiseInverse().asDiagonal() *
                      (eig.eigenvectors().transpose() * v));

  GramianEnergy out;
  out.energy = v.dot(w);
  out.gramian_condition = condition;

  const double h = horizon / grid_steps;
  const MatrixXd back_step = expm(a.transpose() * h);
  out.times.resize(grid_steps + 1);
  out.u.resize(grid_steps + 1, b.cols());
  VectorXd y = w;  // e^{A'(T - t)} w, walked backwards from t = T
  for (int k = grid_steps; k >= 0; --k) {
    out.times[k] = k * h;
    out.u.row(k) = b.transpose() * y;
    if (k > 0) y = back_step * y;
  }
  return out;
}

EnergyResult energy_to_zero(const netest::SymptomNetwork& network, const VectorXd& x0,
                            const ControlConfig& cfg) {
  const int n = network.size();
  if (x0.size() != n)
    throw ValidationError("state vector size does not match the network");
  for (int i = 0; i < n; ++i)
    if (x0[i] < 0 || x0[i] > model::kMaxItemScore)
      throw ValidationError("state entry " + std::to_string(i) + " outside [0, 3]");

  MatrixXd a = network.a;
  if (cfg.normalize_a) {
    const double radius = spectral_radius(a);
    a = a / (1.0 + radius) - MatrixXd::Identity(n, n);
  }
  const MatrixXd b = cfg.input.materialize(n);
  const ControlTrajectory traj =
      optimal_control(a, b, x0, VectorXd::Zero(n), cfg);

  EnergyResult result;
  result.e0 = traj.energy;
  result.converged = traj.converged;
  result.boundary_error = traj.boundary_error;
  result.normalized_a = cfg.normalize_a;
  return result;
}

EnergySeries energy_series(const model::SymptomSeries& series,
                           const netest::SymptomNetwork& network,
                           const ControlConfig& cfg) {
  EnergySeries out;
  out.patient_id = series.patient_id;
  out.normalized_a = cfg.normalize_a;
  out.points.reserve(series.observations.size());

  for (int t = 0; t < series.n_measurements(); ++t) {
    EnergyPoint point;
    point.obs_index = t;
    point.day = series.observations[t].day;
    point.bdi_sum = model::sum_score(series.observations[t]);
    try {
      const EnergyResult r = energy_to_zero(network, series.state_at(t), cfg);
      point.e0 = r.e0;
      point.converged = r.converged;
      point.boundary_error = r.boundary_error;
    } catch (const Error& err) {
      point.e0 = std::numeric_limits<double>::quiet_NaN();
      point.converged = false;
      point.boundary_error = std::numeric_limits<double>::infinity();
      if (!out.excluded) out.exclusion_reason = err.what();
      out.excluded = true;
    }
    if (!point.converged && !out.excluded) {
      out.excluded = true;
      out.exclusion_reason = "E0 did not converge at observation " + std::to_string(t);
    }
    out.points.push_back(point);
  }
  return out;
}

ControllabilityResult exact_controllability(const MatrixXd& a, double rank_tol) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw ValidationError("exact_controllability: matrix not square");
  if (!a.allFinite()) throw ValidationError("exact_controllability: non-finite entries");

  ControllabilityResult result;
  for (const auto& lambda : distinct_eigenvalues(a, rank_tol)) {
    EigenvalueMultiplicity entry;
    entry.value = lambda;
    entry.geometric_multiplicity = n - numerical_rank(shift_matrix(a, lambda), rank_tol);
    result.table.push_back(entry);
  }

  result.n_d = 0;
  for (const auto& entry : result.table) result.n_d = std::max(result.n_d, entry.geometric_multiplicity);

  // Tie-break: largest magnitude, then positive real part, then imaginary part.
  const EigenvalueMultiplicity* best = nullptr;
  for (const auto& entry : result.table) {
    if (entry.geometric_multiplicity != result.n_d) continue;
    if (!best) {
      best = &entry;
      continue;
    }
    const double mag = std::abs(entry.value), best_mag = std::abs(best->value);
    if (mag > best_mag ||
        (mag == best_mag && (entry.value.real() > best->value.real() ||
                             (entry.value.real() == best->value.real() &&
                              entry.value.imag() > best->value.imag()))))
      best = &entry;
  }
  result.lambda_m = best ? best->value : std::complex<double>(0.0);
  return result;
}

DriverAnalysis select_driver_nodes(const MatrixXd& a, double rank_tol) {
  const int n = static_cast<int>(a.rows());
  const ControllabilityResult ec = exact_controllability(a, rank_tol);

  DriverAnalysis out;
  out.n_nodes = n;
  out.eigenvalues = ec.table;
  out.lambda_m = ec.lambda_m;
  out.n_d = ec.n_d;

  const MatrixXcd m = shift_matrix(a, ec.lambda_m);
  Eigen::JacobiSVD<MatrixXcd> svd(m);
  const double sigma_max = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  const double threshold = rank_tol * sigma_max;
  const int target_rank = n - ec.n_d;

  // In-order sweep: earlier rows are preferred as pivots, so the dependent
  // (driver) set takes the highest index within any equivalent group.
  std::vector<VectorXcd> basis;
  for (int row = 0; row < n; ++row) {
    VectorXcd residual = m.row(row).transpose();
    for (const auto& q : basis) residual -= q.dot(residual) * q;
    const bool independent = static_cast<int>(basis.size()) < target_rank &&
                             residual.norm() > threshold;
    if (independent) {
      basis.push_back(residual.normalized());
    } else {
      out.drivers.push_back(row);
    }
  }
  if (static_cast<int>(out.drivers.size()) != ec.n_d)
    throw Error("driver selection found " + std::to_string(out.drivers.size()) +
                " dependent rows, expected " + std::to_string(ec.n_d));

  MatrixXd b = MatrixXd::Zero(n, ec.n_d);
  for (int c = 0; c < ec.n_d; ++c) b(out.drivers[c], c) = 1.0;

  const PbhReport report = pbh_verify(a, b, rank_tol);
  out.pbh_all = report.controllable;
  out.pbh_lambda_m = false;
  for (const auto& [lambda, full] : report.per_eigenvalue)
    if (std::abs(lambda - ec.lambda_m) <= rank_tol * std::max(1.0, std::abs(ec.lambda_m)))
      out.pbh_lambda_m = full;
  if (!out.pbh_lambda_m)
    throw Error("driver selection failed to restore full rank at lambda_M");
  return out;
}

PbhReport pbh_verify(const MatrixXd& a, const MatrixXd& b, double rank_tol) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n || b.rows() != n)
    throw ValidationError("pbh_verify: inconsistent dimensions");

  PbhReport report;
  report.controllable = true;
  for (const auto& lambda : distinct_eigenvalues(a, rank_tol)) {
    MatrixXcd augmented(n, n + b.cols());
    augmented.leftCols(n) = shift_matrix(a, lambda);
    augmented.rightCols(b.cols()) = b.cast<std::complex<double>>();
    const bool full = numerical_rank(augmented, rank_tol) == n;
    report.per_eigenvalue.emplace_back(lambda, full);
    report.controllable = report.controllable && full;
  }
  return report;
}

DriverSummary driver_summary(const std::vector<DriverAnalysis>& analyses) {
  if (analyses.empty())
    throw InsufficientDataError("driver_summary needs at least one network");

  DriverSummary summary;
  summary.n_networks = static_cast<int>(analyses.size());
  int n_nodes = 0;
  for (const auto& a : analyses) n_nodes = std::max(n_nodes, a.n_nodes);
  summary.item_driver_counts.assign(n_nodes, 0);

  std::vector<int> nds;
  nds.reserve(analyses.size());
  for (const auto& a : analyses) {
    nds.push_back(a.n_d);
    for (int d : a.drivers) summary.item_driver_counts[d] += 1;
  }
  std::sort(nds.begin(), nds.end());
  summary.min_n_d = nds.front();
  summary.max_n_d = nds.back();
  const size_t mid = nds.size() / 2;
  summary.median_n_d = (nds.size() % 2 == 1)
                           ? nds[mid]
                           : 0.5 * (nds[mid - 1] + nds[mid]);

  summary.ranking.resize(n_nodes);
  std::iota(summary.ranking.begin(), summary.ranking.end(), 0);
  std::stable_sort(summary.ranking.begin(), summary.ranking.end(), [&](int l, int r) {
    return summary.item_driver_counts[l] > summary.item_driver_counts[r];
  });
  return summary;
}

}  // namespace symdyn::control
