#include "symdyn/netest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>

namespace symdyn::netest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double kendall_tau_b(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size())
    throw ValidationError("kendall_tau_b: length mismatch (" + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()) + ")");
  const int n = static_cast<int>(x.size());
  if (n < 2) throw ValidationError("kendall_tau_b: need at least 2 observations");

  long long concordant_minus_discordant = 0;
  long long ties_x = 0, ties_y = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) {
        ++ties_x;
        ++ties_y;
      } else if (dx == 0) {
        ++ties_x;
      } else if (dy == 0) {
        ++ties_y;
      } else {
        concordant_minus_discordant += (dx * dy > 0) ? 1 : -1;
      }
    }
  }
  const double n0 = 0.5 * n * (n - 1);
  const double denom = std::sqrt((n0 - ties_x) * (n0 - ties_y));
  if (denom == 0) return kNaN;  // constant vector: tau-b undefined
  return static_cast<double>(concordant_minus_discordant) / denom;
}

Eigen::MatrixXd kendall_matrix(const Eigen::MatrixXd& data,
                               std::vector<int>* zero_variance_out) {
  const int k = static_cast<int>(data.cols());
  const int n = static_cast<int>(data.rows());
  if (n < 2) throw ValidationError("kendall_matrix: need at least 2 rows");

  std::vector<bool> constant(k, true);
  for (int j = 0; j < k; ++j)
    for (int i = 1; i < n && constant[j]; ++i)
      if (data(i, j) != data(0, j)) constant[j] = false;

  if (std::all_of(constant.begin(), constant.end(), [](bool c) { return c; }))
    throw DegenerateInputError("all items are constant over time");

  if (zero_variance_out) {
    zero_variance_out->clear();
    for (int j = 0; j < k; ++j)
      if (constant[j]) zero_variance_out->push_back(j);
  }

  Eigen::MatrixXd tau = Eigen::MatrixXd::Identity(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      double t = (constant[i] || constant[j]) ? 0.0
                                              : kendall_tau_b(data.col(i), data.col(j));
      if (std::isnan(t)) t = 0.0;
      tau(i, j) = tau(j, i) = t;
    }
  }
  return tau;
}

Eigen::MatrixXd kendall_matrix(const model::SymptomSeries& series,
                               std::vector<int>* zero_variance_out) {
  return kendall_matrix(series.item_matrix(), zero_variance_out);
}

Eigen::MatrixXd partial_from_correlation(const Eigen::MatrixXd& r, double ridge_target,
                                         double ridge_cap, RidgeInfo* info) {
  const int k = static_cast<int>(r.rows());
  if (r.cols() != k) throw ValidationError("partial_from_correlation: matrix not square");
  if (!r.isApprox(r.transpose(), 1e-12))
    throw ValidationError("partial_from_correlation: matrix not symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  const double min_eig = eig.eigenvalues().minCoeff();
  const double max_eig = eig.eigenvalues().maxCoeff();

  double ridge = 0.0;
  if (min_eig < ridge_target) {
    ridge = ridge_target - min_eig;
    if (ridge > ridge_cap)
      throw NonInvertibleError("correlation matrix needs ridge " + std::to_string(ridge) +
                               " to invert, above the cap " + std::to_string(ridge_cap));
  }
  if (info) {
    info->amount = ridge;
    info->min_eigenvalue = min_eig;
    info->condition_number = (max_eig + ridge) / (min_eig + ridge);
  }

  Eigen::MatrixXd regularized = r;
  regularized.diagonal().array() += ridge;
  Eigen::MatrixXd precision = regularized.ldlt().solve(Eigen::MatrixXd::Identity(k, k));

  Eigen::MatrixXd partial(k, k);
  for (int i = 0; i < k; ++i) {
    partial(i, i) = 1.0;
    for (int j = i + 1; j < k; ++j) {
      double p = -precision(i, j) / std::sqrt(precision(i, i) * precision(j, j));
      p = std::clamp(p, -1.0, 1.0);
      partial(i, j) = partial(j, i) = p;
    }
  }
  return partial;
}

Eigen::MatrixXd partial_significance(const Eigen::MatrixXd& partial, int n, int g) {
  const int k = static_cast<int>(partial.rows());
  if (n <= g + 2)
    throw InsufficientDataError("analytic significance needs n > g + 2 (n=" +
                                std::to_string(n) + ", g=" + std::to_string(g) + ")");
  const double n_eff = n - g;
  const double scale = std::sqrt(9.0 * n_eff * (n_eff - 1.0) / (2.0 * (2.0 * n_eff + 5.0)));
  boost::math::normal_distribution<double> normal01;

  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double z = std::abs(partial(i, j)) * scale;
      const double pv = 2.0 * boost::math::cdf(boost::math::complement(normal01, z));
      p(i, j) = p(j, i) = std::min(1.0, pv);
    }
  }
  return p;
}

namespace {

// Recomputes the partial correlation at (i, j) with column `permute` of the
// Kendall matrix replaced by correlations against a permuted copy.
double partial_cell_with_permuted_column(const Eigen::MatrixXd& data,
                                         const Eigen::MatrixXd& tau_base, int i, int j,
                                         const Eigen::VectorXd& permuted, int permute,
                                         double ridge_target, double ridge_cap) {
  Eigen::MatrixXd tau = tau_base;
  const int k = static_cast<int>(data.cols());
  for (int c = 0; c < k; ++c) {
    if (c == permute) continue;
    double t = kendall_tau_b(permuted, data.col(c));
    if (std::isnan(t)) t = 0.0;
    tau(permute, c) = tau(c, permute) = t;
  }
  try {
    Eigen::MatrixXd partial = partial_from_correlation(tau, ridge_target, ridge_cap);
    return partial(i, j);
  } catch (const NonInvertibleError&) {
    // Degenerate permutation draw; count it as an exceedance (conservative).
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

Eigen::MatrixXd partial_significance_permutation(const Eigen::MatrixXd& data,
                                                 int iterations, std::uint64_t seed,
                                                 double ridge_target, double ridge_cap) {
  if (iterations < 1)
    throw ValidationError("permutation backend needs at least 1 iteration");
  const int n = static_cast<int>(data.rows());
  const int k = static_cast<int>(data.cols());

  std::vector<int> zero_variance;
  Eigen::MatrixXd tau = kendall_matrix(data, &zero_variance);
  Eigen::MatrixXd observed = partial_from_correlation(tau, ridge_target, ridge_cap);

  std::vector<bool> constant(k, false);
  for (int z : zero_variance) constant[z] = true;

  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k, k);
  std::vector<int> order(n);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      if (constant[i] || constant[j]) {
        p(i, j) = p(j, i) = 1.0;
        continue;
      }
      // Independent stream per cell keeps results order- and thread-agnostic.
      std::seed_seq seq{static_cast<unsigned>(seed), static_cast<unsigned>(seed >> 32),
                        static_cast<unsigned>(i), static_cast<unsigned>(j)};
      std::mt19937_64 rng(seq);
      const double threshold = std::abs(observed(i, j)) - 1e-12;
      int exceed = 0;
      std::iota(order.begin(), order.end(), 0);
      Eigen::VectorXd permuted(n);
      for (int it = 0; it < iterations; ++it) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int t = 0; t < n; ++t) permuted[t] = data(order[t], j);
        const double cell = partial_cell_with_permuted_column(
            data, tau, i, j, permuted, j, ridge_target, ridge_cap);
        if (std::abs(cell) >= threshold) ++exceed;
      }
      const double pv = (1.0 + exceed) / (1.0 + iterations);
      p(i, j) = p(j, i) = std::min(1.0, pv);
    }
  }
  return p;
}

std::vector<bool> fdr_by(const std::vector<double>& pvalues, double alpha) {
  const size_t m = pvalues.size();
  std::vector<bool> reject(m, false);
  if (m == 0) return reject;
  for (double p : pvalues)
    if (!(p >= 0.0 && p <= 1.0))
      throw ValidationError("fdr_by: p-values must lie in [0, 1]");

  double harmonic = 0.0;
  for (size_t i = 1; i <= m; ++i) harmonic += 1.0 / static_cast<double>(i);

  std::vector<size_t> idx(m);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return pvalues[a] < pvalues[b]; });

  size_t largest_k = 0;  // 1-based
  for (size_t k = 1; k <= m; ++k) {
    const double threshold =
        static_cast<double>(k) * alpha / (static_cast<double>(m) * harmonic);
    if (pvalues[idx[k - 1]] <= threshold) largest_k = k;
  }
  for (size_t k = 0; k < largest_k; ++k) reject[idx[k]] = true;
  return reject;
}

SymptomNetwork estimate_network(const Eigen::MatrixXd& data, const NetworkConfig& cfg) {
  const int n = static_cast<int>(data.rows());
  const int k = static_cast<int>(data.cols());

  SymptomNetwork net;
  net.n_obs = n;

  Eigen::MatrixXd tau = kendall_matrix(data, &net.diagnostics.zero_variance_items);

  RidgeInfo ridge;
  Eigen::MatrixXd partial =
      partial_from_correlation(tau, cfg.ridge_target, cfg.ridge_cap, &ridge);
  net.diagnostics.ridge_applied = ridge.amount;
  net.diagnostics.min_eigenvalue = ridge.min_eigenvalue;
  net.diagnostics.condition_number = ridge.condition_number;

  const int g = k - 2;  // variables controlled for in each partial
  SignificanceBackend backend = cfg.backend;
  std::string backend_note;
  if (backend == SignificanceBackend::analytic && n <= g + 2) {
    // The normal approximation is undefined at this sample size; fall back to
    // the seeded permutation test and record that we did.
    backend = SignificanceBackend::permutation;
    backend_note = " (auto fallback: n <= g + 2)";
  }
  if (backend == SignificanceBackend::analytic) {
    net.pvalues = partial_significance(partial, n, g);
    net.diagnostics.backend_used = "analytic";
  } else {
    net.pvalues = partial_significance_permutation(data, cfg.permutations, cfg.seed,
                                                   cfg.ridge_target, cfg.ridge_cap);
    net.diagnostics.backend_used = "permutation" + backend_note;
  }

  // BY over the unique off-diagonal cells, mapped back to matrix positions.
  std::vector<double> pvals;
  pvals.reserve(k * (k - 1) / 2);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) pvals.push_back(net.pvalues(i, j));
  net.diagnostics.n_tests = static_cast<int>(pvals.size());
  std::vector<bool> rejected = fdr_by(pvals, cfg.alpha);

  net.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(k, k, false);
  net.a = Eigen::MatrixXd::Zero(k, k);
  size_t cell = 0;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j, ++cell) {
      if (rejected[cell]) {
        net.mask(i, j) = net.mask(j, i) = true;
        net.a(i, j) = net.a(j, i) = partial(i, j);
      }
    }
  }
  return net;
}

SymptomNetwork estimate_network(const model::SymptomSeries& series,
                                const NetworkConfig& cfg) {
  try {
    return estimate_network(series.item_matrix(), cfg);
  } catch (const DegenerateInputError&) {
    throw DegenerateInputError("patient '" + series.patient_id +
                               "': insufficient variance in BDI scores");
  }
}

}  // namespace symdyn::netest
