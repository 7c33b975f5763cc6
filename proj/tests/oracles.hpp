#pragma once

// Reference implementations used only by the tests. Each one is coded from the
// defining formula, independently of the library path it cross-checks.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace oracles {

// Tau-b assembled from explicit concordant/discordant/tie counts.
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double concordant = 0, discordant = 0, tie_x = 0, tie_y = 0, tie_both = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0)
        ++tie_both;
      else if (dx == 0)
        ++tie_x;
      else if (dy == 0)
        ++tie_y;
      else if (dx * dy > 0)
        ++concordant;
      else
        ++discordant;
    }
  }
  const double n0 = n * (n - 1) / 2.0;
  const double den = std::sqrt((n0 - (tie_x + tie_both)) * (n0 - (tie_y + tie_both)));
  if (den == 0) return std::numeric_limits<double>::quiet_NaN();
  return (concordant - discordant) / den;
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  return ac.dot(bc) / (ac.norm() * bc.norm());
}

// Partial correlation of columns i and j of `data` given all other columns,
// via the residual-regression definition.
inline double partial_by_residuals(const Eigen::MatrixXd& data, int i, int j) {
  const int n = static_cast<int>(data.rows());
  const int k = static_cast<int>(data.cols());
  Eigen::MatrixXd design(n, k - 1);
  design.col(0).setOnes();
  int c = 1;
  for (int col = 0; col < k; ++col)
    if (col != i && col != j) design.col(c++) = data.col(col);
  const auto qr = design.householderQr();
  const Eigen::VectorXd ri = data.col(i) - design * qr.solve(data.col(i));
  const Eigen::VectorXd rj = data.col(j) - design * qr.solve(data.col(j));
  return ri.dot(rj) / (ri.norm() * rj.norm());
}

// BY step-up scanned from the largest p-value downwards.
inline std::vector<bool> fdr_by_reference(const std::vector<double>& p, double alpha) {
  const int m = static_cast<int>(p.size());
  std::vector<bool> reject(m, false);
  if (m == 0) return reject;
  double c = 0;
  for (int i = 1; i <= m; ++i) c += 1.0 / i;
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return p[a] < p[b]; });
  int cut = -1;
  for (int k = m; k >= 1; --k) {
    if (p[order[k - 1]] <= k * alpha / (m * c)) {
      cut = k;
      break;
    }
  }
  for (int k = 0; k < cut; ++k) reject[order[k]] = true;
  return reject;
}

// Benjamini-Hochberg step-up (for the BY-subset property).
inline std::vector<bool> fdr_bh_reference(const std::vector<double>& p, double alpha) {
  const int m = static_cast<int>(p.size());
  std::vector<bool> reject(m, false);
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return p[a] < p[b]; });
  int cut = -1;
  for (int k = m; k >= 1; --k) {
    if (p[order[k - 1]] <= static_cast<double>(k) * alpha / m) {
      cut = k;
      break;
    }
  }
  for (int k = 0; k < cut; ++k) reject[order[k]] = true;
  return reject;
}

// Matrix exponential of a symmetric matrix through its eigendecomposition.
inline Eigen::MatrixXd expm_symmetric(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  return eig.eigenvectors() * eig.eigenvalues().array().exp().matrix().asDiagonal() *
         eig.eigenvectors().transpose();
}

// Kalman controllability test: rank([B, AB, ..., A^{n-1}B]) == n.
inline bool kalman_controllable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                double rank_tol) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  Eigen::MatrixXd kal(n, n * m);
  Eigen::MatrixXd block = b;
  for (int k = 0; k < n; ++k) {
    kal.middleCols(k * m, m) = block;
    block = a * block;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(kal);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0) return n == 0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_tol * sv[0]) ++rank;
  return rank == n;
}

// Random symmetric matrix rescaled to the requested spectral radius.
inline Eigen::MatrixXd random_symmetric(int n, double radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) a(i, j) = a(j, i) = unif(rng);
  const double r = a.eigenvalues().cwiseAbs().maxCoeff();
  if (r > 0) a *= radius / r;
  return a;
}

inline Eigen::VectorXd random_vector(int n, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * unif(rng);
  return v;
}

// Multivariate normal sample with the given precision matrix.
inline Eigen::MatrixXd gaussian_from_precision(const Eigen::MatrixXd& precision, int n,
                                               std::mt19937_64& rng) {
  const Eigen::MatrixXd sigma =
      precision.ldlt().solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  const Eigen::LLT<Eigen::MatrixXd> chol(sigma);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd out(n, precision.rows());
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z(precision.rows());
    for (int j = 0; j < z.size(); ++j) z[j] = gauss(rng);
    out.row(i) = (chol.matrixL() * z).transpose();
  }
  return out;
}

}  // namespace oracles
