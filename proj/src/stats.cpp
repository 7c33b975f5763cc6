#include "symdyn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace symdyn::stats {

namespace {

constexpr double kClamp = 1.0 - 1e-12;  // keeps atanh finite on perfect ranks

double student_t_cdf(double t, double df) {
  boost::math::students_t_distribution<double> dist(df);
  return boost::math::cdf(dist, t);
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(x.size());
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double sx = xc.norm(), sy = yc.norm();
  if (sx == 0 || sy == 0)
    throw UndefinedCorrelationError("correlation of a constant variable is undefined");
  (void)n;
  return xc.dot(yc) / (sx * sy);
}

// OLS coefficients by column-pivoted QR; throws CollinearityError naming the
// dependent columns when the design is rank deficient.
Eigen::VectorXd ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                    const std::vector<std::string>& column_names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) {
    const auto& perm = qr.colsPermutation().indices();
    std::ostringstream names;
    for (int i = qr.rank(); i < design.cols(); ++i) {
      if (names.tellp() > 0) names << ", ";
      names << column_names.at(perm[i]);
    }
    throw CollinearityError("design matrix is rank deficient; dependent column(s): " +
                            names.str());
  }
  return qr.solve(y);
}

}  // namespace

Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x[a] < x[b]; });

  Eigen::VectorXd ranks(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = 0.5 * (i + j) + 1.0;  // midrank, 1-based
    for (int k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

// Residual-regression route on already-ranked variables. A residual that
// vanishes means the variable is fully explained by the controls; nothing is
// left to correlate and the partial is 0 by convention.
double partial_of_ranks_residual(const std::vector<Eigen::VectorXd>& ranked) {
  const int n = static_cast<int>(ranked[0].size());
  const int g = static_cast<int>(ranked.size()) - 2;
  if (g == 0) return pearson(ranked[0], ranked[1]);
  Eigen::MatrixXd design(n, g + 1);
  design.col(0).setOnes();
  std::vector<std::string> names = {"intercept"};
  for (int c = 0; c < g; ++c) {
    design.col(c + 1) = ranked[2 + c];
    names.push_back("control_" + std::to_string(c));
  }
  const Eigen::VectorXd rx = ranked[0] - design * ols(design, ranked[0], names);
  const Eigen::VectorXd ry = ranked[1] - design * ols(design, ranked[1], names);
  const double scale = 1e-10 * std::sqrt(static_cast<double>(n));
  if (rx.norm() <= scale || ry.norm() <= scale) return 0.0;
  return pearson(rx, ry);
}

}  // namespace

double spearman_partial(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                        const std::vector<Eigen::VectorXd>& controls,
                        PartialMethod method) {
  const int n = static_cast<int>(x.size());
  if (y.size() != n)
    throw ValidationError("spearman_partial: x and y lengths differ");
  for (const auto& c : controls)
    if (c.size() != n) throw ValidationError("spearman_partial: control length differs");
  if (n <= static_cast<int>(controls.size()) + 2)
    throw InsufficientDataError("spearman_partial needs n > controls + 2 (n=" +
                                std::to_string(n) + ")");

  auto is_constant = [](const Eigen::VectorXd& v) {
    return (v.array() - v[0]).abs().maxCoeff() == 0.0;
  };

  std::vector<Eigen::VectorXd> ranked;
  ranked.push_back(average_ranks(x));
  ranked.push_back(average_ranks(y));
  if (is_constant(ranked[0]) || is_constant(ranked[1]))
    throw UndefinedCorrelationError("variable is constant after rank transform");
  // Constant controls carry no ordering information; partialling them out is
  // a no-op, so they are dropped instead of poisoning the design.
  for (const auto& c : controls) {
    Eigen::VectorXd rc = average_ranks(c);
    if (!is_constant(rc)) ranked.push_back(std::move(rc));
  }
  const int g = static_cast<int>(ranked.size()) - 2;

  if (method == PartialMethod::residual) return partial_of_ranks_residual(ranked);

  const int k = g + 2;
  Eigen::MatrixXd corr(k, k);
  for (int i = 0; i < k; ++i) {
    corr(i, i) = 1.0;
    for (int j = i + 1; j < k; ++j)
      corr(i, j) = corr(j, i) = pearson(ranked[i], ranked[j]);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(corr);
  if (!lu.isInvertible()) {
    // Singular rank correlations (perfectly aligned variables): the residual
    // definition still applies, so defer to it.
    return partial_of_ranks_residual(ranked);
  }
  const Eigen::MatrixXd precision = lu.inverse();
  return -precision(0, 1) / std::sqrt(precision(0, 0) * precision(1, 1));
}

CouplingResult patient_coupling(const model::SymptomSeries& series,
                                const control::EnergySeries& energies,
                                int min_transitions) {
  CouplingResult result;
  result.patient_id = series.patient_id;
  result.controls_used = {"bdi_t", "delta_days"};

  const auto pairs = model::transitions(series);
  if (static_cast<int>(energies.points.size()) != series.n_measurements())
    throw ValidationError("energy series does not match the observation count");

  const int n = static_cast<int>(pairs.size());
  result.n_pairs = n;
  if (n < min_transitions) {
    result.dropped = true;
    result.dropped_reason = "only " + std::to_string(n) + " transitions (minimum " +
                            std::to_string(min_transitions) + ")";
    return result;
  }

  Eigen::VectorXd e0(n), delta(n), bdi(n), gap(n);
  for (int t = 0; t < n; ++t) {
    e0[t] = energies.points[t].e0;
    delta[t] = pairs[t].delta_bdi;
    bdi[t] = pairs[t].bdi_t;
    gap[t] = pairs[t].delta_days;
  }

  try {
    result.r = spearman_partial(e0, delta, {bdi, gap});
  } catch (const UndefinedCorrelationError& e) {
    result.dropped = true;
    result.dropped_reason = e.what();
    return result;
  } catch (const CollinearityError& e) {
    result.dropped = true;
    result.dropped_reason = e.what();
    return result;
  }
  result.z = std::atanh(std::clamp(result.r, -kClamp, kClamp));
  return result;
}

GroupResult group_inference(const std::vector<CouplingResult>& couplings, Tail tail) {
  std::vector<double> zs;
  for (const auto& c : couplings)
    if (!c.dropped) zs.push_back(c.z);
  const int n = static_cast<int>(zs.size());
  if (n < 3)
    throw InsufficientDataError("group inference needs at least 3 patients, got " +
                                std::to_string(n));

  GroupResult out;
  out.n_patients = n;
  out.mean_z = std::accumulate(zs.begin(), zs.end(), 0.0) / n;
  out.mean_r = std::tanh(out.mean_z);
  out.df = n - 2;
  out.t_stat = out.mean_r * std::sqrt(out.df / (1.0 - out.mean_r * out.mean_r));
  const double lower = student_t_cdf(out.t_stat, out.df);
  out.p_one_tailed = (tail == Tail::less) ? lower : 1.0 - lower;

  double ss = 0.0;
  for (double z : zs) ss += (z - out.mean_z) * (z - out.mean_z);
  const double sd = std::sqrt(ss / (n - 1));
  boost::math::students_t_distribution<double> tdist(n - 1);
  const double tq = boost::math::quantile(tdist, 0.975);
  out.ci95_low = std::tanh(out.mean_z - tq * sd / std::sqrt(double(n)));
  out.ci95_high = std::tanh(out.mean_z + tq * sd / std::sqrt(double(n)));
  return out;
}

namespace {

struct Fit {
  double intercept = 0.0;
  double slope = 0.0;
};

// Simple regression y = b0 + b1 x; constant x degrades to the training mean.
Fit fit_simple(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  Fit f;
  if (sxx == 0) {
    f.intercept = my;
    f.slope = 0.0;
  } else {
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
  }
  return f;
}

double paired_t_pvalue(const std::vector<double>& diffs) {
  const int m = static_cast<int>(diffs.size());
  double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / m;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / (m - 1));
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(double(m)));
  return 2.0 * (1.0 - student_t_cdf(std::abs(t), m - 1));
}

}  // namespace

LoocvResult loocv_compare(const std::vector<PatientTransitions>& patients,
                          LoocvGranularity granularity) {
  int usable = 0;
  for (const auto& p : patients)
    if (!p.delta_bdi.empty()) ++usable;
  if (usable < 3)
    throw InsufficientDataError("loocv_compare needs at least 3 patients with data");

  // Pooled rows in patient order, then transition order (deterministic).
  std::vector<double> all_e0, all_bdi, all_y;
  std::vector<int> owner;
  for (size_t p = 0; p < patients.size(); ++p) {
    const auto& pt = patients[p];
    if (pt.e0.size() != pt.delta_bdi.size() || pt.bdi_t.size() != pt.delta_bdi.size())
      throw ValidationError("loocv_compare: ragged patient data");
    for (size_t t = 0; t < pt.delta_bdi.size(); ++t) {
      all_e0.push_back(pt.e0[t]);
      all_bdi.push_back(pt.bdi_t[t]);
      all_y.push_back(pt.delta_bdi[t]);
      owner.push_back(static_cast<int>(p));
    }
  }
  const int m = static_cast<int>(all_y.size());

  auto constant = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != v.front()) return false;
    return true;
  };
  if (constant(all_e0) || constant(all_bdi))
    throw DegenerateInputError("a feature is constant over the pooled transitions");

  std::vector<double> err_e0(m), err_bdi(m);
  auto run_model = [&](const std::vector<double>& feature, std::vector<double>& err) {
    if (granularity == LoocvGranularity::subject) {
      for (size_t p = 0; p < patients.size(); ++p) {
        std::vector<double> train_x, train_y;
        for (int i = 0; i < m; ++i) {
          if (owner[i] != static_cast<int>(p)) {
            train_x.push_back(feature[i]);
            train_y.push_back(all_y[i]);
          }
        }
        if (train_x.empty()) continue;
        const Fit f = fit_simple(train_x, train_y);
        for (int i = 0; i < m; ++i)
          if (owner[i] == static_cast<int>(p))
            err[i] = std::abs(all_y[i] - (f.intercept + f.slope * feature[i]));
      }
    } else {
      for (int hold = 0; hold < m; ++hold) {
        std::vector<double> train_x, train_y;
        train_x.reserve(m - 1);
        train_y.reserve(m - 1);
        for (int i = 0; i < m; ++i) {
          if (i != hold) {
            train_x.push_back(feature[i]);
            train_y.push_back(all_y[i]);
          }
        }
        const Fit f = fit_simple(train_x, train_y);
        err[hold] = std::abs(all_y[hold] - (f.intercept + f.slope * feature[hold]));
      }
    }
  };
  run_model(all_e0, err_e0);
  run_model(all_bdi, err_bdi);

  LoocvResult out;
  out.granularity = granularity;
  out.n_predictions = m;
  out.mae_e0 = std::accumulate(err_e0.begin(), err_e0.end(), 0.0) / m;
  out.mae_bdi = std::accumulate(err_bdi.begin(), err_bdi.end(), 0.0) / m;
  std::vector<double> diffs(m);
  for (int i = 0; i < m; ++i) diffs[i] = err_e0[i] - err_bdi[i];
  out.p_compare = paired_t_pvalue(diffs);
  return out;
}

ModerationResult moderation_ancova(const std::vector<CouplingResult>& couplings,
                                   const CovariateTable& table,
                                   const std::string& moderator,
                                   const std::vector<std::string>& covariates) {
  ModerationResult out;
  out.moderator = moderator;
  out.covariates = covariates;

  auto lookup = [&](const std::string& id, const std::string& col) {
    auto pit = table.find(id);
    if (pit == table.end()) return std::numeric_limits<double>::quiet_NaN();
    auto cit = pit->second.find(col);
    return cit == pit->second.end() ? std::numeric_limits<double>::quiet_NaN()
                                    : cit->second;
  };

  std::vector<double> dv;
  std::vector<std::vector<double>> rows;
  int dropped = 0;
  for (const auto& c : couplings) {
    if (c.dropped) continue;
    std::vector<double> row;
    row.push_back(lookup(c.patient_id, moderator));
    for (const auto& cov : covariates) row.push_back(lookup(c.patient_id, cov));
    const bool complete =
        std::none_of(row.begin(), row.end(), [](double v) { return std::isnan(v); });
    if (!complete) {
      ++dropped;
      continue;
    }
    dv.push_back(c.z);
    rows.push_back(std::move(row));
  }
  out.n_dropped_missing = dropped;
  out.n = static_cast<int>(dv.size());

  const int p = static_cast<int>(covariates.size()) + 2;  // intercept + moderator + covs
  if (out.n < static_cast<int>(covariates.size()) + 3)
    throw InsufficientDataError("moderation '" + moderator + "': " +
                                std::to_string(out.n) + " complete cases, need at least " +
                                std::to_string(covariates.size() + 3));

  Eigen::MatrixXd design(out.n, p);
  Eigen::VectorXd y(out.n);
  std::vector<std::string> names = {"intercept", moderator};
  for (const auto& cov : covariates) names.push_back(cov);
  for (int i = 0; i < out.n; ++i) {
    design(i, 0) = 1.0;
    for (int j = 0; j < p - 1; ++j) design(i, j + 1) = rows[i][j];
    y[i] = dv[i];
  }

  const Eigen::VectorXd beta = ols(design, y, names);
  const Eigen::VectorXd residuals = y - design * beta;
  out.df2 = out.n - p;
  if (out.df2 < 1)
    throw InsufficientDataError("moderation '" + moderator + "': no residual df");
  const double sigma2 = residuals.squaredNorm() / out.df2;
  const Eigen::MatrixXd xtx_inv =
      (design.transpose() * design).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const double se = std::sqrt(sigma2 * xtx_inv(1, 1));
  out.beta = beta[1];
  const double t = se > 0 ? beta[1] / se : 0.0;
  out.f_stat = t * t;
  out.df1 = 1;
  boost::math::fisher_f_distribution<double> fdist(out.df1, out.df2);
  out.p_two_tailed = 1.0 - boost::math::cdf(fdist, out.f_stat);
  return out;
}

netest::SymptomNetwork cross_sectional_network(const model::Cohort& cohort,
                                               const netest::NetworkConfig& cfg) {
  int total = 0;
  for (const auto& p : cohort.patients) total += p.n_measurements();
  if (total < 30)
    throw InsufficientDataError("cross-sectional network needs at least 30 pooled "
                                "observations, got " + std::to_string(total));

  Eigen::MatrixXd pooled(total, model::kItemCount);
  int row = 0;
  for (const auto& p : cohort.patients)
    for (const auto& obs : p.observations) {
      for (int j = 0; j < model::kItemCount; ++j) pooled(row, j) = obs.items[j];
      ++row;
    }
  return netest::estimate_network(pooled, cfg);
}

}  // namespace symdyn::stats
