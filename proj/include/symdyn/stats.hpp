#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symdyn/control.hpp"
#include "symdyn/model.hpp"
#include "symdyn/netest.hpp"

namespace symdyn::stats {

// Midrank transform (average ranks for ties).
Eigen::VectorXd average_ranks(const Eigen::VectorXd& x);

enum class PartialMethod { precision, residual };

// Partial Spearman correlation of x and y given the control variables: all
// variables are rank-transformed, then either the precision matrix of the rank
// correlation matrix (default) or the residual-regression route is used. The
// two agree to ~1e-12 whenever the rank correlation matrix is nonsingular; a
// singular matrix falls back to the residual definition (0 when a variable is
// fully explained by the controls). Constant controls are dropped as no-ops.
// Throws UndefinedCorrelationError when x or y is rank-constant and
// CollinearityError for collinear control sets.
double spearman_partial(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                        const std::vector<Eigen::VectorXd>& controls,
                        PartialMethod method = PartialMethod::precision);

struct CouplingResult {
  std::string patient_id;
  double r = 0.0;  // partial Spearman, E0_t vs delta BDI | BDI_t, delta days
  double z = 0.0;  // atanh(r), |r| clamped below 1
  int n_pairs = 0;
  std::vector<std::string> controls_used;
  bool dropped = false;
  std::string dropped_reason;
};

// Per-patient coupling between E0 at t and symptom change at t+1, controlling
// for BDI_t and the inter-measurement gap. Patients with fewer than
// `min_transitions` usable pairs or an undefined correlation come back with
// dropped = true and a reason (never an exception).
CouplingResult patient_coupling(const model::SymptomSeries& series,
                                const control::EnergySeries& energies,
                                int min_transitions = 5);

enum class Tail { less, greater };

struct GroupResult {
  int n_patients = 0;
  double mean_z = 0.0;
  double mean_r = 0.0;  // tanh(mean_z)
  double t_stat = 0.0;
  int df = 0;           // n_patients - 2
  double p_one_tailed = 0.0;
  double ci95_low = 0.0;   // on r
  double ci95_high = 0.0;
};

// Fisher-aggregated group test: t = mean_r * sqrt((n-2)/(1-mean_r^2)) against
// Student t with n-2 df, one-tailed (default: negative association). The CI is
// mean_z +/- t_{.975,n-1} sd(z)/sqrt(n), back-transformed. Dropped couplings
// are ignored; throws InsufficientDataError below 3 usable patients.
GroupResult group_inference(const std::vector<CouplingResult>& couplings,
                            Tail tail = Tail::less);

// One patient's pooled regression data for the predictive comparison.
struct PatientTransitions {
  std::string patient_id;
  std::vector<double> e0;         // feature, model 1
  std::vector<double> bdi_t;      // feature, model 2
  std::vector<double> delta_bdi;  // outcome
};

enum class LoocvGranularity { subject, observation };

struct LoocvResult {
  double mae_e0 = 0.0;
  double mae_bdi = 0.0;
  double p_compare = 1.0;  // paired two-sided t on per-transition |error| gaps
  int n_predictions = 0;
  LoocvGranularity granularity = LoocvGranularity::subject;
};

// Leave-one-out MAE of delta-BDI predictions from E0 vs from BDI_t, one simple
// OLS per fold. Subject granularity holds out whole patients (default);
// observation granularity holds out single transitions. Throws
// DegenerateInputError when a feature is constant over the pooled data and
// InsufficientDataError below 3 patients.
LoocvResult loocv_compare(const std::vector<PatientTransitions>& patients,
                          LoocvGranularity granularity = LoocvGranularity::subject);

// patient_id -> (column name -> value); NaN marks a missing cell.
using CovariateTable = std::map<std::string, std::map<std::string, double>>;

struct ModerationResult {
  std::string moderator;
  int n = 0;  // complete cases
  double beta = 0.0;
  double f_stat = 0.0;
  int df1 = 1;
  int df2 = 0;  // n - (covariates + 2)
  double p_two_tailed = 0.0;
  std::vector<std::string> covariates;
  int n_dropped_missing = 0;
};

// ANCOVA-style moderation: OLS of the per-patient Fisher-z coupling on
// [intercept, moderator, covariates], reporting the moderator's partial
// F = t^2 with df (1, n - p). Listwise deletion of missing cells, counted.
// Throws CollinearityError (naming the offending columns) and
// InsufficientDataError when complete cases < covariates + 3.
ModerationResult moderation_ancova(const std::vector<CouplingResult>& couplings,
                                   const CovariateTable& table,
                                   const std::string& moderator,
                                   const std::vector<std::string>& covariates);

// Pools every observation across patients and time and runs the network
// pipeline on the pooled matrix (replication figure data). Requires at least
// 30 pooled observations.
netest::SymptomNetwork cross_sectional_network(const model::Cohort& cohort,
                                               const netest::NetworkConfig& cfg = {});

}  // namespace symdyn::stats
