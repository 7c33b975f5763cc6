#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symdyn/errors.hpp"

namespace symdyn::model {

inline constexpr int kItemCount = 21;
inline constexpr int kMaxItemScore = 3;
inline constexpr int kMaxSumScore = kItemCount * kMaxItemScore;  // 63

// One timestamped questionnaire administration. `day` is relative to the
// patient's first observation (first day == 0 after ingestion).
struct ObservationPoint {
  double day = 0.0;
  std::array<int, kItemCount> items{};
};

// Item total in [0, 63].
int sum_score(const ObservationPoint& obs);

// Per-patient covariates. Values may be NaN (column present, cell empty).
using ModeratorMap = std::map<std::string, double>;

struct SymptomSeries {
  std::string patient_id;
  std::vector<ObservationPoint> observations;  // sorted by day, days strictly increasing
  ModeratorMap moderators;

  int n_measurements() const { return static_cast<int>(observations.size()); }
  std::vector<int> sum_scores() const;
  // n x 21 matrix of item scores, one row per observation.
  Eigen::MatrixXd item_matrix() const;
  // Item vector of one observation as a real-valued state.
  Eigen::VectorXd state_at(int obs_index) const;
};

struct Cohort {
  std::vector<SymptomSeries> patients;
  std::string source;       // provenance: where the data came from
  std::string ingested_at;  // ISO 8601 timestamp, empty for synthetic cohorts

  const SymptomSeries* find(const std::string& patient_id) const;
};

// Consecutive-observation pair: symptom change and the gap that produced it.
struct TransitionPair {
  int index = 0;  // t (0-based index of the earlier observation)
  int bdi_t = 0;
  int bdi_next = 0;
  int delta_bdi = 0;      // bdi_next - bdi_t
  double delta_days = 0;  // > 0
};

// n-1 consecutive pairs. Throws InsufficientDataError for < 2 observations.
std::vector<TransitionPair> transitions(const SymptomSeries& series);

struct Exclusion {
  std::string patient_id;
  std::string reason;
};

struct EligibilityResult {
  Cohort eligible;
  std::vector<Exclusion> excluded;
};

// Retains series with at least `min_obs` observations. min_obs must be >= 2.
EligibilityResult filter_eligible(const Cohort& cohort, int min_obs = 8);

// Canonical moderator column names; anything else is kept with a warning.
const std::vector<std::string>& canonical_moderator_columns();

struct ParseReport {
  std::vector<std::string> warnings;
};

// Reads the documented observations CSV (header: patient_id,day,bdi_01..bdi_21)
// and optionally a moderators CSV joined by patient_id. Days are normalized so
// each patient's first observation is day 0. `schema` currently must be
// "observations-v1". Throws ValidationError with row/column context.
Cohort parse_cohort(const std::string& observations_csv_path,
                    const std::optional<std::string>& moderators_csv_path = std::nullopt,
                    ParseReport* report = nullptr,
                    const std::string& schema = "observations-v1");

Cohort parse_cohort_streams(std::istream& observations, std::istream* moderators,
                            const std::string& source_name, ParseReport* report = nullptr,
                            const std::string& schema = "observations-v1");

// Inverse of parse_cohort for the observations table; days and items round-trip
// bit-exactly.
void write_observations_csv(const Cohort& cohort, std::ostream& out);

// Moderators table; `columns` selects and orders the emitted value columns.
void write_moderators_csv(const Cohort& cohort, std::ostream& out,
                          const std::vector<std::string>& columns);

}  // namespace symdyn::model
