#include "symdyn/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace symdyn::model {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

double parse_double(const std::string& field, int line_no, const std::string& column) {
  try {
    size_t pos = 0;
    double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line_no) + ", column '" + column +
                          "': expected a number, got '" + field + "'");
  }
}

int parse_item(const std::string& field, int line_no, const std::string& column) {
  if (field.empty())
    throw ValidationError("line " + std::to_string(line_no) + ", column '" + column +
                          "': missing item value (imputation is not supported)");
  int v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ValidationError("line " + std::to_string(line_no) + ", column '" + column +
                          "': expected an integer, got '" + field + "'");
  if (v < 0 || v > kMaxItemScore)
    throw ValidationError("line " + std::to_string(line_no) + ", column '" + column +
                          "': item value " + std::to_string(v) + " outside {0..3}");
  return v;
}

std::string iso_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%FT%TZ");
  return out.str();
}

}  // namespace

int sum_score(const ObservationPoint& obs) {
  int s = 0;
  for (int v : obs.items) s += v;
  return s;
}

std::vector<int> SymptomSeries::sum_scores() const {
  std::vector<int> out;
  out.reserve(observations.size());
  for (const auto& obs : observations) out.push_back(sum_score(obs));
  return out;
}

Eigen::MatrixXd SymptomSeries::item_matrix() const {
  Eigen::MatrixXd m(static_cast<int>(observations.size()), kItemCount);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < kItemCount; ++j) m(i, j) = observations[i].items[j];
  return m;
}

Eigen::VectorXd SymptomSeries::state_at(int obs_index) const {
  const auto& obs = observations.at(obs_index);
  Eigen::VectorXd v(kItemCount);
  for (int j = 0; j < kItemCount; ++j) v[j] = obs.items[j];
  return v;
}

const SymptomSeries* Cohort::find(const std::string& patient_id) const {
  for (const auto& p : patients)
    if (p.patient_id == patient_id) return &p;
  return nullptr;
}

std::vector<TransitionPair> transitions(const SymptomSeries& series) {
  if (series.observations.size() < 2)
    throw InsufficientDataError("patient '" + series.patient_id +
                                "': at least 2 observations are needed for transitions");
  std::vector<TransitionPair> out;
  out.reserve(series.observations.size() - 1);
  for (size_t t = 0; t + 1 < series.observations.size(); ++t) {
    TransitionPair pair;
    pair.index = static_cast<int>(t);
    pair.bdi_t = sum_score(series.observations[t]);
    pair.bdi_next = sum_score(series.observations[t + 1]);
    pair.delta_bdi = pair.bdi_next - pair.bdi_t;
    pair.delta_days = series.observations[t + 1].day - series.observations[t].day;
    out.push_back(pair);
  }
  return out;
}

EligibilityResult filter_eligible(const Cohort& cohort, int min_obs) {
  if (min_obs < 2) throw ValidationError("min_obs must be at least 2");
  EligibilityResult result;
  result.eligible.source = cohort.source;
  result.eligible.ingested_at = cohort.ingested_at;
  for (const auto& p : cohort.patients) {
    if (p.n_measurements() >= min_obs) {
      result.eligible.patients.push_back(p);
    } else {
      result.excluded.push_back(
          {p.patient_id, "only " + std::to_string(p.n_measurements()) +
                             " observations (minimum " + std::to_string(min_obs) + ")"});
    }
  }
  return result;
}

const std::vector<std::string>& canonical_moderator_columns() {
  static const std::vector<std::string> cols = {
      "age",     "sex",       "prs_mdd",     "prs_bd",      "ctq",        "rs_total",
      "rs_accept", "rs_comp", "ancestry_c1", "ancestry_c2", "ancestry_c3"};
  return cols;
}

namespace {

void parse_observations(std::istream& in, Cohort& cohort) {
  std::string line;
  if (!std::getline(in, line))
    throw ValidationError("observations CSV is empty (expected a header row)");
  auto header = split_csv_line(line);
  std::vector<std::string> expected = {"patient_id", "day"};
  for (int i = 1; i <= kItemCount; ++i) {
    std::ostringstream col;
    col << "bdi_" << std::setfill('0') << std::setw(2) << i;
    expected.push_back(col.str());
  }
  if (header != expected)
    throw ValidationError(
        "observations CSV header mismatch; expected patient_id,day,bdi_01,...,bdi_21");

  std::unordered_map<std::string, size_t> index_of;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected.size())
      throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(expected.size()) + " fields, got " +
                            std::to_string(fields.size()));
    const std::string& id = fields[0];
    if (id.empty())
      throw ValidationError("line " + std::to_string(line_no) + ": empty patient_id");
    ObservationPoint obs;
    obs.day = parse_double(fields[1], line_no, "day");
    if (obs.day < 0)
      throw ValidationError("line " + std::to_string(line_no) + ": negative day value");
    for (int i = 0; i < kItemCount; ++i)
      obs.items[i] = parse_item(fields[2 + i], line_no, expected[2 + i]);

    auto it = index_of.find(id);
    if (it == index_of.end()) {
      index_of.emplace(id, cohort.patients.size());
      SymptomSeries series;
      series.patient_id = id;
      series.observations.push_back(obs);
      cohort.patients.push_back(std::move(series));
    } else {
      cohort.patients[it->second].observations.push_back(obs);
    }
  }

  for (auto& p : cohort.patients) {
    std::stable_sort(p.observations.begin(), p.observations.end(),
                     [](const ObservationPoint& a, const ObservationPoint& b) {
                       return a.day < b.day;
                     });
    for (size_t i = 1; i < p.observations.size(); ++i)
      if (p.observations[i].day == p.observations[i - 1].day)
        throw ValidationError("patient '" + p.patient_id + "': duplicate day " +
                              std::to_string(p.observations[i].day));
    // Store days relative to the first observation; only gaps matter downstream.
    double first = p.observations.front().day;
    for (auto& obs : p.observations) obs.day -= first;
  }
}

void parse_moderators(std::istream& in, Cohort& cohort, ParseReport* report) {
  std::string line;
  if (!std::getline(in, line))
    throw ValidationError("moderators CSV is empty (expected a header row)");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "patient_id")
    throw ValidationError("moderators CSV must start with a patient_id column");

  const auto& canonical = canonical_moderator_columns();
  for (size_t c = 1; c < header.size(); ++c) {
    if (std::find(canonical.begin(), canonical.end(), header[c]) == canonical.end() &&
        report) {
      report->warnings.push_back("moderators: unknown column '" + header[c] +
                                 "' (kept)");
    }
  }

  std::unordered_map<std::string, SymptomSeries*> by_id;
  for (auto& p : cohort.patients) by_id[p.patient_id] = &p;

  std::set<std::string> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ValidationError("moderators line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    const std::string& id = fields[0];
    if (!seen.insert(id).second)
      throw ValidationError("moderators line " + std::to_string(line_no) +
                            ": duplicate patient_id '" + id + "'");
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      if (report)
        report->warnings.push_back("moderators: patient '" + id +
                                   "' has no observations (row ignored)");
      continue;
    }
    for (size_t c = 1; c < header.size(); ++c) {
      double v = fields[c].empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : parse_double(fields[c], line_no, header[c]);
      it->second->moderators[header[c]] = v;
    }
  }
}

}  // namespace

Cohort parse_cohort_streams(std::istream& observations, std::istream* moderators,
                            const std::string& source_name, ParseReport* report,
                            const std::string& schema) {
  if (schema != "observations-v1")
    throw ValidationError("unknown CSV schema id '" + schema + "'");
  Cohort cohort;
  cohort.source = source_name;
  cohort.ingested_at = iso_now();
  parse_observations(observations, cohort);
  if (moderators) parse_moderators(*moderators, cohort, report);
  return cohort;
}

Cohort parse_cohort(const std::string& observations_csv_path,
                    const std::optional<std::string>& moderators_csv_path,
                    ParseReport* report, const std::string& schema) {
  std::ifstream obs(observations_csv_path);
  if (!obs) throw ValidationError("cannot open observations file: " + observations_csv_path);
  std::optional<std::ifstream> mods;
  if (moderators_csv_path) {
    mods.emplace(*moderators_csv_path);
    if (!*mods) throw ValidationError("cannot open moderators file: " + *moderators_csv_path);
  }
  return parse_cohort_streams(obs, mods ? &*mods : nullptr, observations_csv_path, report,
                              schema);
}

void write_observations_csv(const Cohort& cohort, std::ostream& out) {
  out << "patient_id,day";
  for (int i = 1; i <= kItemCount; ++i) {
    out << ",bdi_" << std::setfill('0') << std::setw(2) << i;
    out << std::setfill(' ');
  }
  out << "\n";
  char buf[64];
  for (const auto& p : cohort.patients) {
    for (const auto& obs : p.observations) {
      std::snprintf(buf, sizeof(buf), "%.17g", obs.day);
      out << p.patient_id << "," << buf;
      for (int v : obs.items) out << "," << v;
      out << "\n";
    }
  }
}

void write_moderators_csv(const Cohort& cohort, std::ostream& out,
                          const std::vector<std::string>& columns) {
  out << "patient_id";
  for (const auto& c : columns) out << "," << c;
  out << "\n";
  char buf[64];
  for (const auto& p : cohort.patients) {
    out << p.patient_id;
    for (const auto& c : columns) {
      auto it = p.moderators.find(c);
      if (it == p.moderators.end() || std::isnan(it->second)) {
        out << ",";
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g", it->second);
        out << "," << buf;
      }
    }
    out << "\n";
  }
}

}  // namespace symdyn::model
