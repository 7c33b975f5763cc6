#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "symdyn/control.hpp"
#include "symdyn/model.hpp"
#include "symdyn/netest.hpp"
#include "symdyn/stats.hpp"
#include "symdyn/synth.hpp"

namespace symdyn::pipeline {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitEmpty = 3;
inline constexpr int kExitNumerical = 4;

inline constexpr int kSummarySchemaVersion = 1;

struct ModerationSpec {
  std::string moderator;
  std::vector<std::string> covariates;
};

// Fully resolved run configuration; every key of the JSON config file has a
// CLI flag override (applied before run_pipeline is called).
struct RunConfig {
  std::string observations_path;
  std::optional<std::string> moderators_path;
  std::string output_dir = "symdyn-out";
  std::uint64_t seed = 0;
  bool seed_set = false;  // an explicit seed is required with stochastic backends
  int threads = 1;
  int min_observations = 8;
  control::ControlConfig control;
  netest::NetworkConfig network;
  int min_transitions = 5;
  stats::LoocvGranularity loocv = stats::LoocvGranularity::subject;
  stats::Tail tail = stats::Tail::less;
  // Empty: the standard moderator set (prs_mdd/prs_bd with ancestry components,
  // ctq and the resilience scales without), restricted to ingested columns.
  std::vector<ModerationSpec> moderation;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  std::vector<ModerationSpec> moderation_specs_or_default() const;
};

struct CommandResult {
  int exit_code = kExitOk;
  std::string message;  // printed to stderr on non-zero exit
};

// Full pipeline: ingestion, eligibility, per-patient network/energy/driver
// estimation, coupling, group inference, LOOCV comparison, moderation, driver
// summary, cross-sectional replication network. Writes the report bundle into
// cfg.output_dir and a machine-readable summary.json (12 significant digits,
// byte-stable across reruns).
CommandResult run_pipeline(const RunConfig& cfg);

// Writes observations.csv, moderators.csv and ground_truth.json for a
// synthetic cohort spec (JSON file). Deterministic per seed.
CommandResult simulate_cohort(const std::string& spec_path, const std::string& out_dir);

// Derives plot-ready tables (fig2_<moderator>.csv, figS4.csv, figS3.csv) from
// a results directory produced by run_pipeline.
CommandResult report_tables(const std::string& results_dir, const std::string& out_dir);

// Ad hoc single-patient energy series: estimates the patient's network and
// writes the energy CSV to `out` (path or "-" for stdout).
CommandResult energy_single(const std::string& observations_path,
                            const std::string& patient_id, const RunConfig& cfg,
                            const std::string& out);

// Ad hoc driver analysis of one network (a networks/<id>.json export or a
// plain matrix CSV); writes the driver JSON to `out`.
CommandResult drivers_single(const std::string& network_path, double rank_tol,
                             const std::string& out);

// Round to 12 significant digits; summary values go through this so reruns
// and parallel runs serialize identically.
double round12(double v);

// JSON value for a double: round12, with non-finite mapped to null.
nlohmann::json json_number(double v);

synth::SynthSpec synth_spec_from_json(const nlohmann::json& j);

}  // namespace symdyn::pipeline
