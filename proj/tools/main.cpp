#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "symdyn/pipeline.hpp"

namespace {

using symdyn::pipeline::CommandResult;
using symdyn::pipeline::RunConfig;

int finish(const CommandResult& result) {
  if (result.exit_code != 0 && !result.message.empty())
    std::cerr << "error: " << result.message << "\n";
  return result.exit_code;
}

// Every config key gets a flag override; flags win over the config file.
void add_override_flags(CLI::App* cmd, RunConfig& cfg, std::string& moderators,
                        std::string& backend, std::string& loocv, std::string& tail) {
  cmd->add_option("--observations", cfg.observations_path, "Observations CSV");
  cmd->add_option("--moderators", moderators, "Moderators CSV");
  cmd->add_option("--output-dir", cfg.output_dir, "Output directory");
  cmd->add_option("--seed", cfg.seed, "Root seed for all stochastic backends");
  cmd->add_option("--threads", cfg.threads, "Worker threads over patients");
  cmd->add_option("--min-observations", cfg.min_observations,
                  "Eligibility threshold (default 8)");
  cmd->add_option("--horizon", cfg.control.horizon, "Control horizon T");
  cmd->add_option("--rho", cfg.control.rho, "Input cost weight");
  cmd->add_flag("--use-state-cost", cfg.control.use_state_cost, "Enable S = I state cost");
  cmd->add_option("--step", cfg.control.step, "Integration step size");
  cmd->add_option("--boundary-tol", cfg.control.boundary_tol,
                  "Relative boundary tolerance");
  cmd->add_flag("--normalize-a", cfg.control.normalize_a,
                "Stabilize A as A/(1+|lambda_max|) - I");
  cmd->add_option("--solve-residual-tol", cfg.control.solve_residual_tol,
                  "Costate solve residual tolerance");
  cmd->add_option("--ridge-target", cfg.network.ridge_target,
                  "Target smallest eigenvalue before inversion");
  cmd->add_option("--ridge-cap", cfg.network.ridge_cap, "Maximum allowed ridge");
  cmd->add_option("--alpha", cfg.network.alpha, "FDR level");
  cmd->add_option("--backend", backend, "Significance backend: analytic|permutation");
  cmd->add_option("--permutations", cfg.network.permutations,
                  "Permutation iterations");
  cmd->add_option("--min-transitions", cfg.min_transitions,
                  "Minimum transitions for a coupling");
  cmd->add_option("--loocv", loocv, "LOOCV granularity: subject|observation");
  cmd->add_option("--tail", tail, "Group test tail: less|greater");
}

std::optional<std::vector<int>> parse_input_nodes(const std::string& csv) {
  std::vector<int> nodes;
  std::stringstream ss(csv);
  std::string field;
  while (std::getline(ss, field, ',')) nodes.push_back(std::stoi(field) - 1);
  if (nodes.empty()) return std::nullopt;
  return nodes;
}

bool apply_enum_overrides(RunConfig& cfg, const std::string& backend,
                          const std::string& loocv, const std::string& tail) {
  if (backend == "analytic")
    cfg.network.backend = symdyn::netest::SignificanceBackend::analytic;
  else if (backend == "permutation")
    cfg.network.backend = symdyn::netest::SignificanceBackend::permutation;
  else if (!backend.empty()) {
    std::cerr << "error: unknown backend '" << backend << "'\n";
    return false;
  }
  if (loocv == "subject")
    cfg.loocv = symdyn::stats::LoocvGranularity::subject;
  else if (loocv == "observation")
    cfg.loocv = symdyn::stats::LoocvGranularity::observation;
  else if (!loocv.empty()) {
    std::cerr << "error: unknown loocv granularity '" << loocv << "'\n";
    return false;
  }
  if (tail == "less")
    cfg.tail = symdyn::stats::Tail::less;
  else if (tail == "greater")
    cfg.tail = symdyn::stats::Tail::greater;
  else if (!tail.empty()) {
    std::cerr << "error: unknown tail '" << tail << "'\n";
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal symptom dynamics as a controllable network: per-patient "
               "network estimation, control energies, driver nodes and the group-level "
               "statistics"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Execute the full pipeline");
  std::string run_config_path;
  run->add_option("-c,--config", run_config_path, "JSON config file");
  RunConfig run_overrides;
  std::string run_moderators, run_backend, run_loocv, run_tail;
  std::string run_input_nodes, run_moderation;
  add_override_flags(run, run_overrides, run_moderators, run_backend, run_loocv, run_tail);
  run->add_option("--input-nodes", run_input_nodes,
                  "Comma-separated 1-based item subset receiving input");
  run->add_option("--moderation", run_moderation,
                  "Moderation analyses as a JSON array of {moderator, covariates}");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic cohort");
  std::string sim_spec_path, sim_out_dir = "symdyn-sim";
  simulate->add_option("-s,--spec", sim_spec_path, "Synthetic spec JSON")->required();
  simulate->add_option("--output-dir", sim_out_dir, "Output directory");

  // report
  auto* report = app.add_subcommand("report", "Emit plot-ready tables from a results dir");
  std::string report_results, report_out;
  report->add_option("results_dir", report_results, "Directory written by 'run'")
      ->required();
  report->add_option("--output-dir", report_out, "Table output directory");

  // energy
  auto* energy = app.add_subcommand("energy", "Single-patient energy series");
  std::string energy_obs, energy_patient, energy_out = "-";
  energy->add_option("--observations", energy_obs, "Observations CSV")->required();
  energy->add_option("--patient", energy_patient, "Patient id")->required();
  energy->add_option("--output", energy_out, "Output CSV path ('-' for stdout)");
  RunConfig energy_cfg;
  std::string energy_backend, energy_loocv, energy_tail;
  energy->add_option("--seed", energy_cfg.seed, "Seed for the permutation backend");
  energy->add_option("--backend", energy_backend,
                     "Significance backend: analytic|permutation");
  energy->add_option("--horizon", energy_cfg.control.horizon, "Control horizon T");
  energy->add_option("--step", energy_cfg.control.step, "Integration step size");
  energy->add_flag("--normalize-a", energy_cfg.control.normalize_a,
                   "Stabilize A as A/(1+|lambda_max|) - I");

  // drivers
  auto* drivers = app.add_subcommand("drivers", "Driver-node analysis of one network");
  std::string drivers_network, drivers_out = "-";
  double drivers_rank_tol = 1e-8;
  drivers->add_option("network", drivers_network,
                      "networks/<id>.json export or square matrix CSV")
      ->required();
  drivers->add_option("--rank-tol", drivers_rank_tol, "Numerical rank tolerance");
  drivers->add_option("--output", drivers_out, "Output JSON path ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    RunConfig cfg;
    if (!run_config_path.empty()) {
      try {
        cfg = RunConfig::from_file(run_config_path);
      } catch (const symdyn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return symdyn::pipeline::kExitUsage;
      }
    }
    // Flags parsed on the command line win over the config file.
    if (run->count("--observations")) cfg.observations_path = run_overrides.observations_path;
    if (run->count("--moderators")) cfg.moderators_path = run_moderators;
    if (run->count("--output-dir")) cfg.output_dir = run_overrides.output_dir;
    if (run->count("--seed")) {
      cfg.seed = run_overrides.seed;
      cfg.seed_set = true;
    }
    if (run->count("--threads")) cfg.threads = run_overrides.threads;
    if (run->count("--min-observations"))
      cfg.min_observations = run_overrides.min_observations;
    if (run->count("--horizon")) cfg.control.horizon = run_overrides.control.horizon;
    if (run->count("--rho")) cfg.control.rho = run_overrides.control.rho;
    if (run->count("--use-state-cost"))
      cfg.control.use_state_cost = run_overrides.control.use_state_cost;
    if (run->count("--step")) cfg.control.step = run_overrides.control.step;
    if (run->count("--boundary-tol"))
      cfg.control.boundary_tol = run_overrides.control.boundary_tol;
    if (run->count("--normalize-a"))
      cfg.control.normalize_a = run_overrides.control.normalize_a;
    if (run->count("--solve-residual-tol"))
      cfg.control.solve_residual_tol = run_overrides.control.solve_residual_tol;
    if (run->count("--ridge-target"))
      cfg.network.ridge_target = run_overrides.network.ridge_target;
    if (run->count("--ridge-cap")) cfg.network.ridge_cap = run_overrides.network.ridge_cap;
    if (run->count("--alpha")) cfg.network.alpha = run_overrides.network.alpha;
    if (run->count("--permutations"))
      cfg.network.permutations = run_overrides.network.permutations;
    if (run->count("--min-transitions"))
      cfg.min_transitions = run_overrides.min_transitions;
    if (run->count("--input-nodes")) {
      try {
        cfg.control.input.nodes = parse_input_nodes(run_input_nodes);
      } catch (const std::exception&) {
        std::cerr << "error: --input-nodes expects comma-separated integers\n";
        return symdyn::pipeline::kExitUsage;
      }
    }
    if (run->count("--moderation")) {
      try {
        nlohmann::json entries = nlohmann::json::parse(run_moderation);
        cfg.moderation.clear();
        for (const auto& entry : entries) {
          symdyn::pipeline::ModerationSpec spec;
          spec.moderator = entry.at("moderator");
          if (entry.contains("covariates"))
            spec.covariates = entry.at("covariates").get<std::vector<std::string>>();
          cfg.moderation.push_back(std::move(spec));
        }
      } catch (const std::exception& e) {
        std::cerr << "error: --moderation: " << e.what() << "\n";
        return symdyn::pipeline::kExitUsage;
      }
    }
    if (!apply_enum_overrides(cfg, run_backend, run_loocv, run_tail))
      return symdyn::pipeline::kExitUsage;
    return finish(symdyn::pipeline::run_pipeline(cfg));
  }
  if (simulate->parsed())
    return finish(symdyn::pipeline::simulate_cohort(sim_spec_path, sim_out_dir));
  if (report->parsed()) {
    if (report_out.empty()) report_out = report_results;
    return finish(symdyn::pipeline::report_tables(report_results, report_out));
  }
  if (energy->parsed()) {
    if (!apply_enum_overrides(energy_cfg, energy_backend, energy_loocv, energy_tail))
      return symdyn::pipeline::kExitUsage;
    return finish(symdyn::pipeline::energy_single(energy_obs, energy_patient, energy_cfg,
                                                  energy_out));
  }
  if (drivers->parsed())
    return finish(
        symdyn::pipeline::drivers_single(drivers_network, drivers_rank_tol, drivers_out));
  return 0;
}
