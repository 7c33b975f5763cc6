#include "symdyn/pipeline.hpp"

#include <atomic>
#include <functional>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace symdyn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

double round12(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round12(v);
}

namespace {

[[noreturn]] void fail_config(const std::string& what) {
  throw ValidationError(what);
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& context) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      fail_config("unknown key '" + key + "' in " + context);
}

json lambda_to_json(std::complex<double> lambda) {
  if (std::abs(lambda.imag()) <= 1e-12) return json_number(lambda.real());
  return json{{"re", json_number(lambda.real())}, {"im", json_number(lambda.imag())}};
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path.string());
  out << text;
}

std::string csv_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& th : pool) th.join();
}

const std::vector<ModerationSpec>& default_moderation_specs() {
  static const std::vector<ModerationSpec> specs = {
      {"prs_mdd", {"age", "sex", "n_bdi", "ancestry_c1", "ancestry_c2", "ancestry_c3"}},
      {"prs_bd", {"age", "sex", "n_bdi", "ancestry_c1", "ancestry_c2", "ancestry_c3"}},
      {"ctq", {"age", "sex", "n_bdi"}},
      {"rs_total", {"age", "sex", "n_bdi"}},
      {"rs_accept", {"age", "sex", "n_bdi"}},
      {"rs_comp", {"age", "sex", "n_bdi"}},
  };
  return specs;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  require_keys(j,
               {"observations", "moderators", "output_dir", "seed", "threads",
                "min_observations", "control", "network", "stats", "moderation"},
               "run config");
  if (j.contains("observations")) cfg.observations_path = j.at("observations");
  if (j.contains("moderators") && !j.at("moderators").is_null())
    cfg.moderators_path = j.at("moderators").get<std::string>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir");
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  if (j.contains("min_observations"))
    cfg.min_observations = j.at("min_observations").get<int>();

  if (j.contains("control")) {
    const json& c = j.at("control");
    require_keys(c,
                 {"horizon", "rho", "use_state_cost", "step", "boundary_tol",
                  "normalize_a", "input_nodes", "solve_residual_tol"},
                 "control config");
    if (c.contains("horizon")) cfg.control.horizon = c.at("horizon").get<double>();
    if (c.contains("rho")) cfg.control.rho = c.at("rho").get<double>();
    if (c.contains("use_state_cost"))
      cfg.control.use_state_cost = c.at("use_state_cost").get<bool>();
    if (c.contains("step")) cfg.control.step = c.at("step").get<double>();
    if (c.contains("boundary_tol"))
      cfg.control.boundary_tol = c.at("boundary_tol").get<double>();
    if (c.contains("normalize_a"))
      cfg.control.normalize_a = c.at("normalize_a").get<bool>();
    if (c.contains("solve_residual_tol"))
      cfg.control.solve_residual_tol = c.at("solve_residual_tol").get<double>();
    if (c.contains("input_nodes") && !c.at("input_nodes").is_null()) {
      std::vector<int> nodes = c.at("input_nodes").get<std::vector<int>>();
      for (int& v : nodes) v -= 1;  // config uses 1-based BDI item indices
      cfg.control.input.nodes = nodes;
    }
  }

  if (j.contains("network")) {
    const json& n = j.at("network");
    require_keys(n, {"ridge_target", "ridge_cap", "alpha", "backend", "permutations"},
                 "network config");
    if (n.contains("ridge_target"))
      cfg.network.ridge_target = n.at("ridge_target").get<double>();
    if (n.contains("ridge_cap")) cfg.network.ridge_cap = n.at("ridge_cap").get<double>();
    if (n.contains("alpha")) cfg.network.alpha = n.at("alpha").get<double>();
    if (n.contains("permutations"))
      cfg.network.permutations = n.at("permutations").get<int>();
    if (n.contains("backend")) {
      const std::string b = n.at("backend");
      if (b == "analytic")
        cfg.network.backend = netest::SignificanceBackend::analytic;
      else if (b == "permutation")
        cfg.network.backend = netest::SignificanceBackend::permutation;
      else
        fail_config("network.backend must be 'analytic' or 'permutation', got '" + b +
                    "'");
    }
  }

  if (j.contains("stats")) {
    const json& s = j.at("stats");
    require_keys(s, {"min_transitions", "loocv", "tail"}, "stats config");
    if (s.contains("min_transitions"))
      cfg.min_transitions = s.at("min_transitions").get<int>();
    if (s.contains("loocv")) {
      const std::string g = s.at("loocv");
      if (g == "subject")
        cfg.loocv = stats::LoocvGranularity::subject;
      else if (g == "observation")
        cfg.loocv = stats::LoocvGranularity::observation;
      else
        fail_config("stats.loocv must be 'subject' or 'observation', got '" + g + "'");
    }
    if (s.contains("tail")) {
      const std::string t = s.at("tail");
      if (t == "less")
        cfg.tail = stats::Tail::less;
      else if (t == "greater")
        cfg.tail = stats::Tail::greater;
      else
        fail_config("stats.tail must be 'less' or 'greater', got '" + t + "'");
    }
  }

  if (j.contains("moderation")) {
    for (const json& entry : j.at("moderation")) {
      require_keys(entry, {"moderator", "covariates"}, "moderation entry");
      ModerationSpec spec;
      spec.moderator = entry.at("moderator");
      if (entry.contains("covariates"))
        spec.covariates = entry.at("covariates").get<std::vector<std::string>>();
      cfg.moderation.push_back(std::move(spec));
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json moderation = json::array();
  for (const auto& m : moderation_specs_or_default())
    moderation.push_back({{"moderator", m.moderator}, {"covariates", m.covariates}});
  json input_nodes = nullptr;
  if (control.input.nodes) {
    std::vector<int> one_based;
    for (int v : *control.input.nodes) one_based.push_back(v + 1);
    input_nodes = one_based;
  }
  return json{
      {"observations", observations_path},
      {"moderators", moderators_path ? json(*moderators_path) : json(nullptr)},
      {"output_dir", output_dir},
      {"seed", seed},
      {"threads", threads},
      {"min_observations", min_observations},
      {"control",
       {{"horizon", json_number(control.horizon)},
        {"rho", json_number(control.rho)},
        {"use_state_cost", control.use_state_cost},
        {"step", json_number(control.step)},
        {"boundary_tol", json_number(control.boundary_tol)},
        {"normalize_a", control.normalize_a},
        {"input_nodes", input_nodes},
        {"solve_residual_tol", json_number(control.solve_residual_tol)}}},
      {"network",
       {{"ridge_target", json_number(network.ridge_target)},
        {"ridge_cap", json_number(network.ridge_cap)},
        {"alpha", json_number(network.alpha)},
        {"backend",
         network.backend == netest::SignificanceBackend::analytic ? "analytic"
                                                                  : "permutation"},
        {"permutations", network.permutations}}},
      {"stats",
       {{"min_transitions", min_transitions},
        {"loocv", loocv == stats::LoocvGranularity::subject ? "subject" : "observation"},
        {"tail", tail == stats::Tail::less ? "less" : "greater"}}},
      {"moderation", moderation}};
}

std::vector<ModerationSpec> RunConfig::moderation_specs_or_default() const {
  return moderation.empty() ? default_moderation_specs() : moderation;
}

namespace {

struct PatientOutput {
  bool excluded = false;
  std::string exclusion_reason;
  bool internal_error = false;
  std::optional<netest::SymptomNetwork> network;
  control::EnergySeries energies;
  std::optional<control::DriverAnalysis> drivers;
  std::string driver_error;
  stats::CouplingResult coupling;
};

json network_to_json(const std::string& patient_id, const netest::SymptomNetwork& net) {
  const int k = net.size();
  json a = json::array(), mask = json::array(), pvalues = json::array();
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      a.push_back(json_number(net.a(i, j)));
      mask.push_back(net.mask(i, j) ? 1 : 0);
      pvalues.push_back(json_number(net.pvalues(i, j)));
    }
  json zero_variance = json::array();
  for (int v : net.diagnostics.zero_variance_items) zero_variance.push_back(v + 1);
  return json{{"patient_id", patient_id},
              {"n_obs", net.n_obs},
              {"k", k},
              {"a", a},
              {"mask", mask},
              {"pvalues", pvalues},
              {"diagnostics",
               {{"zero_variance_items", zero_variance},
                {"ridge_applied", json_number(net.diagnostics.ridge_applied)},
                {"min_eigenvalue", json_number(net.diagnostics.min_eigenvalue)},
                {"condition_number", json_number(net.diagnostics.condition_number)},
                {"n_tests", net.diagnostics.n_tests},
                {"backend", net.diagnostics.backend_used}}}};
}

std::string network_edges_csv(const netest::SymptomNetwork& net,
                              const Eigen::MatrixXd& partial_unmasked) {
  std::ostringstream out;
  out << "item_i,item_j,weight,pvalue,retained\n";
  const int k = net.size();
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      out << (i + 1) << "," << (j + 1) << "," << csv_double(partial_unmasked(i, j)) << ","
          << csv_double(net.pvalues(i, j)) << "," << (net.mask(i, j) ? 1 : 0) << "\n";
  return out.str();
}

json driver_to_json(const std::string& patient_id, const control::DriverAnalysis& d) {
  json drivers = json::array();
  for (int node : d.drivers) drivers.push_back(node + 1);  // 1-based BDI items
  json eigen_table = json::array();
  for (const auto& e : d.eigenvalues)
    eigen_table.push_back({{"lambda", lambda_to_json(e.value)},
                           {"geometric_multiplicity", e.geometric_multiplicity}});
  return json{{"patient_id", patient_id},
              {"n_d", d.n_d},
              {"lambda_m", lambda_to_json(d.lambda_m)},
              {"drivers", drivers},
              {"pbh_lambda_m", d.pbh_lambda_m},
              {"pbh_all", d.pbh_all},
              {"eigenvalues", eigen_table}};
}

json coupling_to_json(const stats::CouplingResult& c) {
  json out{{"n_pairs", c.n_pairs},
           {"dropped", c.dropped},
           {"controls", c.controls_used}};
  if (c.dropped) {
    out["dropped_reason"] = c.dropped_reason;
    out["r"] = nullptr;
    out["z"] = nullptr;
  } else {
    out["r"] = json_number(c.r);
    out["z"] = json_number(c.z);
  }
  return out;
}

json group_to_json(const stats::GroupResult& g) {
  return json{{"n", g.n_patients},
              {"mean_z", json_number(g.mean_z)},
              {"mean_r", json_number(g.mean_r)},
              {"t", json_number(g.t_stat)},
              {"df", g.df},
              {"p_one_tailed", json_number(g.p_one_tailed)},
              {"ci95", {json_number(g.ci95_low), json_number(g.ci95_high)}}};
}

json moderation_to_json(const stats::ModerationResult& m) {
  return json{{"moderator", m.moderator}, {"beta", json_number(m.beta)},
              {"f", json_number(m.f_stat)}, {"df1", m.df1},
              {"df2", m.df2},               {"p", json_number(m.p_two_tailed)},
              {"n_complete", m.n},          {"n_dropped_missing", m.n_dropped_missing},
              {"covariates", m.covariates}};
}

}  // namespace

CommandResult run_pipeline(const RunConfig& cfg) {
  try {
    if (cfg.observations_path.empty())
      return {kExitUsage, "no observations file configured"};
    if (!fs::exists(cfg.observations_path))
      return {kExitUsage, "observations file does not exist: " + cfg.observations_path};
    if (cfg.moderators_path && !fs::exists(*cfg.moderators_path))
      return {kExitUsage, "moderators file does not exist: " + *cfg.moderators_path};
    if (cfg.network.backend == netest::SignificanceBackend::permutation && !cfg.seed_set)
      return {kExitUsage,
              "the permutation backend is stochastic; set an explicit seed"};
    cfg.control.validate();

    model::ParseReport parse_report;
    model::Cohort cohort =
        model::parse_cohort(cfg.observations_path, cfg.moderators_path, &parse_report);
    const int n_input = static_cast<int>(cohort.patients.size());

    model::EligibilityResult eligibility =
        model::filter_eligible(cohort, cfg.min_observations);
    model::Cohort& analyzed = eligibility.eligible;
    // All reductions run in patient-id order so parallel execution cannot
    // reorder floating-point sums.
    std::sort(analyzed.patients.begin(), analyzed.patients.end(),
              [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    if (analyzed.patients.empty())
      return {kExitEmpty, "no eligible patients after requiring at least " +
                              std::to_string(cfg.min_observations) + " observations"};

    const int n_patients = static_cast<int>(analyzed.patients.size());
    std::vector<PatientOutput> outputs(n_patients);
    parallel_for(n_patients, cfg.threads, [&](int i) {
      const model::SymptomSeries& series = analyzed.patients[i];
      PatientOutput& out = outputs[i];
      try {
        netest::NetworkConfig ncfg = cfg.network;
        ncfg.seed = synth::derive_seed(cfg.seed, series.patient_id);
        out.network = netest::estimate_network(series, ncfg);
        out.energies = control::energy_series(series, *out.network, cfg.control);
        if (out.energies.excluded) {
          out.excluded = true;
          out.exclusion_reason = out.energies.exclusion_reason;
          return;
        }
        try {
          out.drivers = control::select_driver_nodes(out.network->a);
        } catch (const Error& e) {
          out.driver_error = e.what();
        }
        out.coupling = stats::patient_coupling(series, out.energies, cfg.min_transitions);
      } catch (const Error& e) {
        out.excluded = true;
        out.exclusion_reason = e.what();
      } catch (const std::exception& e) {
        out.excluded = true;
        out.internal_error = true;
        out.exclusion_reason = std::string("internal error: ") + e.what();
      }
    });

    for (const auto& out : outputs)
      if (out.internal_error) return {kExitNumerical, out.exclusion_reason};

    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir / "networks");

    // Exclusion log covers eligibility and estimation failures.
    std::vector<model::Exclusion> exclusions = eligibility.excluded;
    for (int i = 0; i < n_patients; ++i)
      if (outputs[i].excluded)
        exclusions.push_back({analyzed.patients[i].patient_id,
                              outputs[i].exclusion_reason});
    std::sort(exclusions.begin(), exclusions.end(),
              [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });

    json exclusions_json = json::array();
    for (const auto& e : exclusions)
      exclusions_json.push_back({{"patient_id", e.patient_id}, {"reason", e.reason}});

    // Per-patient outputs, couplings, energies.
    std::ostringstream energies_csv, couplings_csv;
    energies_csv << "patient_id,obs_index,day,bdi_sum,e0,converged,boundary_error\n";
    couplings_csv << "patient_id,r,z,n_pairs,dropped_reason\n";

    std::vector<stats::CouplingResult> couplings;
    std::vector<control::DriverAnalysis> driver_analyses;
    std::vector<stats::PatientTransitions> loocv_inputs;
    stats::CovariateTable covariates;
    json patients_json = json::array();
    json drivers_json = json::array();
    model::Cohort included_cohort;
    included_cohort.source = analyzed.source;

    for (int i = 0; i < n_patients; ++i) {
      const model::SymptomSeries& series = analyzed.patients[i];
      const PatientOutput& out = outputs[i];
      if (out.excluded) continue;
      included_cohort.patients.push_back(series);

      for (const auto& p : out.energies.points)
        energies_csv << series.patient_id << "," << p.obs_index << ","
                     << csv_double(p.day) << "," << p.bdi_sum << "," << csv_double(p.e0)
                     << "," << (p.converged ? 1 : 0) << ","
                     << csv_double(p.boundary_error) << "\n";

      const auto& c = out.coupling;
      couplings.push_back(c);
      couplings_csv << series.patient_id << ",";
      if (c.dropped)
        couplings_csv << ",," << c.n_pairs << "," << c.dropped_reason << "\n";
      else
        couplings_csv << csv_double(c.r) << "," << csv_double(c.z) << "," << c.n_pairs
                      << ",\n";

      stats::PatientTransitions pt;
      pt.patient_id = series.patient_id;
      const auto pairs = model::transitions(series);
      for (size_t t = 0; t < pairs.size(); ++t) {
        pt.e0.push_back(out.energies.points[t].e0);
        pt.bdi_t.push_back(pairs[t].bdi_t);
        pt.delta_bdi.push_back(pairs[t].delta_bdi);
      }
      loocv_inputs.push_back(std::move(pt));

      auto& cov_row = covariates[series.patient_id];
      for (const auto& [name, value] : series.moderators) cov_row[name] = value;
      cov_row["n_bdi"] = series.n_measurements();

      json patient{{"patient_id", series.patient_id},
                   {"n_obs", series.n_measurements()},
                   {"coupling", coupling_to_json(c)}};
      json energies = json::array();
      for (const auto& p : out.energies.points)
        energies.push_back({{"index", p.obs_index},
                            {"day", json_number(p.day)},
                            {"bdi_sum", p.bdi_sum},
                            {"e0", json_number(p.e0)},
                            {"converged", p.converged},
                            {"boundary_error", json_number(p.boundary_error)}});
      patient["energies"] = energies;
      json mods = json::object();
      for (const auto& [name, value] : series.moderators)
        mods[name] = json_number(value);
      mods["n_bdi"] = series.n_measurements();
      patient["moderators"] = mods;

      if (out.network) {
        patient["network"] = {
            {"n_edges",
             static_cast<int>(out.network->mask.cast<int>().sum() / 2)},
            {"ridge_applied", json_number(out.network->diagnostics.ridge_applied)},
            {"backend", out.network->diagnostics.backend_used}};
        Eigen::MatrixXd partial = netest::partial_from_correlation(
            netest::kendall_matrix(series), cfg.network.ridge_target,
            cfg.network.ridge_cap);
        write_text_file(out_dir / "networks" / (series.patient_id + ".json"),
                        network_to_json(series.patient_id, *out.network).dump(2) + "\n");
        write_text_file(out_dir / "networks" / (series.patient_id + "_edges.csv"),
                        network_edges_csv(*out.network, partial));
      }
      if (out.drivers) {
        json d = driver_to_json(series.patient_id, *out.drivers);
        patient["drivers"] = d;
        drivers_json.push_back(d);
        driver_analyses.push_back(*out.drivers);
      } else {
        patient["drivers"] = nullptr;
        patient["driver_error"] = out.driver_error;
      }
      patients_json.push_back(std::move(patient));
    }

    if (included_cohort.patients.empty())
      return {kExitEmpty, "every eligible patient was excluded during estimation"};

    json summary{{"schema_version", kSummarySchemaVersion},
                 {"config", cfg.to_json()},
                 {"cohort",
                  {{"source", cfg.observations_path},
                   {"n_patients_input", n_input},
                   {"n_eligible", n_patients},
                   {"n_analyzed", static_cast<int>(included_cohort.patients.size())}}},
                 {"warnings", parse_report.warnings},
                 {"exclusions", exclusions_json},
                 {"patients", patients_json}};

    // Group inference over usable couplings.
    json group_json;
    try {
      const stats::GroupResult group = stats::group_inference(couplings, cfg.tail);
      group_json = group_to_json(group);
    } catch (const Error& e) {
      group_json = json{{"error", e.what()}};
    }
    summary["group"] = group_json;

    json loocv_json;
    try {
      const stats::LoocvResult loocv = stats::loocv_compare(loocv_inputs, cfg.loocv);
      loocv_json = json{{"mae_e0", json_number(loocv.mae_e0)},
                        {"mae_bdi", json_number(loocv.mae_bdi)},
                        {"p_compare", json_number(loocv.p_compare)},
                        {"n_predictions", loocv.n_predictions},
                        {"granularity",
                         loocv.granularity == stats::LoocvGranularity::subject
                             ? "subject"
                             : "observation"}};
    } catch (const Error& e) {
      loocv_json = json{{"error", e.what()}};
    }
    summary["loocv"] = loocv_json;

    json moderation_json = json::array();
    for (const auto& spec : cfg.moderation_specs_or_default()) {
      bool any_value = false;
      for (const auto& [id, row] : covariates) {
        auto it = row.find(spec.moderator);
        if (it != row.end() && std::isfinite(it->second)) any_value = true;
      }
      if (!any_value) {
        moderation_json.push_back(
            {{"moderator", spec.moderator}, {"skipped", "no data for this column"}});
        continue;
      }
      try {
        moderation_json.push_back(moderation_to_json(stats::moderation_ancova(
            couplings, covariates, spec.moderator, spec.covariates)));
      } catch (const Error& e) {
        moderation_json.push_back({{"moderator", spec.moderator}, {"error", e.what()}});
      }
    }
    summary["moderation"] = moderation_json;

    json driver_summary_json;
    if (!driver_analyses.empty()) {
      const control::DriverSummary ds = control::driver_summary(driver_analyses);
      json counts = json::array(), ranking = json::array();
      for (int c : ds.item_driver_counts) counts.push_back(c);
      for (int r : ds.ranking) ranking.push_back(r + 1);
      driver_summary_json = json{{"n_networks", ds.n_networks},
                                 {"median_n_d", json_number(ds.median_n_d)},
                                 {"min_n_d", ds.min_n_d},
                                 {"max_n_d", ds.max_n_d},
                                 {"item_driver_counts", counts},
                                 {"item_ranking", ranking}};
    } else {
      driver_summary_json = json{{"error", "no driver analyses available"}};
    }
    summary["driver_summary"] = driver_summary_json;

    json cross_json;
    try {
      netest::NetworkConfig ncfg = cfg.network;
      ncfg.seed = synth::derive_seed(cfg.seed, std::string("cross-sectional"));
      const netest::SymptomNetwork cross =
          stats::cross_sectional_network(included_cohort, ncfg);
      json edges = json::array();
      for (int i = 0; i < cross.size(); ++i)
        for (int j = i + 1; j < cross.size(); ++j)
          if (cross.mask(i, j))
            edges.push_back({{"item_i", i + 1},
                             {"item_j", j + 1},
                             {"weight", json_number(cross.a(i, j))},
                             {"pvalue", json_number(cross.pvalues(i, j))}});
      cross_json = json{{"n_obs", cross.n_obs},
                        {"n_edges", static_cast<int>(edges.size())},
                        {"backend", cross.diagnostics.backend_used},
                        {"edges", edges}};
    } catch (const Error& e) {
      cross_json = json{{"error", e.what()}};
    }
    summary["cross_sectional"] = cross_json;

    write_text_file(out_dir / "exclusions.json", exclusions_json.dump(2) + "\n");
    write_text_file(out_dir / "energies.csv", energies_csv.str());
    write_text_file(out_dir / "couplings.csv", couplings_csv.str());
    write_text_file(out_dir / "group.json", group_json.dump(2) + "\n");
    write_text_file(out_dir / "loocv.json", loocv_json.dump(2) + "\n");
    write_text_file(out_dir / "moderation.json", moderation_json.dump(2) + "\n");
    write_text_file(out_dir / "drivers.json", drivers_json.dump(2) + "\n");
    write_text_file(out_dir / "driver_summary.json", driver_summary_json.dump(2) + "\n");
    write_text_file(out_dir / "cross_sectional.json", cross_json.dump(2) + "\n");
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    return {kExitOk, ""};
  } catch (const ValidationError& e) {
    return {kExitUsage, e.what()};
  } catch (const Error& e) {
    return {kExitNumerical, e.what()};
  } catch (const std::exception& e) {
    return {kExitNumerical, std::string("internal error: ") + e.what()};
  }
}

synth::SynthSpec synth_spec_from_json(const json& j) {
  require_keys(j,
               {"n_patients", "n_obs_min", "n_obs_max", "a_density", "a_weight_min",
                "a_weight_max", "noise_sd", "coupling_strength", "moderator_effect",
                "day_gap_min", "day_gap_max", "seed"},
               "synthetic spec");
  synth::SynthSpec spec;
  if (!j.contains("seed")) fail_config("synthetic spec: missing required field 'seed'");
  spec.set_seed(j.at("seed").get<std::uint64_t>());
  if (j.contains("n_patients")) spec.n_patients = j.at("n_patients").get<int>();
  if (j.contains("n_obs_min")) spec.n_obs_min = j.at("n_obs_min").get<int>();
  if (j.contains("n_obs_max")) spec.n_obs_max = j.at("n_obs_max").get<int>();
  if (j.contains("a_density")) spec.a_density = j.at("a_density").get<double>();
  if (j.contains("a_weight_min")) spec.a_weight_min = j.at("a_weight_min").get<double>();
  if (j.contains("a_weight_max")) spec.a_weight_max = j.at("a_weight_max").get<double>();
  if (j.contains("noise_sd")) spec.noise_sd = j.at("noise_sd").get<double>();
  if (j.contains("coupling_strength"))
    spec.coupling_strength = j.at("coupling_strength").get<double>();
  if (j.contains("moderator_effect"))
    spec.moderator_effect = j.at("moderator_effect").get<double>();
  if (j.contains("day_gap_min")) spec.day_gap_min = j.at("day_gap_min").get<int>();
  if (j.contains("day_gap_max")) spec.day_gap_max = j.at("day_gap_max").get<int>();
  return spec;
}

CommandResult simulate_cohort(const std::string& spec_path, const std::string& out_dir) {
  try {
    std::ifstream in(spec_path);
    if (!in) return {kExitUsage, "cannot open spec file: " + spec_path};
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      return {kExitUsage, std::string("spec parse error: ") + e.what()};
    }
    const synth::SynthSpec spec = synth_spec_from_json(j);
    spec.validate();
    if (spec.n_obs_min < 8)
      std::cerr << "warning: n_obs_min below 8; such series will be filtered out by "
                   "the eligibility rule\n";

    const synth::SynthResult result = synth::synth_cohort(spec);

    fs::create_directories(out_dir);
    {
      std::ofstream obs(fs::path(out_dir) / "observations.csv", std::ios::binary);
      model::write_observations_csv(result.cohort, obs);
    }
    {
      std::ofstream mods(fs::path(out_dir) / "moderators.csv", std::ios::binary);
      model::write_moderators_csv(result.cohort, mods, {"age", "sex", "synth_mod"});
    }

    json truth{{"spec",
                {{"n_patients", spec.n_patients},
                 {"n_obs_min", spec.n_obs_min},
                 {"n_obs_max", spec.n_obs_max},
                 {"a_density", spec.a_density},
                 {"a_weight_min", spec.a_weight_min},
                 {"a_weight_max", spec.a_weight_max},
                 {"noise_sd", spec.noise_sd},
                 {"coupling_strength", spec.coupling_strength},
                 {"moderator_effect", spec.moderator_effect},
                 {"day_gap_min", spec.day_gap_min},
                 {"day_gap_max", spec.day_gap_max},
                 {"seed", spec.seed}}}};
    json patients = json::array();
    for (const auto& p : result.truth.patients) {
      json a = json::array();
      for (int i = 0; i < p.a.rows(); ++i)
        for (int jx = 0; jx < p.a.cols(); ++jx) a.push_back(p.a(i, jx));
      patients.push_back({{"patient_id", p.patient_id},
                          {"planted_coupling", p.planted_coupling},
                          {"moderator", p.moderator},
                          {"contraction", p.contraction},
                          {"a", a},
                          {"true_e0", p.true_e0}});
    }
    truth["patients"] = patients;
    write_text_file(fs::path(out_dir) / "ground_truth.json", truth.dump(2) + "\n");
    return {kExitOk, ""};
  } catch (const ValidationError& e) {
    return {kExitUsage, e.what()};
  } catch (const std::exception& e) {
    return {kExitNumerical, std::string("internal error: ") + e.what()};
  }
}

CommandResult report_tables(const std::string& results_dir, const std::string& out_dir) {
  try {
    const fs::path summary_path = fs::path(results_dir) / "summary.json";
    if (!fs::exists(summary_path))
      return {kExitUsage, "missing results file: " + summary_path.string()};
    std::ifstream in(summary_path);
    json summary;
    try {
      in >> summary;
    } catch (const json::parse_error& e) {
      return {kExitUsage, std::string("summary parse error: ") + e.what()};
    }

    std::vector<std::string> missing;
    for (const char* key : {"patients", "moderation", "cross_sectional"})
      if (!summary.contains(key)) missing.push_back(key);
    if (!missing.empty()) {
      std::string message = "summary.json is missing stage outputs:";
      for (const auto& m : missing) message += " " + m;
      return {kExitUsage, message};
    }

    fs::create_directories(out_dir);

    // figS4: one Fisher-z row per usable patient.
    std::ostringstream figs4;
    figs4 << "patient_id,z\n";
    for (const auto& p : summary.at("patients")) {
      const json& coupling = p.at("coupling");
      if (coupling.at("dropped").get<bool>()) continue;
      figs4 << p.at("patient_id").get<std::string>() << ","
            << csv_double(coupling.at("z").get<double>()) << "\n";
    }
    write_text_file(fs::path(out_dir) / "figS4.csv", figs4.str());

    // fig2_<moderator>: moderator value vs patient z, per moderation analysis.
    int fig2_written = 0;
    for (const auto& m : summary.at("moderation")) {
      if (!m.contains("f")) continue;  // skipped or failed analyses
      const std::string moderator = m.at("moderator");
      std::ostringstream fig2;
      fig2 << moderator << ",z\n";
      for (const auto& p : summary.at("patients")) {
        const json& coupling = p.at("coupling");
        if (coupling.at("dropped").get<bool>()) continue;
        const json& mods = p.at("moderators");
        if (!mods.contains(moderator) || mods.at(moderator).is_null()) continue;
        fig2 << csv_double(mods.at(moderator).get<double>()) << ","
             << csv_double(coupling.at("z").get<double>()) << "\n";
      }
      write_text_file(fs::path(out_dir) / ("fig2_" + moderator + ".csv"), fig2.str());
      ++fig2_written;
    }
    if (fig2_written == 0)
      std::cerr << "notice: no moderation analyses available; fig2 tables skipped\n";

    // figS3: retained cross-sectional edges.
    const json& cross = summary.at("cross_sectional");
    std::ostringstream figs3;
    figs3 << "item_i,item_j,weight\n";
    if (cross.contains("edges"))
      for (const auto& e : cross.at("edges"))
        figs3 << e.at("item_i").get<int>() << "," << e.at("item_j").get<int>() << ","
              << csv_double(e.at("weight").get<double>()) << "\n";
    write_text_file(fs::path(out_dir) / "figS3.csv", figs3.str());
    return {kExitOk, ""};
  } catch (const std::exception& e) {
    return {kExitNumerical, std::string("internal error: ") + e.what()};
  }
}

CommandResult energy_single(const std::string& observations_path,
                            const std::string& patient_id, const RunConfig& cfg,
                            const std::string& out) {
  try {
    if (!fs::exists(observations_path))
      return {kExitUsage, "observations file does not exist: " + observations_path};
    const model::Cohort cohort = model::parse_cohort(observations_path);
    const model::SymptomSeries* series = cohort.find(patient_id);
    if (!series) return {kExitUsage, "patient '" + patient_id + "' not found"};

    netest::NetworkConfig ncfg = cfg.network;
    ncfg.seed = synth::derive_seed(cfg.seed, patient_id);
    const netest::SymptomNetwork net = netest::estimate_network(*series, ncfg);
    const control::EnergySeries energies =
        control::energy_series(*series, net, cfg.control);

    std::ostringstream csv;
    csv << "patient_id,obs_index,day,bdi_sum,e0,converged,boundary_error\n";
    for (const auto& p : energies.points)
      csv << patient_id << "," << p.obs_index << "," << csv_double(p.day) << ","
          << p.bdi_sum << "," << csv_double(p.e0) << "," << (p.converged ? 1 : 0) << ","
          << csv_double(p.boundary_error) << "\n";
    if (out == "-")
      std::cout << csv.str();
    else
      write_text_file(out, csv.str());
    if (energies.excluded)
      return {kExitNumerical, "patient '" + patient_id +
                                  "' did not converge: " + energies.exclusion_reason};
    return {kExitOk, ""};
  } catch (const ValidationError& e) {
    return {kExitUsage, e.what()};
  } catch (const Error& e) {
    return {kExitNumerical, e.what()};
  }
}

namespace {

Eigen::MatrixXd matrix_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open matrix file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError("matrix CSV has ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("matrix CSV is empty");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows.front().size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

CommandResult drivers_single(const std::string& network_path, double rank_tol,
                             const std::string& out) {
  try {
    if (!fs::exists(network_path))
      return {kExitUsage, "network file does not exist: " + network_path};
    Eigen::MatrixXd a;
    std::string patient_id = "network";
    if (network_path.size() > 5 &&
        network_path.substr(network_path.size() - 5) == ".json") {
      std::ifstream in(network_path);
      json j;
      in >> j;
      const int k = j.at("k").get<int>();
      const auto flat = j.at("a").get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != k * k)
        return {kExitUsage, "network JSON: 'a' should hold k*k row-major entries"};
      a.resize(k, k);
      for (int i = 0; i < k; ++i)
        for (int jx = 0; jx < k; ++jx) a(i, jx) = flat[i * k + jx];
      if (j.contains("patient_id")) patient_id = j.at("patient_id");
    } else {
      a = matrix_from_csv(network_path);
      if (a.rows() != a.cols()) return {kExitUsage, "matrix CSV is not square"};
    }

    const control::DriverAnalysis analysis = control::select_driver_nodes(a, rank_tol);
    const std::string text = driver_to_json(patient_id, analysis).dump(2) + "\n";
    if (out == "-")
      std::cout << text;
    else
      write_text_file(out, text);
    return {kExitOk, ""};
  } catch (const ValidationError& e) {
    return {kExitUsage, e.what()};
  } catch (const Error& e) {
    return {kExitNumerical, e.what()};
  } catch (const std::exception& e) {
    return {kExitUsage, e.what()};
  }
}

}  // namespace symdyn::pipeline
