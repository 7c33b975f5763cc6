#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "symdyn/control.hpp"
#include "symdyn/model.hpp"
#include "symdyn/netest.hpp"
#include "symdyn/stats.hpp"
#include "symdyn/synth.hpp"

namespace py = pybind11;
using namespace symdyn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

control::ControlConfig make_control_config(double horizon, double rho, double step,
                                           bool use_state_cost, double boundary_tol,
                                           bool normalize_a) {
  control::ControlConfig cfg;
  cfg.horizon = horizon;
  cfg.rho = rho;
  cfg.step = step;
  cfg.use_state_cost = use_state_cost;
  cfg.boundary_tol = boundary_tol;
  cfg.normalize_a = normalize_a;
  return cfg;
}

netest::NetworkConfig make_network_config(double alpha, double ridge_target,
                                          double ridge_cap, const std::string& backend,
                                          int permutations, std::uint64_t seed) {
  netest::NetworkConfig cfg;
  cfg.alpha = alpha;
  cfg.ridge_target = ridge_target;
  cfg.ridge_cap = ridge_cap;
  cfg.permutations = permutations;
  cfg.seed = seed;
  if (backend == "analytic")
    cfg.backend = netest::SignificanceBackend::analytic;
  else if (backend == "permutation")
    cfg.backend = netest::SignificanceBackend::permutation;
  else
    throw ValidationError("backend must be 'analytic' or 'permutation'");
  return cfg;
}

py::dict network_to_dict(const netest::SymptomNetwork& net) {
  py::dict diagnostics;
  diagnostics["zero_variance_items"] = net.diagnostics.zero_variance_items;
  diagnostics["ridge_applied"] = net.diagnostics.ridge_applied;
  diagnostics["min_eigenvalue"] = net.diagnostics.min_eigenvalue;
  diagnostics["condition_number"] = net.diagnostics.condition_number;
  diagnostics["n_tests"] = net.diagnostics.n_tests;
  diagnostics["backend"] = net.diagnostics.backend_used;
  py::dict out;
  out["a"] = net.a;
  out["pvalues"] = net.pvalues;
  out["mask"] = Eigen::MatrixXi(net.mask.cast<int>());
  out["n_obs"] = net.n_obs;
  out["diagnostics"] = diagnostics;
  return out;
}

py::dict trajectory_to_dict(const control::ControlTrajectory& traj) {
  py::dict out;
  out["times"] = traj.times;
  out["x"] = traj.x;
  out["u"] = traj.u;
  out["energy"] = traj.energy;
  out["boundary_error"] = traj.boundary_error;
  out["converged"] = traj.converged;
  return out;
}

py::dict series_to_dict(const model::SymptomSeries& series) {
  const int n = series.n_measurements();
  VectorXd days(n);
  Eigen::MatrixXi items(n, model::kItemCount);
  for (int t = 0; t < n; ++t) {
    days[t] = series.observations[t].day;
    for (int j = 0; j < model::kItemCount; ++j)
      items(t, j) = series.observations[t].items[j];
  }
  py::dict out;
  out["patient_id"] = series.patient_id;
  out["days"] = days;
  out["items"] = items;
  out["moderators"] = series.moderators;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Symptom-network control: network estimation, control energies, driver "
            "nodes and the group statistics";

  py::register_exception<Error>(m, "SymdynError");

  // --- network estimation ---
  m.def("kendall_tau_b", &netest::kendall_tau_b, py::arg("x"), py::arg("y"),
        "Tie-corrected Kendall tau-b; NaN for constant input");
  m.def(
      "kendall_matrix",
      [](const MatrixXd& data) { return netest::kendall_matrix(data); },
      py::arg("data"), "Pairwise tau-b over columns of an n x k matrix");
  m.def(
      "partial_from_correlation",
      [](const MatrixXd& r, double ridge_target, double ridge_cap) {
        netest::RidgeInfo info;
        const MatrixXd partial =
            netest::partial_from_correlation(r, ridge_target, ridge_cap, &info);
        return py::make_tuple(partial, info.amount);
      },
      py::arg("r"), py::arg("ridge_target") = 1e-6, py::arg("ridge_cap") = 0.1,
      "Partial correlations via precision inversion; returns (matrix, ridge)");
  m.def("partial_significance", &netest::partial_significance, py::arg("partial"),
        py::arg("n"), py::arg("g"),
        "Two-sided p-values from the normal approximation with n_eff = n - g");
  m.def("partial_significance_permutation", &netest::partial_significance_permutation,
        py::arg("data"), py::arg("iterations"), py::arg("seed"),
        py::arg("ridge_target") = 1e-6, py::arg("ridge_cap") = 0.1);
  m.def("fdr_by", &netest::fdr_by, py::arg("pvalues"), py::arg("alpha") = 0.05,
        "Benjamini-Yekutieli step-up rejections in input order");
  m.def(
      "estimate_network",
      [](const MatrixXd& data, double alpha, double ridge_target, double ridge_cap,
         const std::string& backend, int permutations, std::uint64_t seed) {
        return network_to_dict(netest::estimate_network(
            data, make_network_config(alpha, ridge_target, ridge_cap, backend,
                                      permutations, seed)));
      },
      py::arg("data"), py::arg("alpha") = 0.05, py::arg("ridge_target") = 1e-6,
      py::arg("ridge_cap") = 0.1, py::arg("backend") = "analytic",
      py::arg("permutations") = 500, py::arg("seed") = 0,
      "Full per-patient network pipeline on an n x k ordinal matrix");

  // --- control ---
  m.def(
      "optimal_control",
      [](const MatrixXd& a, const MatrixXd& b, const VectorXd& x0, const VectorXd& xt,
         double horizon, double rho, double step, bool use_state_cost,
         double boundary_tol) {
        return trajectory_to_dict(control::optimal_control(
            a, b, x0, xt,
            make_control_config(horizon, rho, step, use_state_cost, boundary_tol,
                                false)));
      },
      py::arg("a"), py::arg("b"), py::arg("x0"), py::arg("xt"), py::arg("horizon") = 1.0,
      py::arg("rho") = 1.0, py::arg("step") = 0.001, py::arg("use_state_cost") = false,
      py::arg("boundary_tol") = 1e-5,
      "Linear-quadratic two-point boundary-value solve via the Hamiltonian");
  m.def(
      "min_energy_gramian",
      [](const MatrixXd& a, const MatrixXd& b, const VectorXd& x0, const VectorXd& xt,
         double horizon) {
        const auto result = control::min_energy_gramian(a, b, x0, xt, horizon);
        py::dict out;
        out["energy"] = result.energy;
        out["times"] = result.times;
        out["u"] = result.u;
        out["gramian_condition"] = result.gramian_condition;
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("x0"), py::arg("xt"), py::arg("horizon") = 1.0,
      "Closed-form minimum-energy oracle through the controllability Gramian");
  m.def(
      "energy_to_zero",
      [](const MatrixXd& a, const VectorXd& x0, double horizon, double rho, double step,
         bool normalize_a) {
        netest::SymptomNetwork net;
        net.a = a;
        net.pvalues = MatrixXd::Zero(a.rows(), a.cols());
        net.mask.setConstant(a.rows(), a.cols(), true);
        net.n_obs = 0;
        const auto result = control::energy_to_zero(
            net, x0, make_control_config(horizon, rho, step, false, 1e-5, normalize_a));
        py::dict out;
        out["e0"] = result.e0;
        out["converged"] = result.converged;
        out["boundary_error"] = result.boundary_error;
        out["normalized_a"] = result.normalized_a;
        return out;
      },
      py::arg("a"), py::arg("x0"), py::arg("horizon") = 1.0, py::arg("rho") = 1.0,
      py::arg("step") = 0.001, py::arg("normalize_a") = false,
      "E0 from the current symptom state to the all-zero state");
  m.def("brute_force_energy", &synth::brute_force_energy, py::arg("a"), py::arg("b"),
        py::arg("x0"), py::arg("xt"), py::arg("horizon") = 1.0,
        py::arg("n_steps") = 1000,
        "Discretized least-norm oracle for the minimum control energy");
  m.def(
      "exact_controllability",
      [](const MatrixXd& a, double rank_tol) {
        const auto result = control::exact_controllability(a, rank_tol);
        py::list table;
        for (const auto& e : result.table)
          table.append(py::make_tuple(e.value, e.geometric_multiplicity));
        py::dict out;
        out["n_d"] = result.n_d;
        out["lambda_m"] = result.lambda_m;
        out["eigenvalues"] = table;
        return out;
      },
      py::arg("a"), py::arg("rank_tol") = 1e-8,
      "Minimum driver count: the maximum geometric multiplicity");
  m.def(
      "select_driver_nodes",
      [](const MatrixXd& a, double rank_tol) {
        const auto result = control::select_driver_nodes(a, rank_tol);
        py::dict out;
        out["n_d"] = result.n_d;
        out["lambda_m"] = result.lambda_m;
        out["drivers"] = result.drivers;  // 0-based node indices
        out["pbh_lambda_m"] = result.pbh_lambda_m;
        out["pbh_all"] = result.pbh_all;
        return out;
      },
      py::arg("a"), py::arg("rank_tol") = 1e-8,
      "Driver nodes restoring full rank at the maximizing eigenvalue");
  m.def(
      "pbh_verify",
      [](const MatrixXd& a, const MatrixXd& b, double rank_tol) {
        const auto report = control::pbh_verify(a, b, rank_tol);
        py::list per_eigenvalue;
        for (const auto& [lambda, full] : report.per_eigenvalue)
          per_eigenvalue.append(py::make_tuple(lambda, full));
        return py::make_tuple(report.controllable, per_eigenvalue);
      },
      py::arg("a"), py::arg("b"), py::arg("rank_tol") = 1e-8,
      "PBH rank condition over every distinct eigenvalue");

  // --- statistics ---
  m.def(
      "spearman_partial",
      [](const VectorXd& x, const VectorXd& y, const std::vector<VectorXd>& controls,
         const std::string& method) {
        return stats::spearman_partial(x, y, controls,
                                       method == "residual"
                                           ? stats::PartialMethod::residual
                                           : stats::PartialMethod::precision);
      },
      py::arg("x"), py::arg("y"), py::arg("controls") = std::vector<VectorXd>{},
      py::arg("method") = "precision");
  m.def(
      "group_inference",
      [](const std::vector<double>& z_values, const std::string& tail) {
        std::vector<stats::CouplingResult> couplings;
        for (size_t i = 0; i < z_values.size(); ++i) {
          stats::CouplingResult c;
          c.patient_id = std::to_string(i);
          c.z = z_values[i];
          c.r = std::tanh(z_values[i]);
          couplings.push_back(c);
        }
        const auto g = stats::group_inference(
            couplings, tail == "greater" ? stats::Tail::greater : stats::Tail::less);
        py::dict out;
        out["n"] = g.n_patients;
        out["mean_z"] = g.mean_z;
        out["mean_r"] = g.mean_r;
        out["t"] = g.t_stat;
        out["df"] = g.df;
        out["p_one_tailed"] = g.p_one_tailed;
        out["ci95"] = py::make_tuple(g.ci95_low, g.ci95_high);
        return out;
      },
      py::arg("z_values"), py::arg("tail") = "less",
      "Fisher-aggregated one-tailed group test over per-patient z couplings");
  m.def(
      "loocv_compare",
      [](const std::vector<std::tuple<std::vector<double>, std::vector<double>,
                                      std::vector<double>>>& patients,
         const std::string& granularity) {
        std::vector<stats::PatientTransitions> inputs;
        for (size_t i = 0; i < patients.size(); ++i) {
          stats::PatientTransitions pt;
          pt.patient_id = std::to_string(i);
          pt.e0 = std::get<0>(patients[i]);
          pt.bdi_t = std::get<1>(patients[i]);
          pt.delta_bdi = std::get<2>(patients[i]);
          inputs.push_back(std::move(pt));
        }
        const auto result = stats::loocv_compare(
            inputs, granularity == "observation" ? stats::LoocvGranularity::observation
                                                 : stats::LoocvGranularity::subject);
        py::dict out;
        out["mae_e0"] = result.mae_e0;
        out["mae_bdi"] = result.mae_bdi;
        out["p_compare"] = result.p_compare;
        out["n_predictions"] = result.n_predictions;
        return out;
      },
      py::arg("patients"), py::arg("granularity") = "subject",
      "Leave-one-out MAE comparison of the E0 and BDI predictors; patients are "
      "(e0, bdi_t, delta_bdi) triples");
  m.def(
      "moderation_ancova",
      [](const std::vector<double>& z, const std::vector<double>& moderator,
         const MatrixXd& covariates) {
        if (static_cast<int>(z.size()) != static_cast<int>(moderator.size()) ||
            static_cast<int>(z.size()) != covariates.rows())
          throw ValidationError("moderation_ancova: row counts differ");
        std::vector<stats::CouplingResult> couplings;
        stats::CovariateTable table;
        for (size_t i = 0; i < z.size(); ++i) {
          stats::CouplingResult c;
          c.patient_id = std::to_string(i);
          c.z = z[i];
          couplings.push_back(c);
          auto& row = table[c.patient_id];
          row["moderator"] = moderator[i];
          for (int j = 0; j < covariates.cols(); ++j)
            row["cov" + std::to_string(j)] = covariates(i, j);
        }
        std::vector<std::string> names;
        for (int j = 0; j < covariates.cols(); ++j)
          names.push_back("cov" + std::to_string(j));
        const auto result = stats::moderation_ancova(couplings, table, "moderator", names);
        py::dict out;
        out["beta"] = result.beta;
        out["f"] = result.f_stat;
        out["df1"] = result.df1;
        out["df2"] = result.df2;
        out["p"] = result.p_two_tailed;
        out["n"] = result.n;
        return out;
      },
      py::arg("z"), py::arg("moderator"), py::arg("covariates"),
      "Moderator F test of per-patient couplings with covariate adjustment");

  // --- synthetic cohorts ---
  m.def("random_network", &synth::random_network, py::arg("n_nodes"), py::arg("density"),
        py::arg("weight_min"), py::arg("weight_max"), py::arg("seed"));
  m.def(
      "simulate_series",
      [](const MatrixXd& a, int n_obs, double noise_sd, int gap_min, int gap_max,
         std::uint64_t seed) {
        double contraction = 1.0;
        const auto series =
            synth::simulate_series(a, n_obs, noise_sd, gap_min, gap_max, seed,
                                   &contraction);
        py::dict out = series_to_dict(series);
        out["contraction"] = contraction;
        return out;
      },
      py::arg("a"), py::arg("n_obs"), py::arg("noise_sd") = 1.0, py::arg("gap_min") = 12,
      py::arg("gap_max") = 16, py::arg("seed") = 0);
  m.def(
      "synth_cohort",
      [](int n_patients, int n_obs_min, int n_obs_max, double a_density,
         double a_weight_min, double a_weight_max, double noise_sd,
         double coupling_strength, double moderator_effect, int day_gap_min,
         int day_gap_max, std::uint64_t seed) {
        synth::SynthSpec spec;
        spec.n_patients = n_patients;
        spec.n_obs_min = n_obs_min;
        spec.n_obs_max = n_obs_max;
        spec.a_density = a_density;
        spec.a_weight_min = a_weight_min;
        spec.a_weight_max = a_weight_max;
        spec.noise_sd = noise_sd;
        spec.coupling_strength = coupling_strength;
        spec.moderator_effect = moderator_effect;
        spec.day_gap_min = day_gap_min;
        spec.day_gap_max = day_gap_max;
        spec.set_seed(seed);
        const auto result = synth::synth_cohort(spec);
        py::list patients;
        for (size_t p = 0; p < result.cohort.patients.size(); ++p) {
          py::dict entry = series_to_dict(result.cohort.patients[p]);
          const auto& truth = result.truth.patients[p];
          entry["a"] = truth.a;
          entry["planted_coupling"] = truth.planted_coupling;
          entry["moderator"] = truth.moderator;
          entry["contraction"] = truth.contraction;
          entry["true_e0"] = truth.true_e0;
          patients.append(entry);
        }
        return patients;
      },
      py::arg("n_patients") = 20, py::arg("n_obs_min") = 20, py::arg("n_obs_max") = 40,
      py::arg("a_density") = 0.15, py::arg("a_weight_min") = -0.4,
      py::arg("a_weight_max") = 0.4, py::arg("noise_sd") = 1.0,
      py::arg("coupling_strength") = 0.0, py::arg("moderator_effect") = 0.0,
      py::arg("day_gap_min") = 12, py::arg("day_gap_max") = 16, py::arg("seed") = 0,
      "Synthetic cohort with planted energy coupling; returns per-patient dicts "
      "including the generating network and ground-truth energies");
}
