#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "symdyn/model.hpp"

namespace symdyn::synth {

struct SynthSpec {
  int n_patients = 20;
  int n_obs_min = 20;  // eligibility rule: at least 8
  int n_obs_max = 40;
  double a_density = 0.15;
  double a_weight_min = -0.4;
  double a_weight_max = 0.4;
  double noise_sd = 1.0;
  // Target magnitude of the planted negative partial association between the
  // true minimum energy at t and the next-step sum-score change.
  double coupling_strength = 0.0;
  // Scales each patient's planted coupling by a synthetic standard-normal
  // covariate (emitted as moderator column "synth_mod").
  double moderator_effect = 0.0;
  int day_gap_min = 12;
  int day_gap_max = 16;
  std::uint64_t seed = 0;
  bool seed_set = false;  // seed is mandatory; set through set_seed()

  void set_seed(std::uint64_t s) { seed = s; seed_set = true; }
  void validate() const;  // throws ValidationError
};

// Erdos-Renyi style symmetric weighted matrix with zero diagonal; each
// unordered pair is present with probability `density`, weights uniform in
// [weight_min, weight_max]. Deterministic per seed.
Eigen::MatrixXd random_network(int n_nodes, double density, double weight_min,
                               double weight_max, std::uint64_t seed);

// Discrete latent dynamics x_{k+1} = A_d x_k + eps, eps ~ N(0, noise_sd^2 I),
// with A_d = A rescaled to spectral radius < 1 when needed (factor recorded in
// `contraction_out`). Observed items are the latents clipped to [0, 3] and
// rounded; days accumulate uniform integer gaps in [gap_min, gap_max].
model::SymptomSeries simulate_series(const Eigen::MatrixXd& a, int n_obs,
                                     double noise_sd, int gap_min, int gap_max,
                                     std::uint64_t seed,
                                     double* contraction_out = nullptr);

struct PatientTruth {
  std::string patient_id;
  Eigen::MatrixXd a;               // generating network
  double planted_coupling = 0.0;   // signed target partial correlation
  double moderator = 0.0;          // synthetic covariate value
  double contraction = 1.0;        // A -> A_d rescale factor
  std::vector<double> true_e0;     // closed-form minimum energy per observation
};

struct GroundTruth {
  SynthSpec spec;
  std::vector<PatientTruth> patients;
};

struct SynthResult {
  model::Cohort cohort;
  GroundTruth truth;
};

// Generates a cohort in which next-step sum-score change carries a planted
// negative partial association (controlling for the current sum and the gap)
// with the true minimum energy computed from each patient's generating A.
// Latents mean-revert through the network dynamics around a slowly drifting
// baseline and are quantized to items as in simulate_series. The planted
// signal enters as a common-mode shift proportional to the standardized
// energy-vs-sum residual; an unplanted probe pilot per patient measures shift
// transmission through quantization, the intrinsic energy coupling of the
// dynamics (cancelled, so coupling_strength 0 is a true null) and the noise
// floor, making the realized partial correlation track `coupling_strength`.
SynthResult synth_cohort(const SynthSpec& spec);

// Independent discretization oracle for the S = 0 control problem: exact
// interval propagation x_{k+1} = F x_k + G u_k with F = exp(A dt),
// G = (integral_0^dt exp(A tau) dtau) B, minimum-norm input sequence by least
// squares over the stacked reachability constraint. Throws InfeasibleError
// when the target is unreachable. Energy is dt * sum ||u_k||^2.
double brute_force_energy(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& xt,
                          double horizon, int n_steps = 1000);

// Deterministic per-patient substream of a root seed (splitmix-style).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t root, const std::string& key);

}  // namespace symdyn::synth
