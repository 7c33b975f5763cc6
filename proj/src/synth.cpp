#include "symdyn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "symdyn/control.hpp"

namespace symdyn::synth {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Minimal deterministic generator; avoids the implementation-defined
// std:: distributions so emitted files are bit-stable.
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() { return splitmix64(state); }
  double uniform() { return (next() >> 11) * 0x1.0p-53; }  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {
    const double u1 = ((next() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = (next() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

int quantize_item(double latent) {
  const double clipped = std::clamp(latent, 0.0, double(model::kMaxItemScore));
  return static_cast<int>(std::lround(clipped));
}

double spectral_radius(const MatrixXd& a) {
  return a.rows() ? a.eigenvalues().cwiseAbs().maxCoeff() : 0.0;
}

MatrixXd contract_dynamics(const MatrixXd& a, double* factor_out) {
  const double radius = spectral_radius(a);
  double factor = 1.0;
  if (radius >= 0.95) factor = 0.95 / radius;
  if (factor_out) *factor_out = factor;
  return factor * a;
}

// Minimum energy to the zero state as a quadratic form: with x_T = 0 and
// B = I over horizon 1, E0(x) = x' e^{A'T} W_T^{-1} e^{AT} x.
MatrixXd energy_quadratic_form(const MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  MatrixXd block = MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -a;
  block.topRightCorner(n, n) = MatrixXd::Identity(n, n);
  block.bottomRightCorner(n, n) = a.transpose();
  const MatrixXd e = control::expm(block);
  const MatrixXd exp_at = e.bottomRightCorner(n, n).transpose();
  MatrixXd gramian = exp_at * e.topRightCorner(n, n);
  gramian = 0.5 * (gramian + gramian.transpose());
  const MatrixXd w_inv = gramian.ldlt().solve(MatrixXd::Identity(n, n));
  MatrixXd q = exp_at.transpose() * w_inv * exp_at;
  return 0.5 * (q + q.transpose());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  std::uint64_t state = root ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  splitmix64(state);
  return splitmix64(state);
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& key) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(root, h);
}

void SynthSpec::validate() const {
  if (!seed_set) throw ValidationError("synthetic spec requires an explicit seed");
  if (n_patients < 1) throw ValidationError("n_patients must be positive");
  // Below 8 the series would fail the eligibility rule; the CLI warns about
  // it, the hard floor here is only what transitions need.
  if (n_obs_min < 2) throw ValidationError("n_obs_min must be at least 2");
  if (n_obs_max < n_obs_min) throw ValidationError("n_obs_max below n_obs_min");
  if (a_density < 0 || a_density > 1)
    throw ValidationError("a_density must lie in [0, 1]");
  if (a_weight_max < a_weight_min)
    throw ValidationError("a_weight range is inverted");
  if (noise_sd < 0) throw ValidationError("noise_sd must be non-negative");
  if (coupling_strength < 0 || coupling_strength > 0.95)
    throw ValidationError("coupling_strength must lie in [0, 0.95]");
  if (day_gap_min < 1 || day_gap_max < day_gap_min)
    throw ValidationError("day gap range is invalid");
}

Eigen::MatrixXd random_network(int n_nodes, double density, double weight_min,
                               double weight_max, std::uint64_t seed) {
  if (n_nodes < 1) throw ValidationError("random_network: n_nodes must be positive");
  if (density < 0 || density > 1)
    throw ValidationError("random_network: density must lie in [0, 1]");
  Rng rng(seed);
  MatrixXd a = MatrixXd::Zero(n_nodes, n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    for (int j = i + 1; j < n_nodes; ++j) {
      const double coin = rng.uniform();
      const double weight = rng.uniform(weight_min, weight_max);
      if (coin < density) a(i, j) = a(j, i) = weight;
    }
  }
  return a;
}

model::SymptomSeries simulate_series(const MatrixXd& a, int n_obs, double noise_sd,
                                     int gap_min, int gap_max, std::uint64_t seed,
                                     double* contraction_out) {
  if (a.rows() != model::kItemCount || a.cols() != model::kItemCount)
    throw ValidationError("simulate_series expects a 21x21 matrix");
  if (n_obs < 1) throw ValidationError("simulate_series: n_obs must be positive");
  if (gap_min < 1 || gap_max < gap_min)
    throw ValidationError("simulate_series: invalid day gap range");

  double factor = 1.0;
  const MatrixXd a_d = contract_dynamics(a, &factor);
  if (contraction_out) *contraction_out = factor;

  Rng rng(seed);
  model::SymptomSeries series;
  series.patient_id = "sim";
  VectorXd latent = VectorXd::Zero(model::kItemCount);
  double day = 0.0;
  for (int t = 0; t < n_obs; ++t) {
    model::ObservationPoint obs;
    obs.day = day;
    for (int j = 0; j < model::kItemCount; ++j) obs.items[j] = quantize_item(latent[j]);
    series.observations.push_back(obs);
    VectorXd eps(model::kItemCount);
    for (int j = 0; j < model::kItemCount; ++j) eps[j] = noise_sd * rng.normal();
    latent = a_d * latent + eps;
    day += rng.uniform_int(gap_min, gap_max);
  }
  return series;
}

namespace {

struct StepContext {
  const MatrixXd* a_d;
  double noise_sd;
  double drift_sd;
};

// Latent baseline drifts as a reflected random walk; symptoms mean-revert
// around it through the network dynamics.
constexpr double kBaselineStart = 1.2;
constexpr double kBaselineDrift = 0.08;
constexpr double kBaselineLow = 0.4;
constexpr double kBaselineHigh = 2.6;
constexpr int kPilotLength = 400;
constexpr int kWarmupSteps = 40;
constexpr double kProbeSd = 3.0;

double reflect(double x, double lo, double hi) {
  if (x < lo) return 2 * lo - x;
  if (x > hi) return 2 * hi - x;
  return x;
}

void advance_state(const StepContext& ctx, VectorXd& latent, double& baseline,
                   double common_shift, Rng& rng) {
  const int n = static_cast<int>(latent.size());
  VectorXd next = (*ctx.a_d) * (latent.array() - baseline).matrix();
  next.array() += baseline + common_shift;
  for (int j = 0; j < n; ++j) next[j] += ctx.noise_sd * rng.normal();
  latent = next;
  baseline = reflect(baseline + ctx.drift_sd * rng.normal(), kBaselineLow, kBaselineHigh);
}

Eigen::VectorXi quantize_state(const VectorXd& latent) {
  Eigen::VectorXi s(latent.size());
  for (int j = 0; j < latent.size(); ++j) s[j] = quantize_item(latent[j]);
  return s;
}

struct PilotFit {
  Eigen::Vector3d energy_on_sum;  // e ~ 1 + sum + sum^2
  double eta_sd = 0.0;            // residual sd of the energy signal
  double transmission = 1.0;      // observed d(sum change)/d(latent common shift)
  double intrinsic_slope = 0.0;   // natural eta -> sum-change coupling
  double resid_sd = 1.0;          // sum-change noise given controls and eta

  double eta(double energy, double sum) const {
    if (eta_sd <= 1e-9) return 0.0;
    const double expected =
        energy_on_sum[0] + energy_on_sum[1] * sum + energy_on_sum[2] * sum * sum;
    return std::clamp((energy - expected) / eta_sd, -3.0, 3.0);
  }
};

// Unplanted rehearsal of the patient dynamics. Pass one fits the energy signal
// against the sum score; pass two injects random common-mode probe shifts and
// regresses the observed sum change on [1, sum, gap, probe, eta] to measure
// how shifts transmit through quantization, the intrinsic eta coupling that
// the dynamics already carry, and the leftover noise scale.
PilotFit run_pilot(const StepContext& ctx, const MatrixXd& q, VectorXd& latent,
                   double& baseline, int gap_min, int gap_max, Rng& rng) {
  PilotFit fit;

  Eigen::MatrixXd design(kPilotLength, 3);
  Eigen::VectorXd energy(kPilotLength);
  for (int t = 0; t < kPilotLength; ++t) {
    const Eigen::VectorXi s = quantize_state(latent);
    const VectorXd sd = s.cast<double>();
    const double sum = s.sum();
    design(t, 0) = 1.0;
    design(t, 1) = sum;
    design(t, 2) = sum * sum;
    energy[t] = sd.dot(q * sd);
    advance_state(ctx, latent, baseline, 0.0, rng);
  }
  fit.energy_on_sum = design.colPivHouseholderQr().solve(energy);
  const VectorXd resid = energy - design * fit.energy_on_sum;
  fit.eta_sd = std::sqrt(resid.squaredNorm() / kPilotLength);

  Eigen::MatrixXd probe_design(kPilotLength - 1, 5);
  Eigen::VectorXd delta(kPilotLength - 1);
  double prev_sum = 0, prev_gap = 0, prev_probe = 0, prev_eta = 0;
  for (int t = 0; t < kPilotLength; ++t) {
    const Eigen::VectorXi s = quantize_state(latent);
    const VectorXd sd = s.cast<double>();
    const double sum = s.sum();
    const double e = sd.dot(q * sd);
    if (t > 0) {
      delta[t - 1] = sum - prev_sum;
      probe_design.row(t - 1) << 1.0, prev_sum, prev_gap, prev_probe, prev_eta;
    }
    prev_sum = sum;
    prev_gap = rng.uniform_int(gap_min, gap_max);
    prev_probe = kProbeSd * rng.normal();
    prev_eta = fit.eta(e, sum);
    advance_state(ctx, latent, baseline, prev_probe / latent.size(), rng);
  }
  const Eigen::VectorXd beta = probe_design.colPivHouseholderQr().solve(delta);
  const Eigen::VectorXd probe_resid = delta - probe_design * beta;
  fit.resid_sd = std::max(1.0, std::sqrt(probe_resid.squaredNorm() / delta.size()));
  fit.transmission = std::max(beta[3], 0.05);
  fit.intrinsic_slope = beta[4];
  return fit;
}

}  // namespace

SynthResult synth_cohort(const SynthSpec& spec) {
  spec.validate();

  SynthResult result;
  result.truth.spec = spec;
  result.cohort.source = "synthetic(seed=" + std::to_string(spec.seed) + ")";

  for (int p = 0; p < spec.n_patients; ++p) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "SYN%03d", p + 1);
    const std::string id = idbuf;
    Rng rng(derive_seed(spec.seed, id));

    PatientTruth truth;
    truth.patient_id = id;
    truth.a = random_network(model::kItemCount, spec.a_density, spec.a_weight_min,
                             spec.a_weight_max, rng.next());
    const MatrixXd a_d = contract_dynamics(truth.a, &truth.contraction);
    const MatrixXd q = energy_quadratic_form(truth.a);
    const StepContext ctx{&a_d, spec.noise_sd, kBaselineDrift};

    truth.moderator = rng.normal();
    const double strength = std::clamp(
        spec.coupling_strength * (1.0 + spec.moderator_effect * truth.moderator), 0.0,
        0.95);
    truth.planted_coupling = -strength;

    VectorXd latent = VectorXd::Constant(model::kItemCount, kBaselineStart);
    double baseline = kBaselineStart;
    for (int t = 0; t < kWarmupSteps; ++t)
      advance_state(ctx, latent, baseline, 0.0, rng);
    const PilotFit pilot = run_pilot(ctx, q, latent, baseline, spec.day_gap_min,
                                     spec.day_gap_max, rng);

    // Latent shift per unit eta: hit the requested partial correlation against
    // the measured noise floor, after cancelling the intrinsic coupling.
    const double target_slope =
        pilot.resid_sd * strength / std::sqrt(1.0 - strength * strength);
    const double sum_gain =
        (target_slope + pilot.intrinsic_slope) / pilot.transmission;

    const int n_obs = rng.uniform_int(spec.n_obs_min, spec.n_obs_max);
    model::SymptomSeries series;
    series.patient_id = id;
    series.moderators["age"] = rng.uniform_int(18, 65);
    series.moderators["sex"] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    series.moderators["synth_mod"] = truth.moderator;

    for (int t = 0; t < 24; ++t)  // settle after the probe pass
      advance_state(ctx, latent, baseline, 0.0, rng);

    double day = 0.0;
    for (int t = 0; t < n_obs; ++t) {
      const Eigen::VectorXi state = quantize_state(latent);
      model::ObservationPoint obs;
      obs.day = day;
      for (int j = 0; j < model::kItemCount; ++j) obs.items[j] = state[j];
      series.observations.push_back(obs);

      const VectorXd sd = state.cast<double>();
      const double energy = sd.dot(q * sd);
      truth.true_e0.push_back(energy);
      if (t + 1 == n_obs) break;

      const double planted_shift = -sum_gain * pilot.eta(energy, state.sum());
      advance_state(ctx, latent, baseline, planted_shift / model::kItemCount, rng);
      day += rng.uniform_int(spec.day_gap_min, spec.day_gap_max);
    }

    result.cohort.patients.push_back(std::move(series));
    result.truth.patients.push_back(std::move(truth));
  }
  return result;
}

double brute_force_energy(const MatrixXd& a, const MatrixXd& b, const VectorXd& x0,
                          const VectorXd& xt, double horizon, int n_steps) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  if (a.cols() != n || b.rows() != n || x0.size() != n || xt.size() != n)
    throw ValidationError("brute_force_energy: inconsistent dimensions");
  if (n_steps < 100) throw ValidationError("brute_force_energy: n_steps must be >= 100");
  if (!(horizon > 0)) throw ValidationError("brute_force_energy: horizon must be positive");

  const double dt = horizon / n_steps;

  // Exact interval propagation: F = exp(A dt), G = (int_0^dt exp(A tau) dtau) B.
  MatrixXd aug = MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = a * dt;
  aug.topRightCorner(n, m) = b * dt;
  const MatrixXd e = control::expm(aug);
  const MatrixXd f = e.topLeftCorner(n, n);
  const MatrixXd g = e.topRightCorner(n, m);

  // Reachability constraint: x_N = F^N x0 + [F^{N-1}G ... G] [u_0; ...; u_{N-1}].
  MatrixXd reach(n, n_steps * m);
  MatrixXd block = g;
  VectorXd free_response = x0;
  for (int k = n_steps - 1; k >= 0; --k) {
    reach.middleCols(k * m, m) = block;
    if (k > 0) block = f * block;
  }
  for (int k = 0; k < n_steps; ++k) free_response = f * free_response;

  const VectorXd rhs = xt - free_response;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(reach);
  const VectorXd u = cod.solve(rhs);
  const double residual = (reach * u - rhs).norm() / (1.0 + rhs.norm());
  if (residual > 1e-6)
    throw InfeasibleError("target unreachable: relative residual " +
                          std::to_string(residual));
  return dt * u.squaredNorm();
}

}  // namespace symdyn::synth
