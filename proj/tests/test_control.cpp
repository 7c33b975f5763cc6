#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "symdyn/control.hpp"

using namespace symdyn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("expm: matches the eigendecomposition oracle on symmetric input") {
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 5; ++rep) {
    const MatrixXd a = oracles::random_symmetric(21, 3.0, rng);
    const MatrixXd diff = control::expm(a) - oracles::expm_symmetric(a);
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("optimal_control: decoupled system has constant input and energy |x0|^2") {
  const MatrixXd a = MatrixXd::Zero(4, 4);
  const MatrixXd b = MatrixXd::Identity(4, 4);
  VectorXd x0(4);
  x0 << 3, 0, 0, 0;
  const auto traj = control::optimal_control(a, b, x0, VectorXd::Zero(4), {});
  CHECK(traj.converged);
  CHECK(traj.energy == doctest::Approx(9.0).epsilon(1e-6));
  for (int k = 0; k < traj.u.rows(); k += 100) {
    CHECK(traj.u(k, 0) == doctest::Approx(-3.0).epsilon(1e-9));
    CHECK(traj.u(k, 1) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("optimal_control: zero-to-zero transfer costs nothing") {
  const MatrixXd a = MatrixXd::Zero(3, 3);
  const auto traj = control::optimal_control(a, MatrixXd::Identity(3, 3),
                                             VectorXd::Zero(3), VectorXd::Zero(3), {});
  CHECK(traj.converged);
  CHECK(traj.energy == doctest::Approx(0.0));
  CHECK(traj.u.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("optimal_control: agrees with the Gramian closed form on random networks") {
  std::mt19937_64 rng(103);
  for (int rep = 0; rep < 5; ++rep) {
    const MatrixXd a = oracles::random_symmetric(6, 1.4, rng);
    const MatrixXd b = MatrixXd::Identity(6, 6);
    const VectorXd x0 = oracles::random_vector(6, 2.0, rng);
    const VectorXd xt = VectorXd::Zero(6);
    const auto traj = control::optimal_control(a, b, x0, xt, {});
    const auto gram = control::min_energy_gramian(a, b, x0, xt, 1.0);
    CHECK(traj.converged);
    CHECK(traj.boundary_error <= 1e-6);
    CHECK(traj.energy ==
          doctest::Approx(gram.energy).epsilon(1e-4));
  }
}

TEST_CASE("optimal_control: quadratic scaling in the boundary states") {
  std::mt19937_64 rng(107);
  const MatrixXd a = oracles::random_symmetric(5, 1.0, rng);
  const MatrixXd b = MatrixXd::Identity(5, 5);
  const VectorXd x0 = oracles::random_vector(5, 1.0, rng);
  const auto base = control::optimal_control(a, b, x0, VectorXd::Zero(5), {});
  const auto scaled = control::optimal_control(a, b, 2.0 * x0, VectorXd::Zero(5), {});
  CHECK(scaled.energy == doctest::Approx(4.0 * base.energy).epsilon(1e-6));
}

TEST_CASE("optimal_control: halving the step barely moves the energy") {
  std::mt19937_64 rng(109);
  const MatrixXd a = oracles::random_symmetric(6, 1.5, rng);
  const VectorXd x0 = oracles::random_vector(6, 2.0, rng);
  control::ControlConfig coarse, fine;
  fine.step = coarse.step / 2.0;
  const auto c = control::optimal_control(a, MatrixXd::Identity(6, 6), x0,
                                          VectorXd::Zero(6), coarse);
  const auto f = control::optimal_control(a, MatrixXd::Identity(6, 6), x0,
                                          VectorXd::Zero(6), fine);
  CHECK(std::abs(c.energy - f.energy) / f.energy < 1e-3);
}

TEST_CASE("optimal_control: state cost with nonzero target uses the affine term") {
  std::mt19937_64 rng(113);
  const MatrixXd a = oracles::random_symmetric(4, 0.8, rng);
  const VectorXd x0 = oracles::random_vector(4, 1.0, rng);
  const VectorXd xt = oracles::random_vector(4, 1.0, rng);
  control::ControlConfig cfg;
  cfg.use_state_cost = true;
  const auto traj = control::optimal_control(a, MatrixXd::Identity(4, 4), x0, xt, cfg);
  CHECK(traj.converged);
  CHECK((traj.x.row(traj.x.rows() - 1).transpose() - xt).norm() <
        cfg.boundary_tol * (1 + x0.norm()));
  CHECK(traj.energy >= 0.0);
}

TEST_CASE("optimal_control: unreachable target reports non-convergence") {
  const MatrixXd a = MatrixXd::Zero(3, 3);
  const MatrixXd b = MatrixXd::Zero(3, 1);  // no actuation at all
  VectorXd x0(3);
  x0 << 1, 1, 1;
  CHECK_THROWS_AS(control::optimal_control(a, b, x0, VectorXd::Zero(3), {}),
                  NonConvergentError);
}

TEST_CASE("min_energy_gramian: identity Gramian for A = 0") {
  const MatrixXd a = MatrixXd::Zero(4, 4);
  VectorXd x0(4), xt(4);
  x0 << 1, 2, 0, -1;
  xt << 0, 1, 1, 0;
  const auto gram = control::min_energy_gramian(a, MatrixXd::Identity(4, 4), x0, xt, 1.0);
  CHECK(gram.energy == doctest::Approx((xt - x0).squaredNorm()).epsilon(1e-10));
  CHECK(gram.gramian_condition == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("min_energy_gramian: analytic scalar case") {
  MatrixXd a(1, 1), b(1, 1);
  a << 1.0;
  b << 1.0;
  VectorXd x0(1), xt(1);
  x0 << 1.0;
  xt << 0.0;
  const auto gram = control::min_energy_gramian(a, b, x0, xt, 1.0);
  // W = (e^2 - 1)/2, energy = 2 e^2 / (e^2 - 1)
  CHECK(gram.energy == doctest::Approx(2.3130352854993315).epsilon(1e-10));
}

TEST_CASE("min_energy_gramian: uncontrollable pair is rejected") {
  MatrixXd a = MatrixXd::Zero(2, 2);
  MatrixXd b(2, 1);
  b << 1.0, 0.0;  // second state untouched by input and dynamics
  VectorXd x0 = VectorXd::Zero(2), xt = VectorXd::Zero(2);
  CHECK_THROWS_AS(control::min_energy_gramian(a, b, x0, xt, 1.0), IllConditionedError);
}

namespace {

netest::SymptomNetwork wrap_network(const MatrixXd& a) {
  netest::SymptomNetwork net;
  net.a = a;
  net.pvalues = MatrixXd::Zero(a.rows(), a.cols());
  net.mask.setConstant(a.rows(), a.cols(), true);
  net.n_obs = 10;
  return net;
}

}  // namespace

TEST_CASE("energy_to_zero: zero state and zero network") {
  const auto net = wrap_network(MatrixXd::Zero(21, 21));
  const auto zero = control::energy_to_zero(net, VectorXd::Zero(21), {});
  CHECK(zero.converged);
  CHECK(zero.e0 == doctest::Approx(0.0));

  VectorXd x0 = VectorXd::Zero(21);
  x0[0] = 3;
  x0[4] = 2;
  x0[9] = 1;  // sum of squares 14
  const auto result = control::energy_to_zero(net, x0, {});
  CHECK(result.e0 == doctest::Approx(14.0).epsilon(1e-6));

  VectorXd bad = VectorXd::Zero(21);
  bad[2] = 4.0;
  CHECK_THROWS_AS(control::energy_to_zero(net, bad, {}), ValidationError);
}

TEST_CASE("energy_to_zero: quadratic scaling on a random valid network") {
  std::mt19937_64 rng(127);
  const auto net = wrap_network(oracles::random_symmetric(21, 1.2, rng));
  VectorXd x0 = VectorXd::Zero(21);
  for (int i = 0; i < 21; ++i) x0[i] = static_cast<double>(rng() % 2);  // 0/1 items
  const auto one = control::energy_to_zero(net, x0, {});
  const auto two = control::energy_to_zero(net, 2.0 * x0, {});
  CHECK(two.e0 == doctest::Approx(4.0 * one.e0).epsilon(1e-6));
}

TEST_CASE("energy_to_zero: normalization flag is applied and recorded") {
  std::mt19937_64 rng(131);
  const auto net = wrap_network(oracles::random_symmetric(21, 2.0, rng));
  VectorXd x0 = VectorXd::Constant(21, 1.0);
  control::ControlConfig cfg;
  cfg.normalize_a = true;
  const auto normalized = control::energy_to_zero(net, x0, cfg);
  const auto raw = control::energy_to_zero(net, x0, {});
  CHECK(normalized.normalized_a);
  CHECK_FALSE(raw.normalized_a);
  CHECK(normalized.e0 != doctest::Approx(raw.e0));
}

TEST_CASE("energy_series: cardinality, zero-symptom index, exclusion path") {
  std::mt19937_64 rng(137);
  model::SymptomSeries series;
  series.patient_id = "p";
  for (int t = 0; t < 15; ++t) {
    model::ObservationPoint obs;
    obs.day = 14.0 * t;
    for (auto& item : obs.items) item = static_cast<int>(rng() % 3);
    if (t == 4) obs.items.fill(0);
    series.observations.push_back(obs);
  }
  const auto net = wrap_network(oracles::random_symmetric(21, 1.0, rng));
  const auto energies = control::energy_series(series, net, {});
  REQUIRE(energies.points.size() == 15);
  CHECK_FALSE(energies.excluded);
  CHECK(energies.points[4].e0 == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(energies.points[4].bdi_sum == 0);
  for (const auto& p : energies.points) {
    CHECK(p.converged);
    CHECK(p.e0 >= 0.0);
  }

  control::ControlConfig dead;
  dead.input.matrix = MatrixXd::Zero(21, 1);  // degenerate input: nothing reachable
  const auto excluded = control::energy_series(series, net, dead);
  CHECK(excluded.excluded);
  CHECK_FALSE(excluded.exclusion_reason.empty());
}

TEST_CASE("exact_controllability: diagonal, zero, and star-graph spectra") {
  MatrixXd diag = MatrixXd::Zero(3, 3);
  diag.diagonal() << 1, 2, 3;
  const auto d = control::exact_controllability(diag);
  CHECK(d.n_d == 1);
  CHECK(d.table.size() == 3);

  const auto z = control::exact_controllability(MatrixXd::Zero(5, 5));
  CHECK(z.n_d == 5);
  CHECK(z.table.size() == 1);
  CHECK(z.lambda_m.real() == doctest::Approx(0.0));

  // K_{1,3}: hub node 0, eigenvalues {sqrt(3), -sqrt(3), 0, 0}
  MatrixXd star = MatrixXd::Zero(4, 4);
  for (int leaf = 1; leaf < 4; ++leaf) star(0, leaf) = star(leaf, 0) = 1.0;
  const auto s = control::exact_controllability(star);
  CHECK(s.n_d == 2);
  CHECK(s.lambda_m.real() == doctest::Approx(0.0));
  bool found_root3 = false;
  for (const auto& entry : s.table)
    if (std::abs(entry.value.real() - std::sqrt(3.0)) < 1e-9) {
      found_root3 = true;
      CHECK(entry.geometric_multiplicity == 1);
    }
  CHECK(found_root3);
}

TEST_CASE("exact_controllability: symmetric multiplicities sum to N") {
  std::mt19937_64 rng(139);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 3 + static_cast<int>(rng() % 10);
    const MatrixXd a = oracles::random_symmetric(n, 2.0, rng);
    const auto result = control::exact_controllability(a);
    int total = 0;
    for (const auto& e : result.table) total += e.geometric_multiplicity;
    CHECK(total == n);
  }
}

TEST_CASE("select_driver_nodes: zero matrix needs every node") {
  const auto analysis = control::select_driver_nodes(MatrixXd::Zero(3, 3));
  CHECK(analysis.n_d == 3);
  CHECK(analysis.drivers == std::vector<int>{0, 1, 2});
  CHECK(analysis.pbh_lambda_m);
  CHECK(analysis.pbh_all);
}

TEST_CASE("select_driver_nodes: identical disconnected dyads get one driver each") {
  MatrixXd a = MatrixXd::Zero(4, 4);
  a(0, 1) = a(1, 0) = 0.7;
  a(2, 3) = a(3, 2) = 0.7;
  const auto analysis = control::select_driver_nodes(a);
  CHECK(analysis.n_d == 2);
  REQUIRE(analysis.drivers.size() == 2);
  const bool one_per_dyad = (analysis.drivers[0] < 2) != (analysis.drivers[1] < 2);
  CHECK(one_per_dyad);
  CHECK(analysis.pbh_lambda_m);
  CHECK(analysis.pbh_all);
  // positive eigenvalue preferred among the tied multiplicities
  CHECK(analysis.lambda_m.real() == doctest::Approx(0.7));
}

TEST_CASE("select_driver_nodes: distinct spectrum needs a single driver") {
  std::mt19937_64 rng(149);
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd a = oracles::random_symmetric(7, 2.0, rng);
    const auto analysis = control::select_driver_nodes(a);
    CHECK(analysis.n_d == 1);
    CHECK(analysis.pbh_lambda_m);
  }
}

TEST_CASE("select_driver_nodes: removing any chosen driver breaks the rank") {
  std::mt19937_64 rng(151);
  MatrixXd a = MatrixXd::Zero(6, 6);
  a(0, 1) = a(1, 0) = 0.5;
  a(2, 3) = a(3, 2) = 0.5;
  a(4, 5) = a(5, 4) = 0.5;
  const auto analysis = control::select_driver_nodes(a);
  REQUIRE(analysis.n_d == 3);
  for (size_t drop = 0; drop < analysis.drivers.size(); ++drop) {
    MatrixXd b = MatrixXd::Zero(6, static_cast<int>(analysis.drivers.size()) - 1);
    int c = 0;
    for (size_t i = 0; i < analysis.drivers.size(); ++i)
      if (i != drop) b(analysis.drivers[i], c++) = 1.0;
    bool full_at_lambda_m = false;
    for (const auto& [lambda, full] : control::pbh_verify(a, b).per_eigenvalue)
      if (std::abs(lambda - analysis.lambda_m) < 1e-9) full_at_lambda_m = full;
    CHECK_FALSE(full_at_lambda_m);
  }
}

TEST_CASE("pbh_verify: identity input, unit-column failure, path graph") {
  std::mt19937_64 rng(157);
  const MatrixXd a = oracles::random_symmetric(5, 2.0, rng);
  CHECK(control::pbh_verify(a, MatrixXd::Identity(5, 5)).controllable);

  MatrixXd b(2, 1);
  b << 1, 0;
  CHECK_FALSE(control::pbh_verify(MatrixXd::Zero(2, 2), b).controllable);

  MatrixXd path = MatrixXd::Zero(4, 4);
  for (int i = 0; i < 3; ++i) path(i, i + 1) = path(i + 1, i) = 1.0;
  MatrixXd end(4, 1);
  end << 1, 0, 0, 0;
  CHECK(control::pbh_verify(path, end).controllable);
  CHECK(oracles::kalman_controllable(path, end, 1e-8));
}

TEST_CASE("pbh_verify: agrees with the Kalman rank test on random instances") {
  std::mt19937_64 rng(163);
  int checked = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 7);
    const MatrixXd a = oracles::random_symmetric(n, 2.0, rng);
    const int m = 1 + static_cast<int>(rng() % n);
    MatrixXd b = MatrixXd::Zero(n, m);
    for (int c = 0; c < m; ++c) b(static_cast<int>(rng() % n), c) = 1.0;
    const bool pbh = control::pbh_verify(a, b).controllable;
    const bool kalman = oracles::kalman_controllable(a, b, 1e-8);
    CHECK(pbh == kalman);
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("driver_summary: zero and distinct-spectrum cohorts") {
  std::vector<control::DriverAnalysis> zeros;
  for (int i = 0; i < 5; ++i)
    zeros.push_back(control::select_driver_nodes(MatrixXd::Zero(21, 21)));
  const auto zsum = control::driver_summary(zeros);
  CHECK(zsum.median_n_d == doctest::Approx(21.0));
  for (int count : zsum.item_driver_counts) CHECK(count == 5);

  std::mt19937_64 rng(167);
  std::vector<control::DriverAnalysis> distinct;
  for (int i = 0; i < 7; ++i)
    distinct.push_back(control::select_driver_nodes(oracles::random_symmetric(21, 2.0, rng)));
  const auto dsum = control::driver_summary(distinct);
  CHECK(dsum.median_n_d == doctest::Approx(1.0));
  CHECK(dsum.n_networks == 7);
  int total = 0;
  for (int count : dsum.item_driver_counts) total += count;
  CHECK(total == 7);  // one driver per network
}

TEST_CASE("driver_summary: agrees with per-network exact controllability") {
  std::mt19937_64 rng(173);
  std::vector<control::DriverAnalysis> analyses;
  std::vector<int> expected_nd;
  for (int i = 0; i < 9; ++i) {
    MatrixXd a;
    if (i % 3 == 0) {
      a = MatrixXd::Zero(21, 21);  // n_d = 21
    } else if (i % 3 == 1) {
      a = oracles::random_symmetric(21, 1.5, rng);  // distinct spectrum, n_d = 1
    } else {
      a = MatrixXd::Zero(21, 21);  // block of identical dyads
      for (int d = 0; d + 1 < 8; d += 2) a(d, d + 1) = a(d + 1, d) = 0.4;
    }
    analyses.push_back(control::select_driver_nodes(a));
    expected_nd.push_back(control::exact_controllability(a).n_d);
  }
  for (size_t i = 0; i < analyses.size(); ++i) CHECK(analyses[i].n_d == expected_nd[i]);

  const auto summary = control::driver_summary(analyses);
  std::vector<int> sorted = expected_nd;
  std::sort(sorted.begin(), sorted.end());
  CHECK(summary.min_n_d == sorted.front());
  CHECK(summary.max_n_d == sorted.back());
  CHECK(summary.median_n_d == doctest::Approx(sorted[sorted.size() / 2]));
  int total_counts = 0;
  for (int c : summary.item_driver_counts) total_counts += c;
  int total_drivers = 0;
  for (const auto& a : analyses) total_drivers += static_cast<int>(a.drivers.size());
  CHECK(total_counts == total_drivers);
}

TEST_CASE("control config validation") {
  control::ControlConfig cfg;
  cfg.step = 2.0;  // > horizon
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.rho = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.input.nodes = std::vector<int>{0, 0};
  CHECK_THROWS_AS(cfg.input.materialize(5), ValidationError);
  cfg.input.nodes = std::vector<int>{1, 3};
  const MatrixXd b = cfg.input.materialize(5);
  CHECK(b.rows() == 5);
  CHECK(b.cols() == 2);
  CHECK(b(1, 0) == 1.0);
  CHECK(b(3, 1) == 1.0);
}
