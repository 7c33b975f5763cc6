"""Smoke tests for the Python bindings of the main operations."""

import math

import numpy as np
import pytest

import symdyn


def test_kendall_tau_b():
    assert symdyn.kendall_tau_b([0, 1, 2, 3], [0, 1, 2, 3]) == pytest.approx(1.0)
    assert symdyn.kendall_tau_b([1, 1, 2, 3], [2, 1, 3, 3]) == pytest.approx(0.8)
    assert math.isnan(symdyn.kendall_tau_b([2, 2, 2], [0, 1, 2]))


def test_network_pipeline_shapes():
    rng = np.random.default_rng(5)
    data = rng.integers(0, 4, size=(60, 21)).astype(float)
    net = symdyn.estimate_network(data, alpha=0.05)
    a = np.asarray(net["a"])
    assert a.shape == (21, 21)
    assert np.allclose(a, a.T)
    assert np.all(np.diag(a) == 0.0)
    assert net["diagnostics"]["backend"] == "analytic"
    assert net["diagnostics"]["n_tests"] == 210

    tau = np.asarray(symdyn.kendall_matrix(data))
    partial, ridge = symdyn.partial_from_correlation(tau)
    assert np.asarray(partial).shape == (21, 21)
    assert ridge >= 0.0


def test_fdr_by():
    assert symdyn.fdr_by([0.04], 0.05) == [True]
    assert symdyn.fdr_by([1.0, 1.0]) == [False, False]


def test_control_energy_against_analytic_case():
    a = np.zeros((4, 4))
    b = np.eye(4)
    x0 = np.array([3.0, 0.0, 0.0, 0.0])
    traj = symdyn.optimal_control(a, b, x0, np.zeros(4))
    assert traj["converged"]
    assert traj["energy"] == pytest.approx(9.0, rel=1e-6)

    gram = symdyn.min_energy_gramian(a, b, x0, np.zeros(4))
    assert gram["energy"] == pytest.approx(9.0, rel=1e-9)

    brute = symdyn.brute_force_energy(a, b, x0, np.zeros(4), 1.0, 1000)
    assert brute == pytest.approx(9.0, rel=1e-2)

    e0 = symdyn.energy_to_zero(a, np.array([1.0, 2.0, 0.0, 3.0]))
    assert e0["converged"]
    assert e0["e0"] == pytest.approx(14.0, rel=1e-6)


def test_driver_analysis():
    zero = np.zeros((5, 5))
    ec = symdyn.exact_controllability(zero)
    assert ec["n_d"] == 5

    drivers = symdyn.select_driver_nodes(zero)
    assert drivers["drivers"] == [0, 1, 2, 3, 4]
    assert drivers["pbh_lambda_m"]

    controllable, _ = symdyn.pbh_verify(zero, np.eye(5))
    assert controllable


def test_statistics():
    rng = np.random.default_rng(11)
    x = rng.normal(size=100)
    c = rng.normal(size=100)
    y = 0.5 * x + 0.5 * c + rng.normal(size=100)
    precision = symdyn.spearman_partial(x, y, [c])
    residual = symdyn.spearman_partial(x, y, [c], method="residual")
    assert precision == pytest.approx(residual, abs=1e-10)

    z = [math.atanh(-0.26)] * 109
    group = symdyn.group_inference(z)
    assert group["df"] == 107
    assert group["p_one_tailed"] == pytest.approx(0.003164, abs=5e-4)

    moderation = symdyn.moderation_ancova(
        rng.normal(size=60).tolist(),
        rng.normal(size=60).tolist(),
        rng.normal(size=(60, 6)),
    )
    assert moderation["df1"] == 1
    assert moderation["df2"] == 52

    with pytest.raises(symdyn.SymdynError):
        symdyn.group_inference([0.1, 0.2])


def test_synth_cohort_roundtrip():
    patients = symdyn.synth_cohort(
        n_patients=3, n_obs_min=10, n_obs_max=14, coupling_strength=0.3, seed=42
    )
    assert len(patients) == 3
    again = symdyn.synth_cohort(
        n_patients=3, n_obs_min=10, n_obs_max=14, coupling_strength=0.3, seed=42
    )
    for p, q in zip(patients, again):
        items = np.asarray(p["items"])
        assert items.shape[1] == 21
        assert items.min() >= 0 and items.max() <= 3
        assert np.array_equal(items, np.asarray(q["items"]))
        assert len(p["true_e0"]) == items.shape[0]
        assert p["planted_coupling"] <= 0.0

    series = symdyn.simulate_series(np.zeros((21, 21)), 10, 0.0, seed=1)
    assert np.all(np.asarray(series["items"]) == 0)


def test_loocv_compare():
    rng = np.random.default_rng(17)
    patients = []
    for _ in range(5):
        e0 = rng.uniform(0, 50, size=12)
        bdi = rng.uniform(0, 40, size=12)
        delta = 3.0 - 0.4 * e0 + rng.normal(size=12)
        patients.append((e0.tolist(), bdi.tolist(), delta.tolist()))
    result = symdyn.loocv_compare(patients)
    assert result["mae_e0"] < result["mae_bdi"]
    assert 0.0 <= result["p_compare"] <= 1.0
