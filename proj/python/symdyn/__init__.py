"""Symptom-network control: per-patient network estimation, optimal-control
energies, driver-node analysis and the group-level statistics."""

from symdyn._core import (
    SymdynError,
    brute_force_energy,
    energy_to_zero,
    estimate_network,
    exact_controllability,
    fdr_by,
    group_inference,
    kendall_matrix,
    kendall_tau_b,
    loocv_compare,
    min_energy_gramian,
    moderation_ancova,
    optimal_control,
    partial_from_correlation,
    partial_significance,
    partial_significance_permutation,
    pbh_verify,
    random_network,
    select_driver_nodes,
    simulate_series,
    spearman_partial,
    synth_cohort,
)

__all__ = [
    "SymdynError",
    "brute_force_energy",
    "energy_to_zero",
    "estimate_network",
    "exact_controllability",
    "fdr_by",
    "group_inference",
    "kendall_matrix",
    "kendall_tau_b",
    "loocv_compare",
    "min_energy_gramian",
    "moderation_ancova",
    "optimal_control",
    "partial_from_correlation",
    "partial_significance",
    "partial_significance_permutation",
    "pbh_verify",
    "random_network",
    "select_driver_nodes",
    "simulate_series",
    "spearman_partial",
    "synth_cohort",
]

__version__ = "0.1.0"
