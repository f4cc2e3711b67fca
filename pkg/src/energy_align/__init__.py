"""Post-hoc logit shifts that equalize per-class free energies."""

from .aligning import (
    ClusterAssignment,
    ShiftVector,
    apply_shifts,
    cluster_shifts,
    jenks_breaks,
    per_class_shifts,
    select_anchor,
    select_num_clusters,
)
from .errors import ConfigError, ContractError, ParseError
from .numerics import LogitMatrix, log_sum_exp, neg_free_energies, neg_free_energy

__all__ = [
    "ClusterAssignment",
    "ConfigError",
    "ContractError",
    "LogitMatrix",
    "ParseError",
    "ShiftVector",
    "apply_shifts",
    "cluster_shifts",
    "jenks_breaks",
    "log_sum_exp",
    "neg_free_energies",
    "neg_free_energy",
    "per_class_shifts",
    "select_anchor",
    "select_num_clusters",
]
