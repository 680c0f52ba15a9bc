"""Galton-Watson processes in varying environment.

Offspring laws with exact pgf machinery, environments with their normalizing
constants and regime diagnostics, composed generating-function transforms,
brute-force exact population laws, one- and two-spine tree samplers, and a
verification suite that checks the limit theorems those pieces imply.
"""

from .environment import Environment, RegimeDiagnostics
from .offspring import (
    Binomial,
    DistributionError,
    FiniteTable,
    Geometric,
    OffspringDistribution,
    Poisson,
)
from .oracle import ExactPmf, TailBudgetError, exact_pmf, tv_distance
from .spines import (
    LabeledTree,
    NodeBudgetExceeded,
    sample_gw_tree,
    sample_one_spine,
    sample_two_spine,
)
from .streams import stream

__version__ = "0.1.0"

__all__ = [
    "Binomial",
    "DistributionError",
    "Environment",
    "ExactPmf",
    "FiniteTable",
    "Geometric",
    "LabeledTree",
    "NodeBudgetExceeded",
    "OffspringDistribution",
    "Poisson",
    "RegimeDiagnostics",
    "TailBudgetError",
    "exact_pmf",
    "sample_gw_tree",
    "sample_one_spine",
    "sample_two_spine",
    "stream",
    "tv_distance",
    "__version__",
]
