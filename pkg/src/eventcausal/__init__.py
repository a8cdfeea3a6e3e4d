"""Graphical identifiability checks and likelihood-ratio reweighting for
continuous-time event histories (multivariate counting processes)."""

from .data import EventDataset, SubjectPath, read_dataset, write_dataset
from .estimation import (
    ContrastBand, StepCurve, bootstrap_bands, contrast, cumulative_incidence, reweighted_incidence_analysis,
    sup_distance, weighted_kaplan_meier,
)
from .graph import LocalIndependenceGraph, Node, NodeKind, build_graph, load_graph
from .separation import check_independent_censoring, check_theorem1, delta_separated, eliminable
from .simulation import (
    IntensityModel, SystemSpec, builtin_example_4_3, builtin_hpv_scenario, builtin_two_group, intervene,
    simulate_system,
)
from .weighting import (
    RatioProcess, WeightTrajectory, combined_weights, estimate_weights_ahw, exact_weights, nelson_aalen, theta_ratio,
)

__version__ = "0.1.0"
