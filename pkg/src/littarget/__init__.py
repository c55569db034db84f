"""Locating soft-intervention targets from multi-environment data."""

from .ci import CiQuery, GraphOracle, PartialCorrelationTest, noise, obs, query
from .graph import (
    AugmentedGraph,
    AuxiliaryGraph,
    Dag,
    NodeKind,
    build_augmented_graph,
    build_auxiliary_graph,
    d_separated,
    has_inducing_path,
    oracle_indicator_sets,
    project_to_mag,
    theoretical_candidate_set,
)
from .matching import MatchStats, Mode, lit_fast, lit_match
from .sets import CandidateSet, IndicatorSets

__version__ = "0.1.0"
