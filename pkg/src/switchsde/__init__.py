"""switchsde: simulation and spectral stability certification for
feedback-controlled regime-switching diffusions with state-dependent
switching rates."""

from .stability import StabilityCertificate, certify, feasible_tau_search, k_tau, max_tau_for_contraction
from .coupling import (
    EnvelopePair,
    basic_coupling_rows,
    check_domination,
    check_two_state_conditions,
    full_coupling_generator,
    order_preserving_rows,
    skorokhod_partition,
    two_state_envelopes,
    verify_coupling_matrix,
)
from .engine import (
    HybridPath,
    McSummary,
    SimParams,
    monte_carlo,
    occupation_time_average,
    simulate_coupled,
    simulate_hybrid,
)
from .exprlang import EvalError, ParseError, evaluate, parse, to_source
from .markov import (
    exp_functional,
    invariant_measure,
    perron_root,
    skeleton_transition,
    spectral_abscissa,
    tilt,
    validate_generator,
)
from .scenario import Scenario, load_scenario, scenario_hash, validate_scenario

__all__ = [
    "StabilityCertificate", "certify", "feasible_tau_search", "k_tau",
    "max_tau_for_contraction", "EnvelopePair", "basic_coupling_rows",
    "check_domination", "check_two_state_conditions", "full_coupling_generator",
    "order_preserving_rows", "skorokhod_partition", "two_state_envelopes",
    "verify_coupling_matrix", "HybridPath", "McSummary", "SimParams",
    "monte_carlo", "occupation_time_average", "simulate_coupled",
    "simulate_hybrid", "EvalError", "ParseError", "evaluate", "parse",
    "to_source", "exp_functional", "invariant_measure", "perron_root",
    "skeleton_transition", "spectral_abscissa", "tilt", "validate_generator",
    "Scenario", "load_scenario", "scenario_hash", "validate_scenario",
]
