"""Finite-space toolkit for progressive enlargement, invariance times and
counterparty-risk BSDEs."""

from .lattice import (
    AdaptedProcess,
    DensityPair,
    FiniteFilteredSpace,
    RandomTime,
    cond_exp,
    doob_decomposition,
    is_martingale,
    stoch_exp,
    stoch_integral,
)
from .enlargement import (
    AzemaBundle,
    ConditionBError,
    EnlargementPair,
    azema_bundle,
    check_condition_B,
    jeulin_yor,
    reduce,
    reduce_time,
)
from .invariance import (
    InvarianceReport,
    candidate_density,
    invariance_report,
    positivity_check,
    verify_condition_A,
)
from .bsde import BsdeSpec, Driver, solve_full, solve_reduced_P, solve_reduced_Q
from .scenarios import ScenarioDescriptor, generate

__version__ = "0.1.0"

__all__ = [
    "AdaptedProcess", "AzemaBundle", "BsdeSpec", "ConditionBError", "DensityPair", "Driver",
    "EnlargementPair", "FiniteFilteredSpace", "InvarianceReport", "RandomTime",
    "ScenarioDescriptor", "azema_bundle", "candidate_density", "check_condition_B", "cond_exp",
    "doob_decomposition", "generate", "invariance_report", "is_martingale", "jeulin_yor",
    "positivity_check", "reduce", "reduce_time", "solve_full", "solve_reduced_P",
    "solve_reduced_Q", "stoch_exp", "stoch_integral", "verify_condition_A",
]
