"""Adaptive subband update rules and estimator wrappers."""

from .combination import (
    CombinationState,
    make_combination,
    sigmoid,
    step_combination,
    update_mixing,
    update_vss_step,
)
from .estimators import (
    CTLMMNSAF,
    MNSAF,
    NLMS,
    NSAF,
    REGISTRY,
    TLMMNSAF,
    TLSNSAF,
    VSSCTLMMNSAF,
    VSSTLMMNSAF,
    default_mu_max,
    make_filter,
)
from .state import WeightState, init_state
from .updates import AlgoParams, nlms_step, step_baseline, step_tlmm, subband_errors

__all__ = [
    "AlgoParams", "CombinationState", "CTLMMNSAF", "MNSAF", "NLMS", "NSAF", "REGISTRY",
    "TLMMNSAF", "TLSNSAF", "VSSCTLMMNSAF", "VSSTLMMNSAF", "WeightState", "default_mu_max",
    "init_state", "make_combination", "make_filter", "nlms_step", "sigmoid", "step_baseline",
    "step_combination", "step_tlmm", "subband_errors", "update_mixing", "update_vss_step",
]
