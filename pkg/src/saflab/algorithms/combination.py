"""Convex combination of two gated TLS subband filters with a variable step.

Branch 1 runs with the variable step ``mu_vss``, branch 2 with a fixed small
step ``mu2``.  The output is ``lambda * w1 + (1 - lambda) * w2`` with
``lambda = sigmoid(a)``; ``a`` follows a sign-gradient rule and is clamped to
``[-a_plus, a_plus]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._validation import check_scalar
from ..exceptions import InvalidArgumentError
from .state import REGULARIZATION, WeightState, init_state
from .updates import _stacked, step_tlmm

VSS_ALPHA = 0.99
VSS_BETA = 0.0058
A_PLUS = 4.0


def sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a)) if a > -700 else 0.0


@dataclass
class CombinationState:
    """Two branch states plus the mixing and variable-step trackers.

    ``a_plus`` may be ``inf`` and ``alpha`` may be ``+-inf`` (with
    ``mu_alpha = 0``) to pin the mixing parameter to exactly 1 or 0.
    """

    w1: WeightState
    w2: WeightState
    mu2: float
    mu_min: float
    mu_max: float
    mu_vss: float | None = None
    mu_alpha: float = 1.0
    alpha: float = 0.0
    a_plus: float = A_PLUS
    vss_alpha: float = VSS_ALPHA
    vss_beta: float = VSS_BETA
    vss: bool = True

    def __post_init__(self):
        if self.w1.taps.size != self.w2.taps.size or self.w1.num_subbands != self.w2.num_subbands:
            raise InvalidArgumentError("branch states must share filter length and subband count")
        if self.w1.theta != self.w2.theta:
            raise InvalidArgumentError("branch states must share theta")
        check_scalar(self.mu2, "mu2", low=0.0, low_inclusive=False)
        check_scalar(self.mu_min, "mu_min", low=0.0, low_inclusive=False)
        check_scalar(self.mu_max, "mu_max", low=self.mu_min)
        check_scalar(self.vss_alpha, "vss_alpha", 0.0, 1.0, False, False)
        check_scalar(self.vss_beta, "vss_beta", low=0.0, low_inclusive=False)
        check_scalar(self.mu_alpha, "mu_alpha", low=0.0)
        check_scalar(self.a_plus, "a_plus", low=0.0, low_inclusive=False)
        if self.mu_vss is None:
            self.mu_vss = self.mu_max
        self.mu_vss = min(max(self.mu_vss, self.mu_min), self.mu_max)
        self.alpha = min(max(float(self.alpha), -self.a_plus), self.a_plus)

    @property
    def mixing(self):
        return sigmoid(self.alpha)

    @property
    def taps(self):
        lam = self.mixing
        return lam * self.w1.taps + (1.0 - lam) * self.w2.taps


def update_vss_step(combo: CombinationState, errors, gated) -> float:
    """Recursive step update, held on impulse-gated frames, then clamped."""
    if not np.any(gated):
        e = np.asarray(errors, dtype=np.float64)
        combo.mu_vss = combo.vss_alpha * combo.mu_vss + combo.vss_beta * float(np.sum(e * e))
    combo.mu_vss = min(max(combo.mu_vss, combo.mu_min), combo.mu_max)
    return combo.mu_vss


def update_mixing(combo: CombinationState, overall_errors, y1, y2):
    """Sign-gradient update of the auxiliary parameter; returns ``(a, lambda)``."""
    g = float(np.sum(np.asarray(overall_errors) * (np.asarray(y1) - np.asarray(y2))))
    if combo.mu_alpha != 0.0:
        combo.alpha = combo.alpha + combo.mu_alpha * float(np.sign(g))
    combo.alpha = min(max(combo.alpha, -combo.a_plus), combo.a_plus)
    return combo.alpha, combo.mixing


def step_combination(combo: CombinationState, frames, eps=REGULARIZATION):
    """One combined iteration; returns the combo and the overall taps."""
    X, d = _stacked(combo.w1, frames)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(d))):
        step_tlmm(combo.w1, (X, d), combo.mu_vss, eps=eps)  # emits the diagnostic
        return combo, combo.taps
    lam = combo.mixing
    y1 = X @ combo.w1.taps
    y2 = X @ combo.w2.taps
    e = d - (lam * y1 + (1.0 - lam) * y2)
    step_tlmm(combo.w1, (X, d), combo.mu_vss, eps=eps)
    # a single-filter run pins lambda at 1 and never reads branch 2
    if not (lam == 1.0 and combo.mu_alpha == 0.0):
        step_tlmm(combo.w2, (X, d), combo.mu2, eps=eps)
    if combo.vss:
        gated = np.abs(e) >= combo.w1.scale.threshold()
        update_vss_step(combo, e, gated)
    update_mixing(combo, e, y1, y2)
    return combo, combo.taps


def make_combination(filter_len, num_subbands, theta, mu2, mu_max, *, mu_min=None,
                     mu_alpha=1.0, vss=True, subband_power=None, **kwargs):
    """Build a :class:`CombinationState` with two fresh zero-initialised branches."""
    w1 = init_state(filter_len, num_subbands, theta, subband_power=subband_power)
    w2 = init_state(filter_len, num_subbands, theta, subband_power=subband_power)
    return CombinationState(
        w1, w2, mu2=mu2, mu_min=mu2 if mu_min is None else mu_min, mu_max=mu_max,
        mu_alpha=mu_alpha, vss=vss, **kwargs,
    )
