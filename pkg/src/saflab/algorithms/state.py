"""Mutable adaptive-filter state shared by every subband update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._validation import check_int, check_scalar
from ..exceptions import InvalidArgumentError
from ..robust import DEFAULT_FORGETTING, DEFAULT_WINDOW, RobustScaleState

POWER_FORGETTING = 0.99
REGULARIZATION = 1e-6


@dataclass
class WeightState:
    """Full-band taps plus per-subband auxiliary estimates.

    ``subband_power`` holds the current estimate of each subband's input
    variance.  Unless ``power_fixed`` is set it is a bias-corrected
    exponential average of ``||x_i(z)||^2 / n_valid``, where ``n_valid`` counts
    the regressor entries that are not zero padding (decimated index ``z``
    starts at 0 with an empty history).
    """

    taps: np.ndarray
    theta: float = 1.0
    num_subbands: int = 1
    scale: RobustScaleState | None = None
    subband_power: np.ndarray | None = None
    power_fixed: bool = False
    power_forgetting: float = POWER_FORGETTING
    iteration: int = 0
    last_errors: np.ndarray | None = field(default=None, repr=False)
    last_passed: np.ndarray | None = field(default=None, repr=False)
    _power_acc: np.ndarray | None = field(default=None, repr=False)

    @property
    def filter_len(self):
        return self.taps.size

    def wbar_norm_sq(self):
        """``||w||^2 + theta``, the squared norm of the augmented vector."""
        return float(np.dot(self.taps, self.taps)) + self.theta

    def update_power(self, regressors):
        if self.power_fixed:
            return self.subband_power
        L = self.taps.size
        n_valid = min(L, self.iteration * self.num_subbands + 1)
        inst = np.einsum("ij,ij->i", regressors, regressors) / n_valid
        lam = self.power_forgetting
        if self._power_acc is None:
            self._power_acc = (1.0 - lam) * inst
        else:
            self._power_acc = lam * self._power_acc + (1.0 - lam) * inst
        self.subband_power = self._power_acc / (1.0 - lam ** (self.iteration + 1))
        return self.subband_power

    def copy(self):
        return WeightState(
            self.taps.copy(), self.theta, self.num_subbands,
            None if self.scale is None else self.scale.copy(),
            None if self.subband_power is None else self.subband_power.copy(),
            self.power_fixed, self.power_forgetting, self.iteration,
            None if self.last_errors is None else self.last_errors.copy(),
            None if self.last_passed is None else self.last_passed.copy(),
            None if self._power_acc is None else self._power_acc.copy(),
        )


def init_state(filter_len, num_subbands=1, theta=1.0, *, window_len=DEFAULT_WINDOW,
               forgetting=DEFAULT_FORGETTING, confidence=None, subband_power=None,
               power_forgetting=POWER_FORGETTING, taps=None):
    """Fresh state with ``w(0) = 0`` (or the given ``taps``).

    Passing ``subband_power`` pins the per-subband input variances to known
    values instead of estimating them.
    """
    filter_len = check_int(filter_len, "filter_len", 1)
    num_subbands = check_int(num_subbands, "num_subbands", 1)
    theta = check_scalar(theta, "theta", low=0.0)
    scale = RobustScaleState(num_subbands, window_len, forgetting)
    if confidence is not None:
        scale.confidence = check_scalar(confidence, "confidence", low=0.0, low_inclusive=False)
    w = np.zeros(filter_len) if taps is None else np.array(taps, dtype=np.float64)
    if w.shape != (filter_len,):
        raise InvalidArgumentError(f"taps must have length {filter_len}")
    power = None
    if subband_power is not None:
        power = np.broadcast_to(np.asarray(subband_power, dtype=np.float64), (num_subbands,)).copy()
        if np.any(power <= 0):
            raise InvalidArgumentError("subband_power entries must be positive")
    return WeightState(
        taps=w,
        theta=theta,
        num_subbands=num_subbands,
        scale=scale,
        subband_power=power,
        power_fixed=power is not None,
        power_forgetting=check_scalar(power_forgetting, "power_forgetting", 0.0, 1.0, high_inclusive=False),
    )
