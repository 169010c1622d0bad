"""M-estimate machinery: modified Huber cost and robust error-scale tracking.

The scale estimator keeps, per subband, a short window of squared errors and
smooths its median recursively::

    var(z) = lam * var(z-1) + k * (1 - lam) * median(window)
    xi     = 2.576 * sqrt(var(z))

with ``k = 1.483 * (1 + 5 / (N_w - 1))``.  Errors with ``|e| >= xi`` are
treated as impulsive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_scalar
from .exceptions import InvalidArgumentError

CONFIDENCE = 2.576
DEFAULT_WINDOW = 7
DEFAULT_FORGETTING = 0.95
VARIANCE_FLOOR = 1e-12


def huber_rho(error, threshold, wbar_norm_sq):
    """Modified Huber cost.

    ``e**2 / 2`` inside the threshold, ``threshold**2 * wbar_norm_sq / 2``
    outside it.  Dividing by ``wbar_norm_sq`` (as the TLS cost does) makes the
    clipped branch independent of the weights, so it contributes no gradient.
    """
    threshold = check_scalar(threshold, "threshold", low=0.0, low_inclusive=False)
    wbar_norm_sq = check_scalar(wbar_norm_sq, "wbar_norm_sq", low=0.0, low_inclusive=False)
    e = np.asarray(error, dtype=np.float64)
    out = np.where(np.abs(e) < threshold, 0.5 * e * e, 0.5 * threshold**2 * wbar_norm_sq)
    return float(out) if out.ndim == 0 else out


def correction_factor(window_len):
    """Finite-sample consistency factor ``1.483 * (1 + 5 / (N_w - 1))``."""
    window_len = check_int(window_len, "window_len", 2)
    return 1.483 * (1.0 + 5.0 / (window_len - 1))


@dataclass
class RobustScaleState:
    """Per-subband robust error-variance tracker.

    Arrays have one row per subband.  The window is a ring buffer of the most
    recent squared errors; before the first update it is empty and both the
    window and the previous variance are seeded from the first observation.

    Parameters
    ----------
    num_subbands : int
    window_len : int
        ``N_w``, at least 2.
    forgetting : float
        ``lambda_sigma`` in ``[0, 1]``.
    correction : float, optional
        Overrides the ``k`` factor; by default it follows ``window_len``.
    """

    num_subbands: int = 1
    window_len: int = DEFAULT_WINDOW
    forgetting: float = DEFAULT_FORGETTING
    correction: float | None = None
    confidence: float = CONFIDENCE
    variance: np.ndarray = field(default=None, repr=False)
    window: np.ndarray = field(default=None, repr=False)
    count: int = 0

    def __post_init__(self):
        self.num_subbands = check_int(self.num_subbands, "num_subbands", 1)
        self.window_len = check_int(self.window_len, "window_len", 2)
        self.forgetting = check_scalar(self.forgetting, "forgetting", 0.0, 1.0)
        self.confidence = check_scalar(self.confidence, "confidence", low=0.0, low_inclusive=False)
        if self.variance is None:
            self.variance = np.zeros(self.num_subbands)
        if self.window is None:
            self.window = np.zeros((self.num_subbands, self.window_len))

    @property
    def k(self):
        if self.correction is not None:
            return float(self.correction)
        return correction_factor(self.window_len)

    def filled(self):
        """Window contents, oldest first, for the entries seen so far."""
        n = min(self.count, self.window_len)
        if n == 0:
            return self.window[:, :0]
        idx = (np.arange(self.count - n, self.count)) % self.window_len
        return self.window[:, idx]

    def threshold(self):
        return self.confidence * np.sqrt(self.variance)

    def copy(self):
        return RobustScaleState(
            self.num_subbands, self.window_len, self.forgetting, self.correction,
            self.confidence, self.variance.copy(), self.window.copy(), self.count,
        )


def update_scale_and_threshold(state: RobustScaleState, new_error):
    """Push one error per subband, update the variance, return the thresholds.

    Mutates and returns ``state`` together with ``xi`` (one per subband).
    """
    e = np.asarray(new_error, dtype=np.float64).reshape(-1)
    if e.size != state.num_subbands:
        raise InvalidArgumentError(
            f"expected {state.num_subbands} errors, got {e.size}"
        )
    e2 = e * e
    if state.count == 0:
        state.window[:] = e2[:, None]
        state.variance = e2.copy()
    else:
        state.window[:, state.count % state.window_len] = e2
    state.count += 1
    med = np.median(state.window, axis=1)
    lam = state.forgetting
    state.variance = np.maximum(lam * state.variance + state.k * (1.0 - lam) * med, VARIANCE_FLOOR)
    return state, state.threshold()
