"""Single-iteration subband update rules.

Every step takes a :class:`WeightState` and the ``N`` frames of one decimated
index (or an ``(X, d)`` pair with ``X`` of shape ``(N, L)``), mutates the state
in place and returns it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .._validation import check_int, check_scalar
from ..exceptions import InvalidArgumentError, NonFiniteWarning
from ..filterbank import stack_frames
from ..robust import update_scale_and_threshold
from .state import REGULARIZATION, WeightState

KINDS = ("nlms", "nsaf", "m_nsaf", "tls_nsaf", "tlmm_nsaf")


@dataclass(frozen=True)
class AlgoParams:
    """Static configuration of one update rule."""

    kind: str = "tlmm_nsaf"
    step: float = 0.1
    num_subbands: int = 4
    filter_len: int = 128
    regularization: float = REGULARIZATION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown algorithm {self.kind!r}; expected one of {KINDS}")
        check_scalar(self.step, "step", low=0.0, low_inclusive=False)
        check_int(self.num_subbands, "num_subbands", 1)
        check_int(self.filter_len, "filter_len", 5)
        check_scalar(self.regularization, "regularization", low=0.0, low_inclusive=False)
        if self.kind == "nlms" and self.num_subbands != 1:
            raise InvalidArgumentError("nlms runs full-band; num_subbands must be 1")


def _stacked(state, frames):
    X, d = stack_frames(frames)
    X = np.asarray(X, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[1] != state.taps.size:
        raise InvalidArgumentError(
            f"regressor length {X.shape[-1]} does not match filter length {state.taps.size}"
        )
    if X.shape[0] != d.size:
        raise InvalidArgumentError("one desired sample is needed per regressor")
    return X, d


def subband_errors(state: WeightState, frames) -> np.ndarray:
    """A priori subband errors ``d_i - x_i^T w``."""
    X, d = _stacked(state, frames)
    return d - X @ state.taps


def _finite_or_warn(state, X, d):
    if np.all(np.isfinite(X)) and np.all(np.isfinite(d)):
        return True
    warnings.warn(
        f"non-finite regressor or desired sample at iteration {state.iteration}; frame skipped",
        NonFiniteWarning,
        stacklevel=3,
    )
    return False


def _tlmm_update(state, X, e, step, passed, eps):
    """Apply the gated TLS update for precomputed errors ``e``."""
    L = state.taps.size
    if L <= 2:
        raise InvalidArgumentError("the TLS update needs filter_len > 2")
    if state.theta <= 0:
        raise InvalidArgumentError("the TLS update needs theta > 0")
    if not np.any(passed):
        return
    w = state.taps
    wb = state.wbar_norm_sq()
    den = wb * wb * (L - 2) * (state.subband_power + eps)
    ep = np.where(passed, e, 0.0)
    c1 = step * wb * ep / den
    c2 = step * np.sum(ep * ep / den)
    state.taps = w + c1 @ X + c2 * w


def step_tlmm(state: WeightState, frames, step, *, gating=True, eps=REGULARIZATION) -> WeightState:
    """One gated total-least-mean-M-estimate iteration.

    Subband ``i`` contributes only when ``|e_i| < xi_i``; the scale trackers
    see every error.  With ``gating=False`` this is the plain TLS subband
    update.
    """
    X, d = _stacked(state, frames)
    if not _finite_or_warn(state, X, d):
        return state
    e = d - X @ state.taps
    state.update_power(X)
    _, xi = update_scale_and_threshold(state.scale, e)
    passed = np.abs(e) < xi if gating else np.ones(e.size, dtype=bool)
    _tlmm_update(state, X, e, step, passed, eps)
    state.last_errors = e
    state.last_passed = passed
    state.iteration += 1
    return state


def _nsaf_update(state, X, e, step, passed, eps):
    if not np.any(passed):
        return
    norms = np.einsum("ij,ij->i", X, X) + eps
    coef = step * np.where(passed, e, 0.0) / norms
    state.taps = state.taps + coef @ X


def step_baseline(state: WeightState, frames, params: AlgoParams) -> WeightState:
    """One iteration of a classical or TLS-family rule selected by ``params.kind``."""
    kind = params.kind
    if kind == "tlmm_nsaf":
        return step_tlmm(state, frames, params.step, eps=params.regularization)
    if kind == "tls_nsaf":
        return step_tlmm(state, frames, params.step, gating=False, eps=params.regularization)
    X, d = _stacked(state, frames)
    if not _finite_or_warn(state, X, d):
        return state
    e = d - X @ state.taps
    if kind == "m_nsaf":
        _, xi = update_scale_and_threshold(state.scale, e)
        passed = np.abs(e) < xi
    else:
        passed = np.ones(e.size, dtype=bool)
    _nsaf_update(state, X, e, params.step, passed, params.regularization)
    state.last_errors = e
    state.last_passed = passed
    state.iteration += 1
    return state


def nlms_step(state: WeightState, x, d, step, eps=REGULARIZATION) -> WeightState:
    """Full-band NLMS: ``w += mu e x / (||x||^2 + eps)``; ``eps`` may be 0."""
    X = np.asarray(x, dtype=np.float64).reshape(1, -1)
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    X, d = _stacked(state, (X, d))
    if not _finite_or_warn(state, X, d):
        return state
    e = d - X @ state.taps
    norm = float(X[0] @ X[0]) + eps
    if norm > 0:
        state.taps = state.taps + (step * e[0] / norm) * X[0]
    state.last_errors = e
    state.last_passed = np.ones(1, dtype=bool)
    state.iteration += 1
    return state
