"""Scikit-learn style wrappers around the subband update rules.

Signals are one-dimensional: ``fit(x, d)`` adapts on the noisy input ``x``
and desired ``d`` sample by sample, and ``predict(x)`` filters a new input with
the final taps.  Passing ``plant`` to ``fit`` records the NMSD learning curve.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_int, check_scalar, check_signal, check_signal_pair, check_taps
from ..exceptions import InvalidArgumentError
from ..filterbank import SubbandStream, design_bank
from ..metrics import nmsd
from ..robust import CONFIDENCE, DEFAULT_FORGETTING, DEFAULT_WINDOW
from .combination import CombinationState, step_combination
from .state import POWER_FORGETTING, REGULARIZATION, init_state
from .updates import AlgoParams, step_baseline

DIVERGENCE_DB = 100.0


class _SubbandFilter(RegressorMixin, BaseEstimator):
    """Shared adaptation loop.

    Subclasses provide ``_start(num_subbands)``, ``_step(X, d)`` and
    ``_taps()``.

    Fitted attributes
    -----------------
    coef_ : ndarray of shape (filter_len,)
    n_iter_ : int
        Decimated iterations actually run.
    nmsd_ : ndarray
        NMSD in dB of ``w(z)`` before each update (only with ``plant``).
        Truncated at the iteration where it exceeds ``divergence_db``.
    diverged_ : bool
    residual_ : ndarray
        Full-band a priori error ``d(n) - w(z)^T x(n)`` (only with
        ``residual=True``).
    gated_fraction_ : float
        Fraction of subband updates skipped by the robust gate.
    """

    _fixed_subbands = None

    def _num_subbands(self):
        if self._fixed_subbands is not None:
            return self._fixed_subbands
        return check_int(self.n_subbands, "n_subbands", 1)

    def _make_stream(self, x, d):
        n = self._num_subbands()
        proto = getattr(self, "proto_len", None)
        bank = design_bank(n, proto)
        return SubbandStream(bank, x, d, check_int(self.filter_len, "filter_len", 5))

    def fit(self, X, y, plant=None, residual=False, divergence_db=DIVERGENCE_DB):
        """Adapt on the whole input/desired pair.

        Parameters
        ----------
        X : array-like of shape (n_samples,)
            Noisy input.
        y : array-like of shape (n_samples,)
            Noisy desired signal.
        plant : array-like of shape (filter_len,), optional
            True response, used only to record ``nmsd_``.
        residual : bool
            Record the full-band a priori error in ``residual_``.
        divergence_db : float
            NMSD level that stops the run and sets ``diverged_``.
        """
        x, d = check_signal_pair(X, y, allow_empty=False)
        stream = self._make_stream(x, d)
        L, N = stream.filter_len, stream.num_subbands
        if plant is not None:
            h = check_taps(plant)
            if h.size != L:
                raise InvalidArgumentError(f"plant length {h.size} != filter_len {L}")
        self._start(N)
        Z = stream.num_frames
        curve = np.empty(Z) if plant is not None else None
        res = np.zeros(x.size) if residual else None
        if residual:
            full = sliding_window_view(np.concatenate([np.zeros(L - 1), x]), L)[:, ::-1]
        gated = passed = 0
        diverged = False
        z_done = n_curve = 0
        for z in range(Z):
            w = self._taps()
            if curve is not None:
                curve[z] = nmsd(w, h)
                n_curve = z + 1
                if curve[z] > divergence_db:
                    diverged = True
                    break
            if residual:
                n0 = z * N
                n1 = min(n0 + N, x.size)
                res[n0:n1] = d[n0:n1] - full[n0:n1] @ w
            self._step(stream.regressors(z), stream.desired(z))
            mask = self._last_passed()
            if mask is not None:
                passed += int(np.count_nonzero(mask))
                gated += int(mask.size - np.count_nonzero(mask))
            z_done = z + 1
            if not np.all(np.isfinite(self._taps())):
                diverged = True
                break
        self.coef_ = np.array(self._taps())
        self.n_iter_ = z_done
        self.diverged_ = diverged
        if curve is not None:
            self.nmsd_ = curve[:n_curve]
        if residual:
            self.residual_ = res
        total = gated + passed
        self.gated_fraction_ = gated / total if total else 0.0
        return self

    def predict(self, X):
        """Filter ``X`` with the learned taps (zero initial history)."""
        check_is_fitted(self, "coef_")
        return lfilter(self.coef_, 1.0, check_signal(X, "X"))

    def _last_passed(self):
        return getattr(self._state, "last_passed", None)


class _SingleFilter(_SubbandFilter):
    _kind = None

    def _params(self, num_subbands):
        return AlgoParams(
            kind=self._kind, step=check_scalar(self.mu, "mu", low=0.0, low_inclusive=False),
            num_subbands=num_subbands, filter_len=self.filter_len,
            regularization=check_scalar(self.eps, "eps", low=0.0, low_inclusive=False),
        )

    def _start(self, num_subbands):
        self._algo = self._params(num_subbands)
        self._state = init_state(
            self.filter_len, num_subbands, getattr(self, "theta", 1.0),
            window_len=getattr(self, "window_len", DEFAULT_WINDOW),
            forgetting=getattr(self, "forgetting", DEFAULT_FORGETTING),
            subband_power=getattr(self, "subband_power", None),
            power_forgetting=getattr(self, "power_forgetting", POWER_FORGETTING),
            confidence=getattr(self, "confidence", None),
        )

    def _step(self, X, d):
        step_baseline(self._state, (X, d), self._algo)

    def _taps(self):
        return self._state.taps


class NLMS(_SingleFilter):
    """Full-band normalized LMS."""

    _kind = "nlms"
    _fixed_subbands = 1

    def __init__(self, filter_len=128, mu=0.5, eps=REGULARIZATION):
        self.filter_len = filter_len
        self.mu = mu
        self.eps = eps


class NSAF(_SingleFilter):
    """Normalized subband adaptive filter."""

    _kind = "nsaf"

    def __init__(self, filter_len=128, n_subbands=4, mu=0.5, eps=REGULARIZATION, proto_len=None):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu = mu
        self.eps = eps
        self.proto_len = proto_len


class MNSAF(_SingleFilter):
    """NSAF with per-subband robust gating of outlying errors."""

    _kind = "m_nsaf"

    def __init__(self, filter_len=128, n_subbands=4, mu=0.5, eps=REGULARIZATION, proto_len=None,
                 window_len=DEFAULT_WINDOW, forgetting=DEFAULT_FORGETTING, confidence=CONFIDENCE):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu = mu
        self.eps = eps
        self.proto_len = proto_len
        self.window_len = window_len
        self.forgetting = forgetting
        self.confidence = confidence


class TLSNSAF(_SingleFilter):
    """Total-least-squares NSAF (errors-in-variables aware, no gating).

    ``subband_power`` pins the subband input variances to known values;
    by default they are tracked online.
    """

    _kind = "tls_nsaf"

    def __init__(self, filter_len=128, n_subbands=4, mu=0.5, theta=1.0, eps=REGULARIZATION,
                 proto_len=None, subband_power=None, power_forgetting=POWER_FORGETTING):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu = mu
        self.theta = theta
        self.eps = eps
        self.proto_len = proto_len
        self.subband_power = subband_power
        self.power_forgetting = power_forgetting


class TLMMNSAF(_SingleFilter):
    """Total least mean M-estimate NSAF: TLS-NSAF with per-subband Huber gating.

    ``confidence`` scales the robust threshold ``xi = confidence * sigma``;
    ``inf`` disables gating.
    """

    _kind = "tlmm_nsaf"

    def __init__(self, filter_len=128, n_subbands=4, mu=0.5, theta=1.0, eps=REGULARIZATION,
                 proto_len=None, subband_power=None, power_forgetting=POWER_FORGETTING,
                 window_len=DEFAULT_WINDOW, forgetting=DEFAULT_FORGETTING, confidence=CONFIDENCE):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu = mu
        self.theta = theta
        self.eps = eps
        self.proto_len = proto_len
        self.subband_power = subband_power
        self.power_forgetting = power_forgetting
        self.window_len = window_len
        self.forgetting = forgetting
        self.confidence = confidence


def default_mu_max(theta, h_norm_sq=1.0):
    """Half the mean-square step bound ``2 (||h||^2 + theta)``."""
    return 0.5 * 2.0 * (h_norm_sq + theta)


class _Combined(_SubbandFilter):
    """Loop glue for :class:`CombinationState`-based filters.

    Fitted attributes additionally include ``mixing_`` (lambda per
    iteration) and ``step_`` (branch-1 step per iteration).
    """

    def _combo_kwargs(self):
        raise NotImplementedError

    def _start(self, num_subbands):
        kw = self._combo_kwargs()
        power = getattr(self, "subband_power", None)
        pf = self.power_forgetting
        w1 = init_state(self.filter_len, num_subbands, self.theta, subband_power=power, power_forgetting=pf)
        w2 = init_state(self.filter_len, num_subbands, self.theta, subband_power=power, power_forgetting=pf)
        self._state = CombinationState(w1, w2, **kw)
        self._eps = check_scalar(self.eps, "eps", low=0.0, low_inclusive=False)
        self._mix_hist = []
        self._step_hist = []

    def _step(self, X, d):
        self._step_hist.append(self._state.mu_vss)
        step_combination(self._state, (X, d), eps=self._eps)
        self._mix_hist.append(self._state.mixing)

    def _taps(self):
        return self._state.taps

    def _last_passed(self):
        return self._state.w1.last_passed

    def fit(self, X, y, plant=None, residual=False, divergence_db=DIVERGENCE_DB):
        super().fit(X, y, plant=plant, residual=residual, divergence_db=divergence_db)
        self.mixing_ = np.asarray(self._mix_hist)
        self.step_ = np.asarray(self._step_hist)
        self.branch_coef_ = (self._state.w1.taps.copy(), self._state.w2.taps.copy())
        return self


class VSSCTLMMNSAF(_Combined):
    """Convex combination of a variable-step and a small fixed-step TLMM-NSAF.

    ``mu_max`` defaults to half the mean-square bound for a unit-norm plant;
    ``mu_min`` defaults to ``mu2``.  Setting ``a_plus=inf`` with
    ``alpha0=+-inf`` and ``mu_alpha=0`` pins the mixing weight at 1 or 0.
    """

    def __init__(self, filter_len=128, n_subbands=4, mu2=0.05, mu_max=None, mu_min=None,
                 mu_alpha=1.0, alpha0=0.0, a_plus=4.0, vss_alpha=0.99, vss_beta=0.0058,
                 theta=1.0, eps=REGULARIZATION, proto_len=None, subband_power=None, power_forgetting=POWER_FORGETTING):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu2 = mu2
        self.mu_max = mu_max
        self.mu_min = mu_min
        self.mu_alpha = mu_alpha
        self.alpha0 = alpha0
        self.a_plus = a_plus
        self.vss_alpha = vss_alpha
        self.vss_beta = vss_beta
        self.theta = theta
        self.eps = eps
        self.proto_len = proto_len
        self.subband_power = subband_power
        self.power_forgetting = power_forgetting

    def _combo_kwargs(self):
        mu_max = default_mu_max(self.theta) if self.mu_max is None else self.mu_max
        return dict(
            mu2=self.mu2, mu_min=self.mu2 if self.mu_min is None else self.mu_min,
            mu_max=mu_max, mu_alpha=self.mu_alpha, alpha=self.alpha0, a_plus=self.a_plus,
            vss_alpha=self.vss_alpha, vss_beta=self.vss_beta, vss=True,
        )


class CTLMMNSAF(_Combined):
    """Convex combination of two fixed-step TLMM-NSAFs (steps ``mu1 > mu2``)."""

    def __init__(self, filter_len=128, n_subbands=4, mu1=0.5, mu2=0.05, mu_alpha=1.0,
                 alpha0=0.0, a_plus=4.0, theta=1.0, eps=REGULARIZATION, proto_len=None,
                 subband_power=None, power_forgetting=POWER_FORGETTING):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu1 = mu1
        self.mu2 = mu2
        self.mu_alpha = mu_alpha
        self.alpha0 = alpha0
        self.a_plus = a_plus
        self.theta = theta
        self.eps = eps
        self.proto_len = proto_len
        self.subband_power = subband_power
        self.power_forgetting = power_forgetting

    def _combo_kwargs(self):
        mu1 = check_scalar(self.mu1, "mu1", low=0.0, low_inclusive=False)
        return dict(
            mu2=self.mu2, mu_min=min(mu1, self.mu2), mu_max=mu1, mu_vss=mu1,
            mu_alpha=self.mu_alpha, alpha=self.alpha0, a_plus=self.a_plus, vss=False,
        )


class VSSTLMMNSAF(_Combined):
    """Single TLMM-NSAF driven by the variable step alone."""

    def __init__(self, filter_len=128, n_subbands=4, mu_min=0.05, mu_max=None,
                 vss_alpha=0.99, vss_beta=0.0058, theta=1.0, eps=REGULARIZATION,
                 proto_len=None, subband_power=None, power_forgetting=POWER_FORGETTING):
        self.filter_len = filter_len
        self.n_subbands = n_subbands
        self.mu_min = mu_min
        self.mu_max = mu_max
        self.vss_alpha = vss_alpha
        self.vss_beta = vss_beta
        self.theta = theta
        self.eps = eps
        self.proto_len = proto_len
        self.subband_power = subband_power
        self.power_forgetting = power_forgetting

    def _combo_kwargs(self):
        mu_max = default_mu_max(self.theta) if self.mu_max is None else self.mu_max
        return dict(
            mu2=self.mu_min, mu_min=self.mu_min, mu_max=mu_max, mu_alpha=0.0,
            alpha=float("inf"), a_plus=float("inf"), vss_alpha=self.vss_alpha,
            vss_beta=self.vss_beta, vss=True,
        )


REGISTRY = {
    "nlms": NLMS,
    "nsaf": NSAF,
    "m_nsaf": MNSAF,
    "tls_nsaf": TLSNSAF,
    "tlmm_nsaf": TLMMNSAF,
    "vss_tlmm_nsaf": VSSTLMMNSAF,
    "ctlmm_nsaf": CTLMMNSAF,
    "vss_ctlmm_nsaf": VSSCTLMMNSAF,
}


def make_filter(name, **params):
    """Instantiate a registered filter by name, ignoring inapplicable params."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown algorithm {name!r}; expected one of {sorted(REGISTRY)}"
        ) from None
    accepted = cls._get_param_names()
    return cls(**{k: v for k, v in params.items() if k in accepted})
