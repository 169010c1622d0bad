"""Cosine-modulated pseudo-QMF analysis banks and strict decimation.

The bank decomposes a full-band input/desired pair into ``N`` subband
signals.  Adaptive filters consume the result one decimated index ``z`` at a
time: for each subband they see the length-``L`` tap-delay regressor of the
(undecimated) subband input ending at sample ``zN`` and the subband desired
sample at ``zN``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter
from scipy.signal.windows import kaiser
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_signal, check_signal_pair
from .exceptions import InvalidArgumentError

DESIGN_TOLERANCE = 1e-2
KAISER_BETA = 8.0
_GRID = 8192


@dataclass(frozen=True, eq=False)
class AnalysisBank:
    """Immutable N-branch FIR analysis bank.

    Attributes
    ----------
    num_subbands : int
        Number of branches ``N``.
    proto_len : int
        Taps per branch filter ``M``.
    branch_filters : ndarray of shape (N, M)
        Read-only branch coefficients.
    tolerance : float
        Paraunitarity tolerance the bank was accepted against.
    """

    num_subbands: int
    proto_len: int
    branch_filters: np.ndarray = field(repr=False)
    tolerance: float = DESIGN_TOLERANCE

    def __post_init__(self):
        n = check_int(self.num_subbands, "num_subbands", 1)
        m = check_int(self.proto_len, "proto_len", 1)
        filters = np.array(self.branch_filters, dtype=np.float64, copy=True)
        if filters.shape != (n, m):
            raise InvalidArgumentError(
                f"branch_filters must have shape ({n}, {m}), got {filters.shape}"
            )
        filters.setflags(write=False)
        object.__setattr__(self, "branch_filters", filters)

    def power_response(self, grid=_GRID):
        """Sum of squared branch magnitude responses on ``grid//2 + 1`` bins."""
        spectra = np.fft.rfft(self.branch_filters, n=max(grid, self.proto_len), axis=1)
        return np.sum(np.abs(spectra) ** 2, axis=0)


def paraunitarity_error(bank: AnalysisBank, grid: int = _GRID) -> float:
    """Maximum deviation of the bank's power-complementarity response from one.

    Zero for an exactly power-complementary bank such as the single delta
    branch; one for a bank of all-zero filters.
    """
    return float(np.max(np.abs(bank.power_response(grid) - 1.0)))


def _cosine_modulated(num_subbands, proto_len, cutoff, beta):
    n = np.arange(proto_len) - (proto_len - 1) / 2.0
    prototype = cutoff * np.sinc(cutoff * n) * kaiser(proto_len, beta)
    k = np.arange(num_subbands)[:, None]
    phase = (2 * k + 1) * np.pi / (2 * num_subbands) * n + (-1.0) ** k * np.pi / 4
    return 2.0 * prototype * np.cos(phase)


def _normalized(filters):
    spectra = np.fft.rfft(filters, n=max(_GRID, filters.shape[1]), axis=1)
    scale = np.mean(np.sum(np.abs(spectra) ** 2, axis=0))
    return filters / np.sqrt(scale)


@functools.lru_cache(maxsize=32)
def _design_cached(num_subbands, proto_len, beta):
    if num_subbands == 1:
        filters = np.zeros((1, proto_len))
        filters[0, 0] = 1.0
        return AnalysisBank(1, proto_len, filters)

    def objective(cutoff):
        trial = AnalysisBank(
            num_subbands,
            proto_len,
            _normalized(_cosine_modulated(num_subbands, proto_len, cutoff, beta)),
        )
        return paraunitarity_error(trial)

    # search around the nominal half-channel cutoff; wider brackets admit
    # power-complementary but poorly selective solutions
    nominal = 1.0 / (2 * num_subbands)
    res = minimize_scalar(
        objective,
        bounds=(0.5 * nominal, 1.5 * nominal),
        method="bounded",
        options={"xatol": 1e-10},
    )
    filters = _normalized(_cosine_modulated(num_subbands, proto_len, res.x, beta))
    bank = AnalysisBank(num_subbands, proto_len, filters)
    err = paraunitarity_error(bank)
    if err >= bank.tolerance:
        raise InvalidArgumentError(
            f"could not design a ({num_subbands}, {proto_len}) bank within "
            f"tolerance {bank.tolerance:g} (error {err:.3g}); increase proto_len"
        )
    return bank


def design_bank(num_subbands: int, proto_len: int | None = None, beta: float = KAISER_BETA) -> AnalysisBank:
    """Design a cosine-modulated pseudo-QMF analysis bank.

    The prototype is a Kaiser-windowed sinc lowpass whose cutoff is tuned
    numerically to minimise the power-complementarity error; the branches are
    then scaled so that their squared responses sum to one on average.

    Parameters
    ----------
    num_subbands : int
        Number of branches ``N >= 1``. ``N = 1`` yields a delta branch.
    proto_len : int, optional
        Taps per branch, at least ``N`` when ``N > 1``. Defaults to ``8 * N``.
    beta : float
        Kaiser window shape parameter.

    Returns
    -------
    AnalysisBank
        Deterministic for a given ``(N, M, beta)``.
    """
    num_subbands = check_int(num_subbands, "num_subbands", 1)
    if proto_len is None:
        proto_len = 8 * num_subbands
    proto_len = check_int(proto_len, "proto_len", 1)
    if num_subbands > 1 and proto_len < num_subbands:
        raise InvalidArgumentError(
            f"proto_len ({proto_len}) must be >= num_subbands ({num_subbands})"
        )
    return _design_cached(num_subbands, proto_len, float(beta))


def _filter_all(filters, x):
    out = np.empty((filters.shape[0], x.size))
    if x.size == 0:
        return out
    for i, b in enumerate(filters):
        out[i] = lfilter(b, 1.0, x)
    return out


@dataclass(frozen=True)
class SubbandFrame:
    """One subband's view of the decimated timeline at index ``z``."""

    subband_index: int
    decimated_index: int
    regressor: np.ndarray
    desired: float


class SubbandStream:
    """Analysed subband signals with O(1) access to decimated frames.

    Each stream owns its own delay-line state (the zero-padded subband
    histories); the bank it was built from is shared read-only.
    """

    def __init__(self, bank: AnalysisBank, x, d, filter_len: int):
        x, d = check_signal_pair(x, d)
        self.bank = bank
        self.filter_len = check_int(filter_len, "filter_len", 1)
        self.num_subbands = bank.num_subbands
        self.num_samples = x.size
        filters = bank.branch_filters
        xs = _filter_all(filters, x)
        self.subband_input = xs
        self.subband_desired = _filter_all(filters, d)
        padded = np.concatenate([np.zeros((self.num_subbands, self.filter_len - 1)), xs], axis=1)
        # windows[i, n] = [x_i(n), x_i(n-1), ..., x_i(n-L+1)]
        if x.size:
            self._windows = sliding_window_view(padded, self.filter_len, axis=1)[:, :, ::-1]
        else:
            self._windows = np.empty((self.num_subbands, 0, self.filter_len))
        self.num_frames = -(-x.size // self.num_subbands)

    def sample_index(self, z: int) -> int:
        return z * self.num_subbands

    def regressors(self, z: int) -> np.ndarray:
        """Stacked regressors, shape ``(N, L)``, at decimated index ``z``."""
        return self._windows[:, z * self.num_subbands, :]

    def desired(self, z: int) -> np.ndarray:
        return self.subband_desired[:, z * self.num_subbands]

    def frames(self, z: int) -> tuple[SubbandFrame, ...]:
        regs = self.regressors(z)
        des = self.desired(z)
        return tuple(
            SubbandFrame(i, z, np.array(regs[i]), float(des[i]))
            for i in range(self.num_subbands)
        )

    def decimated(self):
        """Decimated subband input and desired signals, each ``(N, Z)``."""
        step = self.num_subbands
        return self.subband_input[:, ::step], self.subband_desired[:, ::step]


def analyze_decimate(bank: AnalysisBank, x, d, filter_len: int) -> Iterator[tuple[SubbandFrame, ...]]:
    """Yield the ``N`` subband frames of every decimated index in order.

    Raises
    ------
    InvalidArgumentError
        If ``x`` and ``d`` differ in length.
    """
    stream = SubbandStream(bank, x, d, filter_len)
    for z in range(stream.num_frames):
        yield stream.frames(z)


def stack_frames(frames) -> tuple[np.ndarray, np.ndarray]:
    """Convert ``N`` frames (or an ``(X, d)`` pair) into stacked arrays."""
    if isinstance(frames, tuple) and len(frames) == 2 and not isinstance(frames[0], SubbandFrame):
        return np.asarray(frames[0], dtype=np.float64), np.asarray(frames[1], dtype=np.float64)
    frames = list(frames)
    if not frames:
        raise InvalidArgumentError("no frames given")
    z = frames[0].decimated_index
    if any(f.decimated_index != z for f in frames):
        raise InvalidArgumentError("frames must share one decimated index")
    regs = np.stack([np.asarray(f.regressor, dtype=np.float64) for f in frames])
    des = np.array([f.desired for f in frames], dtype=np.float64)
    return regs, des


class SubbandAnalyzer(TransformerMixin, BaseEstimator):
    """Transformer producing strictly decimated subband signals.

    ``transform`` maps a full-band signal of length ``T`` to an array of shape
    ``(N, ceil(T / N))``.
    """

    def __init__(self, n_subbands=4, proto_len=None):
        self.n_subbands = n_subbands
        self.proto_len = proto_len

    def fit(self, X, y=None):
        self.bank_ = design_bank(self.n_subbands, self.proto_len)
        self.paraunitarity_error_ = paraunitarity_error(self.bank_)
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        x = check_signal(X, "X")
        return _filter_all(self.bank_.branch_filters, x)[:, :: self.bank_.num_subbands]
