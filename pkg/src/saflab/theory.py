"""Steady-state and stability analysis of the gated TLS subband filter.

All quantities are evaluated at the true plant ``h`` with the augmented norm
``||hbar||^2 = ||h||^2 + theta``.  Subband statistics are computed by pushing
deterministic probes (impulses) through the actual analysis bank, so the
variances are exact for the stated input model rather than sampled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz
from scipy.signal import lfilter

from ._validation import check_int, check_scalar, check_taps
from .exceptions import InvalidArgumentError, NoLocalMinimumError, UnstableStepError
from .filterbank import design_bank

MAX_CONDITION = 1e12
DENSE_MAX_LEN = 64


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Everything the analysis needs about the plant and its subband inputs.

    Per-subband arrays have length ``num_subbands``.  ``h_norm_sq`` defaults
    to ``||h||^2``; it can be set explicitly so nominal values (e.g. exactly
    1) are not perturbed by rounding of the tap vector.
    """

    h: np.ndarray
    theta: float
    input_noise_var: np.ndarray
    noisy_subband_power: np.ndarray
    gammas: np.ndarray
    alpha_min: np.ndarray | None = None
    input_cov: np.ndarray | None = field(default=None, repr=False)
    h_norm_sq: float | None = None

    def __post_init__(self):
        h = check_taps(self.h)
        if h.size <= 4:
            raise InvalidArgumentError(f"filter length must exceed 4, got {h.size}")
        object.__setattr__(self, "h", h)
        check_scalar(self.theta, "theta", low=0.0)
        arrays = {}
        for name in ("input_noise_var", "noisy_subband_power", "gammas"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["gammas"].size
        if any(a.shape != (n,) for a in arrays.values()):
            raise InvalidArgumentError("per-subband arrays must share one length")
        if np.any(arrays["noisy_subband_power"] <= arrays["input_noise_var"]):
            raise InvalidArgumentError("noisy subband power must exceed the input-noise variance")
        if np.any(arrays["input_noise_var"] < 0) or np.any(arrays["gammas"] <= 0):
            raise InvalidArgumentError("noise variances must be >= 0 and gammas > 0")
        if self.input_cov is not None:
            R = np.asarray(self.input_cov, dtype=np.float64)
            if R.shape != (h.size, h.size) or not np.allclose(R, R.T):
                raise InvalidArgumentError("input_cov must be a symmetric L x L matrix")
            object.__setattr__(self, "input_cov", R)
        if self.h_norm_sq is None:
            object.__setattr__(self, "h_norm_sq", float(h @ h))

    @property
    def filter_len(self):
        return self.h.size

    @property
    def num_subbands(self):
        return self.gammas.size

    @property
    def hbar_norm_sq(self):
        return self.h_norm_sq + self.theta


@dataclass
class TheoryReport:
    """Bundle of analysis results; ``to_json`` gives a plain-JSON view."""

    gradient_at_h: np.ndarray
    hessian_at_h: np.ndarray
    hessian_eigs: np.ndarray
    mean_bound: float
    ms_bound: float
    stable_bound: float
    step: float | None = None
    moment_M: np.ndarray | None = None
    transition_P: np.ndarray | None = None
    predicted_msd: float | None = None
    predicted_nmsd_db: float | None = None

    def to_dict(self, include_matrices=True):
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                if not include_matrices and v.ndim == 2:
                    continue
                v = v.tolist()
            out[k] = v
        return out

    def to_json(self, include_matrices=True, **kwargs):
        return json.dumps(self.to_dict(include_matrices), **kwargs)


def estimate_gamma(subband_input_cov, kind="correlated"):
    """Effective eigenvalue spread factor of a subband regressor.

    ``"white"`` gives ``1/L``.  ``"correlated"`` averages ``1/L`` with the
    smallest eigenvalue of the covariance scaled to unit trace, which reduces
    to ``1/L`` for any multiple of the identity.
    """
    R = np.asarray(subband_input_cov, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] == 0:
        raise InvalidArgumentError("covariance must be a non-empty square matrix")
    if not np.allclose(R, R.T, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise InvalidArgumentError("covariance must be symmetric")
    L = R.shape[0]
    tr = float(np.trace(R))
    if tr <= 0:
        raise InvalidArgumentError("covariance trace must be positive")
    if kind == "white":
        return 1.0 / L
    if kind != "correlated":
        raise InvalidArgumentError(f"unknown kind {kind!r}")
    lam_min = max(float(np.linalg.eigvalsh(R / tr)[0]), 0.0)
    return 0.5 * (lam_min + 1.0 / L)


def _autocorr(impulse_response, lags):
    r = np.correlate(impulse_response, impulse_response, mode="full")
    mid = impulse_response.size - 1
    out = np.zeros(lags)
    k = min(lags, impulse_response.size)
    out[:k] = r[mid: mid + k]
    return out


def build_plant_model(h, theta, input_noise_var, *, input_var=1.0, num_subbands=4, kind="white",
                      ar_coef=0.8, proto_len=None, h_norm_sq=None, probe_len=4096):
    """Derive subband statistics for a white or AR(1) input through the bank.

    ``input_var`` is the stationary variance of the clean full-band input and
    ``input_noise_var`` the variance of the white input noise.  Each branch's
    response to a unit impulse (convolved with the AR shaping filter when
    ``kind="ar1"``) yields exact subband autocorrelations.
    """
    h = check_taps(h)
    L = h.size
    input_var = check_scalar(input_var, "input_var", low=0.0, low_inclusive=False)
    input_noise_var = check_scalar(input_noise_var, "input_noise_var", low=0.0)
    num_subbands = check_int(num_subbands, "num_subbands", 1)
    probe_len = check_int(probe_len, "probe_len", L)
    bank = design_bank(num_subbands, proto_len)
    impulse = np.zeros(probe_len)
    impulse[0] = 1.0
    if kind == "white":
        shaped, drive = impulse, input_var
    elif kind == "ar1":
        shaped = lfilter([1.0], [1.0, -ar_coef], impulse)
        drive = input_var * (1.0 - ar_coef**2)
    else:
        raise InvalidArgumentError(f"unknown input kind {kind!r}")
    noise_var = np.empty(num_subbands)
    power = np.empty(num_subbands)
    gammas = np.empty(num_subbands)
    alpha_min = np.empty(num_subbands)
    for i, f in enumerate(bank.branch_filters):
        r_x = drive * _autocorr(lfilter(f, 1.0, shaped), L)
        r_u = input_noise_var * _autocorr(np.asarray(f), L)
        cov = toeplitz(r_x + r_u)
        noise_var[i] = r_u[0]
        power[i] = r_x[0] + r_u[0]
        alpha_min[i] = max(float(np.linalg.eigvalsh(cov / np.trace(cov))[0]), 0.0)
        gammas[i] = estimate_gamma(cov, "white" if kind == "white" else "correlated")
    full = drive * _autocorr(shaped, L)
    return PlantModel(
        h=h, theta=theta, input_noise_var=noise_var, noisy_subband_power=power,
        gammas=gammas, alpha_min=alpha_min, input_cov=toeplitz(full), h_norm_sq=h_norm_sq,
    )


def hessian_and_gradient_at_h(plant: PlantModel):
    """Expected gradient and Hessian of the TLS subband cost at ``w = h``.

    The gradient combines ``E[e x] = -sigma_in^2 h`` and
    ``E[e^2] = ||hbar||^2 sigma_in^2`` and cancels exactly.

    Returns
    -------
    gradient : ndarray (L,)
    hessian : ndarray (L, L)
    eigenvalues : ndarray (L,), ascending
    """
    L = plant.filter_len
    if L <= 2:
        raise InvalidArgumentError("filter length must exceed 2")
    h = plant.h
    hb = plant.hbar_norm_sq
    grad = np.zeros(L)
    for s_in, s_x in zip(plant.input_noise_var, plant.noisy_subband_power):
        cross = hb * (-s_in * h)
        power = (s_in * hb) * h
        grad -= (cross + power) / (hb * hb * (L - 2) * s_x)
    c = (np.sum(plant.gammas) - np.sum(plant.input_noise_var / ((L - 2) * plant.noisy_subband_power))) / hb
    H = c * np.eye(L)
    return grad, H, np.linalg.eigvalsh(H)


def step_bounds(plant: PlantModel):
    """Mean, mean-square and combined step-size bounds.

    Raises
    ------
    NoLocalMinimumError
        If the Hessian at ``h`` is not positive definite.
    """
    _, _, eigs = hessian_and_gradient_at_h(plant)
    if eigs[0] <= 0:
        raise NoLocalMinimumError(
            f"Hessian at h is not positive definite (smallest eigenvalue {eigs[0]:.3g})"
        )
    mean_bound = 2.0 / eigs[-1]
    ms_bound = 2.0 * (plant.h_norm_sq + plant.theta)
    return mean_bound, ms_bound, min(mean_bound, ms_bound)


def moment_matrix(plant: PlantModel):
    """Gradient-noise covariance ``E[r(h) r(h)^T]`` at the plant."""
    L = plant.filter_len
    h = plant.h
    hb = plant.hbar_norm_sq
    s_in = plant.input_noise_var
    s_x = plant.noisy_subband_power
    diag = np.sum(s_in * plant.gammas / (hb * (L - 4) * s_x))
    rank1 = np.sum(3.0 * s_in**2 / (hb**2 * (L - 2) * (L - 4) * s_x**2))
    return diag * np.eye(L) - rank1 * np.outer(h, h)


def steady_state_msd(plant: PlantModel, step, method="auto"):
    """Predicted steady-state MSD ``mu^2 vec(M)^T (I - P)^-1 vec(I)``.

    ``method="dense"`` builds ``P = (I - mu H) kron (I - mu H)`` and solves with
    a Cholesky factorisation; ``"eigen"`` works in the eigenbasis of ``H``
    and never forms ``P``.  ``"auto"`` uses dense up to ``L = 64``.

    Returns
    -------
    M : ndarray (L, L)
    P : ndarray (L^2, L^2) or None
        ``None`` on the eigen path.
    msd : float

    Raises
    ------
    UnstableStepError
        If the spectral radius of ``P`` is not below one.
    """
    step = check_scalar(step, "step", low=0.0, low_inclusive=False)
    L = plant.filter_len
    _, H, _ = hessian_and_gradient_at_h(plant)
    M = moment_matrix(plant)
    d, Q = np.linalg.eigh(np.eye(L) - step * H)
    rho = float(np.max(d * d))
    if rho >= 1.0:
        raise UnstableStepError(f"spectral radius of P is {rho:.6g} >= 1 at step {step:g}")
    # I - P is symmetric with eigenvalues 1 - d_i d_j
    gaps = 1.0 - np.outer(d, d)
    cond = float(np.max(np.abs(gaps)) / np.min(np.abs(gaps)))
    if cond > MAX_CONDITION:
        raise UnstableStepError(f"I - P is too ill-conditioned (condition number {cond:.3g})")
    if method == "auto":
        method = "dense" if L <= DENSE_MAX_LEN else "eigen"
    if method == "dense":
        A = np.eye(L) - step * H
        P = np.kron(A, A)
        rhs = np.eye(L).reshape(-1)
        sol = cho_solve(cho_factor(np.eye(L * L) - P), rhs)
        msd = step**2 * float(M.reshape(-1) @ sol)
    elif method == "eigen":
        P = None
        m_rot = np.einsum("ij,ik,kj->j", Q, M, Q)
        msd = step**2 * float(np.sum(m_rot / (1.0 - d * d)))
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return M, P, msd


def theory_report(plant: PlantModel, step=None, method="auto", keep_transition=False):
    """Evaluate gradient, Hessian, bounds and (given ``step``) the steady state."""
    g, H, eigs = hessian_and_gradient_at_h(plant)
    mean_b, ms_b, stable_b = step_bounds(plant)
    report = TheoryReport(g, H, eigs, mean_b, ms_b, stable_b)
    if step is not None:
        M, P, msd = steady_state_msd(plant, step, method)
        report.step = float(step)
        report.moment_M = M
        report.transition_P = P if keep_transition else None
        report.predicted_msd = msd
        report.predicted_nmsd_db = msd_to_nmsd_db(msd, plant.h_norm_sq)
    return report


def msd_to_nmsd_db(msd, h_norm_sq):
    return float(10.0 * np.log10(msd / h_norm_sq))
