"""Monte-Carlo harness: system identification, echo cancellation, theory checks.

Every trial draws its plant, input and noises from ``SeedSequence([seed,
trial])``, so results do not depend on the order (or process) in which trials
run.  Learning curves are averaged across trials in the linear domain and
reported in dB.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_int, check_scalar
from .algorithms import REGISTRY, make_filter
from .algorithms.estimators import DIVERGENCE_DB
from .exceptions import (
    DegeneratePlantError,
    DivergenceWarning,
    InvalidArgumentError,
    ThetaUndefinedError,
    UnstableStepError,
)
from .metrics import NMSD_FLOOR_DB, nmsd
from .signals import (
    NoiseSpec,
    ar1_driving_variance,
    echo_path,
    gen_input,
    load_wav,
    make_eiv_stream,
    random_plant,
    synthetic_speech,
)
from .theory import build_plant_model, msd_to_nmsd_db, steady_state_msd, step_bounds

__all__ = [
    "ExperimentConfig", "NmsdTrace", "nmsd", "run_sysid", "run_aec", "theory_vs_sim",
    "steady_state_db", "write_csv", "write_json", "plot_traces", "worker_count",
]

TLS_FAMILY = {"tls_nsaf", "tlmm_nsaf", "vss_tlmm_nsaf", "ctlmm_nsaf", "vss_ctlmm_nsaf"}
STEADY_FRACTION = 0.1
_ALGO_KEYS = {"algo", "label"}


def worker_count(requested=None):
    """Worker processes to use: ``requested`` or ``SAFLAB_THREADS``, capped by the CPU count."""
    cpus = os.cpu_count() or 1
    if requested is None:
        env = os.environ.get("SAFLAB_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise InvalidArgumentError(f"SAFLAB_THREADS must be an integer, got {env!r}") from None
        else:
            requested = cpus
    return max(1, min(int(requested), cpus))


@dataclass
class ExperimentConfig:
    """Parameters of one Monte-Carlo experiment; mirrors the JSON config file.

    ``algorithms`` entries are registry names or dicts with an ``"algo"`` key,
    an optional ``"label"`` and per-algorithm overrides of any estimator
    parameter (e.g. ``{"algo": "tlmm_nsaf", "label": "mu=0.2", "mu": 0.2}``).
    ``sigma_in``/``sigma_out`` are the Gaussian noise variances.
    ``iters`` counts decimated iterations, so each trial uses
    ``iters * n_subbands`` full-band samples.
    """

    algorithms: list = field(default_factory=lambda: ["tlmm_nsaf"])
    filter_len: int = 128
    n_subbands: int = 4
    proto_len: int | None = None
    mu: float = 0.5
    mu2: float | None = None
    mu_max: float | None = None
    mu_alpha: float = 1.0
    theta: float | None = None
    input_kind: str = "white"
    input_var: float = 1.0
    ar_coef: float = 0.8
    sigma_in: float = 0.05
    sigma_out: float = 0.05
    impulse_prob: float = 0.0
    impulse_ratio: float = 1000.0
    impulse_on: str = "output"
    plant_norm_sq: float = 1.0
    known_power: bool = False
    trials: int = 10
    iters: int = 5000
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if isinstance(self.algorithms, str):
            self.algorithms = [self.algorithms]
        if not self.algorithms:
            raise InvalidArgumentError("at least one algorithm is required")
        self.algorithm_specs()
        check_int(self.filter_len, "filter_len", 5)
        check_int(self.n_subbands, "n_subbands", 1)
        if self.proto_len is not None:
            check_int(self.proto_len, "proto_len", 1)
        check_scalar(self.mu, "mu", low=0.0, low_inclusive=False)
        for name in ("mu2", "mu_max"):
            if getattr(self, name) is not None:
                check_scalar(getattr(self, name), name, low=0.0, low_inclusive=False)
        check_scalar(self.mu_alpha, "mu_alpha", low=0.0)
        if self.theta is not None:
            check_scalar(self.theta, "theta", low=0.0, low_inclusive=False)
        if self.input_kind not in ("white", "ar1"):
            raise InvalidArgumentError(f"input_kind must be 'white' or 'ar1', got {self.input_kind!r}")
        check_scalar(self.input_var, "input_var", low=0.0, low_inclusive=False)
        check_scalar(self.ar_coef, "ar_coef", -1.0, 1.0, False, False)
        check_scalar(self.sigma_in, "sigma_in", low=0.0)
        check_scalar(self.sigma_out, "sigma_out", low=0.0)
        check_scalar(self.impulse_prob, "impulse_prob", 0.0, 1.0)
        check_scalar(self.impulse_ratio, "impulse_ratio", low=0.0)
        if self.impulse_on not in ("output", "input", "both"):
            raise InvalidArgumentError("impulse_on must be 'output', 'input' or 'both'")
        check_scalar(self.plant_norm_sq, "plant_norm_sq", low=0.0, low_inclusive=False)
        check_int(self.trials, "trials", 1)
        check_int(self.iters, "iters", 1)
        check_int(self.seed, "seed", 0)
        return self

    def algorithm_specs(self):
        """``[(label, name, overrides), ...]`` with unique labels."""
        specs = []
        for entry in self.algorithms:
            if isinstance(entry, str):
                name, label, overrides = entry, entry, {}
            elif isinstance(entry, dict):
                if "algo" not in entry:
                    raise InvalidArgumentError(f"algorithm entry {entry!r} lacks 'algo'")
                name = entry["algo"]
                label = str(entry.get("label", name))
                overrides = {k: v for k, v in entry.items() if k not in _ALGO_KEYS}
            else:
                raise InvalidArgumentError(f"bad algorithm entry {entry!r}")
            if name not in REGISTRY:
                raise InvalidArgumentError(
                    f"unknown algorithm {name!r}; expected one of {sorted(REGISTRY)}"
                )
            accepted = set(REGISTRY[name]._get_param_names())
            unknown = set(overrides) - accepted
            if unknown:
                raise InvalidArgumentError(f"{name} does not accept {sorted(unknown)}")
            specs.append((label, name, overrides))
        labels = [s[0] for s in specs]
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"algorithm labels must be unique, got {labels}")
        return specs

    def resolved_theta(self):
        if self.theta is not None:
            return float(self.theta)
        if self.sigma_in == 0:
            return float("nan")
        return self.sigma_out / self.sigma_in

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise InvalidArgumentError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidArgumentError(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def config_hash(self):
        """SHA-256 of the canonical JSON form (sorted keys, ``out`` excluded)."""
        data = self.to_dict()
        data.pop("out", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class NmsdTrace:
    """Trial-averaged learning curve of one algorithm.

    ``values`` has one dB entry per decimated iteration, floored at -300 dB.
    ``diverged`` counts trials that blew up or ended worse than ``w = 0``.
    ``extras`` holds trial means of per-iteration side channels (mixing
    weight, variable step) plus their ``*_min``/``*_max`` envelopes.
    """

    label: str
    values: np.ndarray
    trials: int
    config_hash: str = ""
    diverged: int = 0
    extras: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.values.size

    @property
    def final_db(self):
        return steady_state_db(self.values)


def steady_state_db(curve_db, fraction=STEADY_FRACTION):
    """Mean of the final ``fraction`` of a dB curve, averaged in the linear domain."""
    curve_db = np.asarray(curve_db, dtype=np.float64)
    n = max(1, int(round(curve_db.size * fraction)))
    return _to_db(np.mean(10.0 ** (curve_db[-n:] / 10.0)))


def _to_db(lin):
    with np.errstate(divide="ignore"):
        return np.maximum(10.0 * np.log10(lin), NMSD_FLOOR_DB)


def _trial_seeds(seed, trial):
    return np.random.SeedSequence([int(seed), int(trial)]).spawn(3)


def _noise_specs(config):
    imp_in = config.impulse_on in ("input", "both")
    imp_out = config.impulse_on in ("output", "both")
    u = NoiseSpec(config.sigma_in, config.impulse_prob if imp_in else 0.0, config.impulse_ratio)
    v = NoiseSpec(config.sigma_out, config.impulse_prob if imp_out else 0.0, config.impulse_ratio)
    return u, v


def _estimator_params(config, name, overrides, theta, subband_power):
    params = dict(
        filter_len=config.filter_len, n_subbands=config.n_subbands, proto_len=config.proto_len,
        mu=config.mu, mu1=config.mu, mu_alpha=config.mu_alpha, theta=theta,
    )
    if config.mu2 is not None:
        params["mu2"] = config.mu2
        params["mu_min"] = config.mu2
    if config.mu_max is not None:
        params["mu_max"] = config.mu_max
    if subband_power is not None:
        params["subband_power"] = subband_power
    params.update(overrides)
    return params


def _subband_power(config, h, theta):
    if not config.known_power:
        return None
    model = build_plant_model(
        h, theta if np.isfinite(theta) else 1.0, config.sigma_in, input_var=config.input_var,
        num_subbands=config.n_subbands, kind=config.input_kind, ar_coef=config.ar_coef,
        proto_len=config.proto_len,
    )
    return model.noisy_subband_power


def _fit_curve(config, name, overrides, stream, plant, theta, subband_power, residual=False):
    """Run one estimator; return its padded dB curve, divergence flag and the fitted model."""
    if name in TLS_FAMILY and not np.isfinite(theta):
        stream.require_theta()
    params = _estimator_params(config, name, overrides, theta, subband_power)
    est = make_filter(name, **params)
    est.fit(stream.noisy_input, stream.noisy_desired, plant=plant, residual=residual)
    curve = est.nmsd_
    if name == "nlms":
        # full-band iterations; sample at n = zN to align with the subband filters
        curve = curve[:: config.n_subbands]
    iters = config.iters
    if curve.size < iters:
        fill = DIVERGENCE_DB if est.diverged_ else curve[-1]
        curve = np.concatenate([curve, np.full(iters - curve.size, fill)])
    curve = curve[:iters]
    diverged = bool(est.diverged_) or steady_state_db(curve) > 0.0
    return curve, diverged, est


def _make_stream(config, trial):
    plant_ss, input_ss, noise_ss = _trial_seeds(config.seed, trial)
    L = config.filter_len
    h = random_plant(L, np.random.default_rng(plant_ss), norm_sq=config.plant_norm_sq)
    n_samples = config.iters * config.n_subbands
    if config.input_kind == "ar1":
        drive = ar1_driving_variance(config.input_var, config.ar_coef)
        x = gen_input("ar1", drive, n_samples, np.random.default_rng(input_ss), config.ar_coef)
    else:
        x = gen_input("white", config.input_var, n_samples, np.random.default_rng(input_ss))
    u, v = _noise_specs(config)
    return make_eiv_stream(h, x, u, v, noise_ss)


def _run_trial(args):
    config, trial = args
    stream = _make_stream(config, trial)
    theta = config.resolved_theta()
    power = _subband_power(config, stream.plant, theta)
    out = {}
    for label, name, overrides in config.algorithm_specs():
        curve, diverged, est = _fit_curve(config, name, overrides, stream, stream.plant, theta, power)
        extras = {}
        if hasattr(est, "mixing_"):
            extras = {"mixing": est.mixing_[: config.iters], "step": est.step_[: config.iters]}
        out[label] = (curve, diverged, extras)
    return out


def _map_trials(func, config, workers):
    jobs = [(config, t) for t in range(config.trials)]
    workers = worker_count(workers)
    if workers <= 1 or config.trials == 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, config.trials)) as pool:
        return list(pool.map(func, jobs))


def _aggregate(config, results):
    h = config.config_hash()
    traces = {}
    for label, _, _ in config.algorithm_specs():
        curves = np.stack([r[label][0] for r in results])
        n_div = sum(int(r[label][1]) for r in results)
        if n_div:
            warnings.warn(f"{label}: {n_div} of {len(results)} trials diverged", DivergenceWarning, stacklevel=3)
        extras = {}
        keys = results[0][label][2].keys()
        for k in keys:
            stacked = np.stack([r[label][2][k] for r in results])
            extras[k] = stacked.mean(axis=0)
            extras[f"{k}_min"] = stacked.min(axis=0)
            extras[f"{k}_max"] = stacked.max(axis=0)
        values = _to_db(np.mean(10.0 ** (curves / 10.0), axis=0))
        traces[label] = NmsdTrace(label, values, len(results), h, n_div, extras)
    return traces


def run_sysid(config: ExperimentConfig, workers=None):
    """System-identification Monte Carlo; returns ``{label: NmsdTrace}``.

    All algorithms in a trial see the same plant, input and noise.  A trial
    that passes +100 dB is truncated there and held at +100 dB; it and any
    trial ending above 0 dB count as diverged.
    """
    config.validate()
    results = _map_trials(_run_trial, config, workers)
    return _aggregate(config, results)


def _aec_trial(args):
    config, trial, speech, path = args
    _, _, noise_ss = _trial_seeds(config.seed, trial)
    u, v = _noise_specs(config)
    stream = make_eiv_stream(path, speech, u, v, noise_ss)
    theta = config.resolved_theta()
    out = {}
    residuals = {}
    for label, name, overrides in config.algorithm_specs():
        curve, diverged, est = _fit_curve(config, name, overrides, stream, path, theta, None, residual=True)
        out[label] = (curve, diverged, {})
        residuals[label] = est.residual_
    return out, residuals


def run_aec(config: ExperimentConfig, far_end_wav=None, echo=None, normalize=True, workers=None):
    """Echo-cancellation Monte Carlo on speech.

    Parameters
    ----------
    far_end_wav : path, optional
        Mono 16-bit far-end recording; a synthetic speech-like signal is used
        when omitted.  It is scaled to unit variance when ``normalize``.
    echo : array-like, optional
        Echo path of length ``filter_len``; a synthetic decaying response
        seeded by ``config.seed`` by default.

    Returns
    -------
    traces : dict of NmsdTrace
    residuals : dict of ndarray
        Residual echo ``e(n) = d(n) - y(n)`` of trial 0 per algorithm.
    """
    config.validate()
    L = config.filter_len
    if echo is None:
        echo = echo_path(L, seed=config.seed)
    path = np.asarray(echo, dtype=np.float64).reshape(-1)
    if path.size != L:
        raise InvalidArgumentError(f"echo path length {path.size} != filter_len {L}")
    if not np.any(path):
        raise DegeneratePlantError("echo path is all zeros; NMSD is undefined")
    n_samples = config.iters * config.n_subbands
    if far_end_wav is not None:
        speech = load_wav(far_end_wav)
    else:
        speech = synthetic_speech(n_samples, seed=config.seed)
    if normalize and speech.std() > 0:
        speech = speech / speech.std()
    if speech.size < n_samples:
        reps = -(-n_samples // speech.size)
        speech = np.tile(speech, reps)
    speech = speech[:n_samples]
    jobs = [(config, t, speech, path) for t in range(config.trials)]
    workers = worker_count(workers)
    if workers <= 1 or config.trials == 1:
        results = [_aec_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, config.trials)) as pool:
            results = list(pool.map(_aec_trial, jobs))
    traces = _aggregate(config, [r[0] for r in results])
    return traces, results[0][1]


def theory_vs_sim(config: ExperimentConfig, steps, variances, workers=None, h_norm_sq=None):
    """Predicted versus simulated steady-state NMSD over a ``(mu, sigma^2)`` grid.

    Each row uses ``sigma_in = sigma_out = sigma^2`` and TLMM-NSAF with the
    given step.  The plant model comes from the configured input through the
    actual bank; the plant itself is only a scale for the NMSD conversion.

    Returns
    -------
    list of dict
        Keys ``mu``, ``sigma2``, ``predicted_db``, ``simulated_db``, ``gap_db``
        and ``status`` (``"ok"`` or ``"unstable"``).
    """
    rows = []
    ref = random_plant(config.filter_len, 0, norm_sq=config.plant_norm_sq)
    norm_sq = config.plant_norm_sq if h_norm_sq is None else h_norm_sq
    for s2 in variances:
        theta = config.theta if config.theta is not None else 1.0
        model = build_plant_model(
            ref, theta, s2, input_var=config.input_var, num_subbands=config.n_subbands,
            kind=config.input_kind, ar_coef=config.ar_coef, proto_len=config.proto_len,
            h_norm_sq=norm_sq,
        )
        _, _, stable = step_bounds(model)
        for mu in steps:
            row = {"mu": float(mu), "sigma2": float(s2), "predicted_db": None,
                   "simulated_db": None, "gap_db": None, "status": "ok"}
            try:
                if mu >= stable:
                    raise UnstableStepError(f"step {mu} outside the stable range {stable:g}")
                _, _, msd = steady_state_msd(model, mu)
            except UnstableStepError:
                row["status"] = "unstable"
                rows.append(row)
                continue
            row["predicted_db"] = msd_to_nmsd_db(msd, norm_sq)
            cfg = dataclasses.replace(
                config, algorithms=[{"algo": "tlmm_nsaf", "label": "sim", "mu": float(mu)}],
                sigma_in=float(s2), sigma_out=float(s2) * theta, theta=theta,
            )
            trace = run_sysid(cfg, workers)["sim"]
            row["simulated_db"] = float(trace.final_db)
            row["gap_db"] = row["simulated_db"] - row["predicted_db"]
            rows.append(row)
    return rows


def _csv_text(traces, config_hash):
    labels = list(traces)
    n = max(len(t) for t in traces.values())
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", *labels])
    for z in range(n):
        row = [str(z)]
        for lab in labels:
            v = traces[lab].values
            row.append(f"{v[z]:.6g}" if z < v.size else "")
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path, traces, config_hash):
    """Write traces as ``iter,<label>...`` rows preceded by a hash comment line."""
    Path(path).write_text(_csv_text(traces, config_hash))


def write_json(path, payload, config_hash):
    payload = dict(payload)
    payload["config_hash"] = config_hash
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def plot_traces(path, traces, config_hash, title=None):
    """Deterministic SVG line chart of NMSD learning curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": config_hash, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for label, trace in traces.items():
            ax.plot(np.arange(len(trace)), trace.values, label=label, linewidth=1.0)
        ax.set_xlabel("iteration (decimated)")
        ax.set_ylabel("NMSD (dB)")
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_sha256={config_hash}"})
        plt.close(fig)
