"""Input, noise and errors-in-variables stream generation, plus WAV I/O.

Every generator is a pure function of its seed. ``make_eiv_stream`` splits
its seed into independent substreams for the input noise and the output
noise, so the two corruptions are independent of each other and of the
clean input.
"""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from ._validation import check_int, check_scalar, check_signal, check_taps
from .exceptions import InvalidArgumentError, ThetaUndefinedError, UnsupportedFormatError

DEFAULT_IMPULSE_PROB = 0.01
DEFAULT_IMPULSE_RATIO = 1000.0
SAMPLE_RATE = 8000


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream_seeds(seed, count):
    """Derive ``count`` independent child seeds from ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    elif isinstance(seed, (list, tuple)):
        ss = np.random.SeedSequence([int(s) for s in seed])
    else:
        ss = np.random.SeedSequence(int(seed))
    return ss.spawn(count)


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian background plus Bernoulli-Gaussian impulses.

    A sample is ``g + b * i`` with ``g ~ N(0, var)``, ``b ~ Bernoulli(p)`` and
    ``i ~ N(0, ratio * var)``, so the total variance is ``var * (1 + p * ratio)``.
    """

    gaussian_variance: float = 0.0
    impulse_probability: float = 0.0
    impulse_variance_ratio: float = DEFAULT_IMPULSE_RATIO

    def __post_init__(self):
        check_scalar(self.gaussian_variance, "gaussian_variance", low=0.0)
        check_scalar(self.impulse_probability, "impulse_probability", low=0.0, high=1.0)
        check_scalar(self.impulse_variance_ratio, "impulse_variance_ratio", low=0.0)

    @property
    def total_variance(self):
        return self.gaussian_variance * (1.0 + self.impulse_probability * self.impulse_variance_ratio)

    @property
    def is_gaussian(self):
        return self.impulse_probability == 0.0 or self.impulse_variance_ratio == 0.0


@dataclass(frozen=True, eq=False)
class EivStream:
    """Clean and noisy input/desired sequences for one realisation.

    ``clean_desired`` is the plant output ``h^T x(n)`` exactly; the noisy
    sequences add independent input noise ``u`` and output noise ``v``.
    ``theta`` is the ratio of the output to input Gaussian noise variances
    and is NaN when the input is noise-free.
    """

    clean_input: np.ndarray
    noisy_input: np.ndarray
    clean_desired: np.ndarray
    noisy_desired: np.ndarray
    plant: np.ndarray
    theta: float

    @property
    def input_noise(self):
        return self.noisy_input - self.clean_input

    @property
    def output_noise(self):
        return self.noisy_desired - self.clean_desired

    def require_theta(self):
        """Return ``theta`` for a TLS-family consumer, or raise."""
        if not np.isfinite(self.theta) or self.theta <= 0:
            raise ThetaUndefinedError(
                "theta is undefined: the input-noise variance is zero"
            )
        return self.theta

    def __len__(self):
        return self.clean_input.size


def gen_input(kind="white", variance=1.0, length=0, seed=0, ar_coef=0.8):
    """Zero-mean Gaussian input sequence.

    Parameters
    ----------
    kind : {"white", "ar1"}
        ``"ar1"`` filters the white driving sequence through
        ``1 / (1 - ar_coef c^-1)``.
    variance : float
        Variance of the white (driving) sequence.
    """
    variance = check_scalar(variance, "variance", low=0.0)
    length = check_int(length, "length", 0)
    rng = _rng(seed)
    white = rng.standard_normal(length) * np.sqrt(variance)
    if kind == "white":
        return white
    if kind == "ar1":
        a = check_scalar(ar_coef, "ar_coef")
        if abs(a) >= 1:
            raise InvalidArgumentError(f"AR(1) coefficient must satisfy |a| < 1, got {a}")
        return lfilter([1.0], [1.0, -a], white)
    raise InvalidArgumentError(f"unknown input kind {kind!r}")


def ar1_driving_variance(stationary_variance, ar_coef):
    """Driving variance that gives an AR(1) process the requested variance."""
    return stationary_variance * (1.0 - ar_coef**2)


def gen_noise(spec: NoiseSpec, length: int, seed=0):
    """Draw ``length`` samples of ``spec``'s contaminated Gaussian noise."""
    length = check_int(length, "length", 0)
    rng = _rng(seed)
    sigma = np.sqrt(spec.gaussian_variance)
    noise = rng.standard_normal(length) * sigma
    # draws are made even when p = 0 so impulse settings do not shift the
    # background realisation
    hits = rng.random(length) < spec.impulse_probability
    impulses = rng.standard_normal(length) * (sigma * np.sqrt(spec.impulse_variance_ratio))
    if spec.impulse_probability > 0:
        noise = noise + np.where(hits, impulses, 0.0)
    return noise


def random_plant(length, seed=0, norm_sq=1.0):
    """Uniform(-0.5, 0.5) taps rescaled to squared norm ``norm_sq``."""
    length = check_int(length, "length", 1)
    h = _rng(seed).uniform(-0.5, 0.5, length)
    return h * np.sqrt(norm_sq / np.dot(h, h))


def echo_path(length, seed=0, decay=None, delay=8):
    """Synthetic room impulse response: delayed, exponentially decaying noise.

    Normalised to unit squared norm. ``decay`` is the per-tap amplitude
    decay; by default the envelope falls by 60 dB over the path.
    """
    length = check_int(length, "length", 1)
    if decay is None:
        decay = 10 ** (-3.0 / max(length - delay, 1))
    rng = _rng(seed)
    taps = np.zeros(length)
    n = np.arange(length - min(delay, length - 1))
    taps[length - n.size:] = rng.standard_normal(n.size) * decay**n
    return taps / np.linalg.norm(taps)


def make_eiv_stream(plant, x, input_noise: NoiseSpec, output_noise: NoiseSpec, seed=0) -> EivStream:
    """Realise the errors-in-variables model for a clean input ``x``.

    ``d(n) = h^T x(n)`` is computed by FIR filtering with zero initial
    history; ``u`` and ``v`` are drawn from separate child seeds.
    """
    h = check_taps(plant)
    if h.size < 3:
        raise InvalidArgumentError(f"plant length must be >= 3, got {h.size}")
    x = check_signal(x, "input")
    u_seed, v_seed = substream_seeds(seed, 2)
    u = gen_noise(input_noise, x.size, np.random.default_rng(u_seed))
    v = gen_noise(output_noise, x.size, np.random.default_rng(v_seed))
    d = lfilter(h, 1.0, x)
    if input_noise.gaussian_variance > 0:
        theta = output_noise.gaussian_variance / input_noise.gaussian_variance
    else:
        theta = float("nan")
    return EivStream(
        clean_input=x,
        noisy_input=x + u,
        clean_desired=d,
        noisy_desired=d + v,
        plant=h,
        theta=theta,
    )


def synthetic_speech(length, seed=0, fs=SAMPLE_RATE):
    """Speech-like test signal built by parallel formant synthesis.

    Syllables are a tilted glottal pulse train (voiced) or white noise
    (unvoiced) driving three parallel resonators, with mild pre-emphasis,
    a raised-Hann envelope and short pauses. Unit variance.
    """
    length = check_int(length, "length", 0)
    rng = _rng(seed)
    out = np.zeros(length)
    pos = 0
    while pos < length:
        syl = int(rng.uniform(0.1, 0.3) * fs)
        if rng.random() < 0.75:
            period = max(int(fs / rng.uniform(90, 220)), 2)
            exc = np.zeros(syl)
            exc[::period] = 1.0
            exc = lfilter([1.0], [1.0, -0.9], exc) + 0.1 * rng.standard_normal(syl)
        else:
            exc = rng.standard_normal(syl)
        seg = np.zeros(syl)
        formants = (
            (rng.uniform(300, 900), 90.0, 1.0),
            (rng.uniform(900, 2300), 120.0, 0.6),
            (rng.uniform(2300, 3500), 180.0, 0.4),
        )
        for f0, bw, gain in formants:
            r = np.exp(-np.pi * bw / fs)
            a = [1.0, -2 * r * np.cos(2 * np.pi * f0 / fs), r * r]
            seg += gain * lfilter([(1.0 - r * r) / 2], a, exc)
        seg = lfilter([1.0, -0.5], [1.0], seg)
        seg *= (0.9 * np.hanning(syl) + 0.1) * rng.uniform(0.3, 1.0)
        end = min(pos + syl, length)
        out[pos:end] = seg[: end - pos]
        pos = end + int(rng.uniform(0.0, 0.06) * fs)
    std = out.std()
    return out / std if std > 0 else out


def load_wav(path):
    """Read a mono 16-bit PCM WAV file as floats in ``[-1, 1)``.

    Raises
    ------
    UnsupportedFormatError
        For multichannel or non-16-bit audio.
    OSError
        If the file is missing, unreadable or holds no samples.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            frames = wf.getnframes()
            raw = wf.readframes(frames)
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from None
    except EOFError:
        raise OSError(f"{path}: truncated or empty WAV file") from None
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if frames == 0:
        raise OSError(f"{path}: WAV file has no samples")
    samples = np.frombuffer(raw, dtype="<i2")
    return samples.astype(np.float64) / 32768.0


def write_wav(path, samples, fs=SAMPLE_RATE, comment=None):
    """Write floats in ``[-1, 1)`` as mono 16-bit PCM, clipping out-of-range values.

    ``comment`` is stored in a ``LIST/INFO/ICMT`` chunk.
    """
    samples = check_signal(samples, "samples")
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(fs))
        wf.writeframes(pcm.tobytes())
    data = buf.getvalue()
    if comment:
        text = comment.encode("ascii", "replace") + b"\x00"
        if len(text) % 2:
            text += b"\x00"
        info = b"INFO" + b"ICMT" + struct.pack("<I", len(text)) + text
        chunk = b"LIST" + struct.pack("<I", len(info)) + info
        data = data[:4] + struct.pack("<I", len(data) - 8 + len(chunk)) + data[8:] + chunk
    Path(path).write_bytes(data)
