"""FFT, power spectra, circular cross-correlation and linear resampling.

All functions act on the last axis of their input unless noted, so a batch of
series can be passed as a 2-D array.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AliasingError, DegenerateSignalError, DimensionError, InsufficientLengthError

__all__ = [
    "RealSeries",
    "Spectrum",
    "fft",
    "naive_dft",
    "psd",
    "normalize_psd",
    "circular_cross_correlation",
    "resample_linear",
    "dominant_frequency",
]

# power below this is treated as numerically zero
_FLAT_POWER = 1e-20


@dataclass(frozen=True)
class RealSeries:
    values: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape[-1] < 2:
            raise DimensionError("a series needs at least 2 samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Spectrum:
    bin_power: np.ndarray
    bin_width_hz: float

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.bin_power.shape[-1]) * self.bin_width_hz


# ---------------------------------------------------------------------- FFT


@lru_cache(maxsize=64)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(size: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(size // 2) / size)


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    x = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = x.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return x


@lru_cache(maxsize=64)
def _bluestein_kernel(n: int):
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase exact for large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:])[::-1]
    return m, chirp, _fft_pow2(b)


def _fft_forward(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    m, chirp, fb = _bluestein_kernel(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    conv = np.conj(_fft_pow2(np.conj(_fft_pow2(a) * fb))) / m
    return conv[..., :n] * chirp


def fft(values, inverse: bool = False) -> np.ndarray:
    """Discrete Fourier transform along the last axis, any length >= 1.

    Powers of two use an iterative radix-2 pass; other lengths go through
    Bluestein's chirp-z convolution. The inverse carries the 1/n factor.
    """
    x = np.asarray(values, dtype=np.complex128)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("fft needs a non-empty last axis")
    if inverse:
        return np.conj(_fft_forward(np.conj(x))) / x.shape[-1]
    return _fft_forward(x)


def naive_dft(values) -> np.ndarray:
    """O(n^2) reference transform, used as a test oracle."""
    x = np.asarray(values, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    return x @ np.exp(-2j * np.pi * np.outer(k, k) / n)


# ------------------------------------------------------------------ spectra


def _values(x) -> tuple[np.ndarray, float | None]:
    if isinstance(x, RealSeries):
        return x.values, x.sample_rate_hz
    return np.asarray(x, dtype=np.float64), None


def psd(x, sample_rate_hz: float | None = None) -> Spectrum:
    """One-sided periodogram ``|X_k|^2 / n`` for k = 0..n//2."""
    v, fs = _values(x)
    fs = fs or sample_rate_hz or 1.0
    n = v.shape[-1]
    if n < 2:
        raise DimensionError("psd needs at least 2 samples")
    spec = fft(v)[..., : n // 2 + 1]
    power = (spec.real**2 + spec.imag**2) / n
    return Spectrum(power, fs / n)


def normalize_psd(s: Spectrum) -> np.ndarray:
    """Drop the DC bin and scale the remaining bins to sum to one."""
    p = np.asarray(s.bin_power, dtype=np.float64)[..., 1:]
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= _FLAT_POWER):
        raise DegenerateSignalError("spectrum has no power outside the DC bin")
    return p / total


def _standardise(x: np.ndarray) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(norm <= 1e-12):
        raise DegenerateSignalError("zero-variance input to cross-correlation")
    return x / norm


def circular_cross_correlation(u, v, linear: bool = False) -> np.ndarray:
    """``r[tau] = sum_t u[t] v[(t + tau) mod n]`` of standardised inputs.

    Inputs are mean-removed and scaled to unit L2 norm, so values lie in
    [-1, 1]. With ``linear=True`` both inputs are zero-padded to ``2n - 1``
    and lags come back in FFT order (0..n-1, then -(n-1)..-1).
    """
    u = _standardise(np.asarray(u, dtype=np.float64))
    v = _standardise(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise DimensionError(f"cross-correlation needs equal shapes, got {u.shape} and {v.shape}")
    n = u.shape[-1]
    if n < 2:
        raise DimensionError("cross-correlation needs at least 2 samples")
    if linear:
        pad = [(0, 0)] * (u.ndim - 1) + [(0, n - 1)]
        u, v = np.pad(u, pad), np.pad(v, pad)
    return fft(np.conj(fft(u)) * fft(v), inverse=True).real


# --------------------------------------------------------------- resampling


def resample_linear(
    x,
    speed: float,
    out_len: int,
    *,
    speed_range: tuple[float, float] | None = None,
    f_max: float | None = None,
    sample_rate_hz: float | None = None,
) -> np.ndarray:
    """Read ``x`` (time on axis 0) at positions ``i * speed``, i < out_len.

    Frame sequences are interpolated per pixel. The output keeps the nominal
    sample rate, so every frequency in it is multiplied by ``speed``.
    """
    v, fs = _values(x)
    fs = fs or sample_rate_hz
    if not speed > 0:
        raise ValueError("speed must be positive")
    if speed_range is not None and not speed_range[0] <= speed <= speed_range[1]:
        raise ValueError(f"speed {speed} outside [{speed_range[0]}, {speed_range[1]}]")
    n = v.shape[0]
    if out_len * speed > n:
        raise InsufficientLengthError(f"{out_len} samples at speed {speed} need {out_len * speed:.2f} input samples, have {n}")
    if f_max is not None and fs is not None and speed * f_max >= fs / 2:
        raise AliasingError(f"speed {speed} pushes {f_max} Hz to {speed * f_max} Hz, at or above Nyquist {fs / 2} Hz")
    pos = np.arange(out_len) * float(speed)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, n - 1)
    frac = frac.reshape((-1,) + (1,) * (v.ndim - 1))
    return (1.0 - frac) * v[i0] + frac * v[i1]


# --------------------------------------------------------- frequency picking


def dominant_frequency(z, sample_rate_hz: float | None = None) -> float:
    """Frequency of the strongest non-DC periodogram bin.

    The peak is refined with a parabola through the log-power of the peak and
    its two neighbours when both neighbours are non-DC bins; otherwise the
    raw bin centre is returned. Ties go to the lower bin.
    """
    v, fs = _values(z)
    fs = fs or sample_rate_hz or 1.0
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size < 4:
        raise DimensionError("dominant_frequency needs at least 4 samples")
    spec = psd(v, fs)
    p = spec.bin_power
    if p[1:].max() <= _FLAT_POWER * max(1.0, float(np.dot(v, v))):
        raise DegenerateSignalError("series has no non-DC power")
    k = 1 + int(np.argmax(p[1:]))
    offset = 0.0
    # neighbours at roundoff level mean the tone sits exactly on a bin
    if 2 <= k <= p.size - 2 and min(p[k - 1], p[k + 1]) > 1e-12 * p[k]:
        a, b, c = np.log(p[k - 1]), np.log(p[k]), np.log(p[k + 1])
        den = a - 2 * b + c
        if den < 0:
            offset = float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
    return (k + offset) * spec.bin_width_hz
