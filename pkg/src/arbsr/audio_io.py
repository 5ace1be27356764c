"""Waveform I/O, sample-grid arithmetic and band-limited resampling."""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from scipy.io import wavfile
from scipy.special import i0

# Windowed-sinc design: kernel half-width in periods of the lower rate and the
# stopband attenuation the Kaiser window is tuned for.
SINC_HALF_WIDTH = 32
STOPBAND_DB = 80.0

# Ties in nearest_index are detected within this many grid periods so that
# midpoints which pick up float rounding still resolve to the smaller index.
_TIE_TOL = 1e-9


class AudioError(ValueError):
    """Raised for malformed audio input or invalid audio operations."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if not self.rate > 0:
            raise AudioError(f"sample rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate", float(self.rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate

    @property
    def grid(self) -> CoordinateGrid:
        return CoordinateGrid(self.rate, 0.0, len(self.samples))


@dataclass(frozen=True)
class CoordinateGrid:
    """Uniform time grid ``t_i = origin + i / rate`` for ``i < count``."""

    rate: float
    origin: float = 0.0
    count: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise AudioError(f"grid rate must be positive, got {self.rate}")
        if self.count < 0:
            raise AudioError("grid count must be non-negative")

    def coord(self, i):
        return self.origin + np.asarray(i, dtype=np.float64) / self.rate

    def coords(self) -> np.ndarray:
        return self.coord(np.arange(self.count))


def nearest_index(t, grid: CoordinateGrid):
    """Index of the grid point closest to ``t``.

    Exact midpoints resolve to the smaller index and times outside the grid
    clamp to the first/last point. Works elementwise on arrays.
    """
    if grid.count < 1:
        raise AudioError("nearest_index on an empty grid")
    u = (np.asarray(t, dtype=np.float64) - grid.origin) * grid.rate
    idx = np.ceil(u - 0.5 - _TIE_TOL).astype(np.int64)
    idx = np.clip(idx, 0, grid.count - 1)
    return int(idx) if idx.ndim == 0 else idx


def read_wav(path) -> AudioSignal:
    """Read a PCM or IEEE-float WAV file as mono float samples in [-1, 1]."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioError(f"unsupported WAV file {path}: {exc}") from exc
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"zero-length audio in {path}")
    return AudioSignal(x, float(rate))


def write_wav(signal: AudioSignal, path, bit_depth=16):
    """Write mono WAV; ``bit_depth`` is 16 (PCM) or 32 (IEEE float)."""
    x = np.asarray(signal.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise AudioError("refusing to write non-finite samples")
    rate = signal.rate
    if rate != int(rate):
        raise AudioError(f"WAV headers need an integer rate, got {rate}")
    if bit_depth == 16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif bit_depth == 32:
        data = x.astype(np.float32)
    else:
        raise AudioError(f"bit_depth must be 16 or 32, got {bit_depth}")
    wavfile.write(os.fspath(path), int(rate), data)


# Table resolution (points per lower-rate period) for the windowed kernel.
_TABLE_RES = 8192


@functools.lru_cache(maxsize=1)
def _kernel_table():
    """Kaiser-windowed sinc sampled on ``u = tau * low_rate`` in [0, half width].

    The transition band is placed just below the lower Nyquist so the
    stopband starts at ``low_rate / 2``.
    """
    transition = (STOPBAND_DB - 7.95) / (14.36 * 2.0 * SINC_HALF_WIDTH)
    cutoff = 0.5 - 0.5 * transition
    beta = 0.1102 * (STOPBAND_DB - 8.7)
    u = np.arange(SINC_HALF_WIDTH * _TABLE_RES + 2) / _TABLE_RES
    r = np.clip(1.0 - (u / SINC_HALF_WIDTH) ** 2, 0.0, None)
    table = 2.0 * cutoff * np.sinc(2.0 * cutoff * u) * i0(beta * np.sqrt(r)) / i0(beta)
    table[u > SINC_HALF_WIDTH] = 0.0
    return table


@numba.njit(cache=True)
def _interpolate_loop(x, rate, low, coords, table, res, half_taps, out):
    n = x.shape[0]
    half_width = half_taps / low
    limit = half_taps * res
    for m in range(coords.shape[0]):
        t = coords[m]
        first = max(int(math.ceil((t - half_width) * rate)), 0)
        last = min(int(math.floor((t + half_width) * rate)), n - 1)
        acc = 0.0
        for i in range(first, last + 1):
            pos = abs((t - i / rate) * low) * res
            if pos >= limit:
                continue
            j = int(pos)
            k = table[j] + (pos - j) * (table[j + 1] - table[j])
            acc += k * x[i]
        out[m] = acc * (low / rate)


def sinc_interpolate(signal: AudioSignal, coords, band_rate=None):
    """Evaluate the band-limited reconstruction of ``signal`` at ``coords``.

    The reconstruction is low-passed so that nothing above ``band_rate / 2``
    survives (default: the signal's own Nyquist). Samples outside the signal
    are treated as zero.
    """
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    rate = signal.rate
    low = rate if band_rate is None else min(rate, float(band_rate))
    out = np.empty(coords.shape[0], dtype=np.float64)
    _interpolate_loop(signal.samples, rate, low, coords, _kernel_table(),
                      float(_TABLE_RES), float(SINC_HALF_WIDTH), out)
    return out


def sinc_resample(signal: AudioSignal, target_rate) -> AudioSignal:
    """Resample to ``target_rate`` with a Kaiser-windowed sinc kernel.

    Output is band-limited to ``min(rate, target_rate) / 2`` and has
    ``round(len * target_rate / rate)`` samples. Same-rate calls return a copy.
    """
    if not target_rate > 0:
        raise AudioError(f"target rate must be positive, got {target_rate}")
    target_rate = float(target_rate)
    if target_rate == signal.rate:
        return AudioSignal(signal.samples.copy(), signal.rate)
    count = int(round(len(signal) * target_rate / signal.rate))
    coords = np.arange(count) / target_rate
    y = sinc_interpolate(signal, coords, band_rate=target_rate)
    return AudioSignal(y, target_rate)
