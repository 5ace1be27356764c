"""Objective quality metrics: SNR and log-spectral distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

MAG_FLOOR = 1e-7
# Evaluation tolerates this much length disagreement from resampler rounding.
MAX_LENGTH_SLACK = 2


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LsdConfig:
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        if not self.fft_size > self.hop > 0:
            raise MetricError("need fft_size > hop > 0")


def align(x, x_hat):
    """Truncate both to the shorter length if they differ by at most two samples."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    diff = abs(len(x) - len(x_hat))
    if diff > MAX_LENGTH_SLACK:
        raise MetricError(f"length mismatch: {len(x)} vs {len(x_hat)}")
    n = min(len(x), len(x_hat))
    return x[:n], x_hat[:n]


def snr(x, x_hat):
    """10 log10(|x|^2 / |x - x_hat|^2) in dB; ``inf`` when the error is exactly zero."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    signal = float(np.sum(x * x))
    if signal == 0.0:
        raise MetricError("SNR undefined for an all-zero reference")
    noise = float(np.sum((x - x_hat) ** 2))
    if noise == 0.0:
        return float("inf")
    return 10.0 * np.log10(signal / noise)


def log_power_spectrogram(x, config=LsdConfig()):
    """Natural-log power of a Hann STFT, frames without padding: ``[L, K]``."""
    x = np.asarray(x, dtype=np.float64)
    n = config.fft_size
    if len(x) < n:
        raise MetricError(f"signal of {len(x)} samples is shorter than fft_size {n}")
    idx = np.arange(1 + (len(x) - n) // config.hop)[:, None] * config.hop + np.arange(n)
    spec = np.fft.rfft(x[idx] * get_window("hann", n), axis=1)
    mag = np.maximum(np.abs(spec), MAG_FLOOR)
    return np.log(mag * mag)


def lsd(x, x_hat, config=LsdConfig()):
    """Mean over frames of the RMS (over frequency) log-power difference."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    a = log_power_spectrogram(x, config)
    b = log_power_spectrogram(x_hat, config)
    return float(np.mean(np.sqrt(np.mean((a - b) ** 2, axis=1))))
