"""Classical upsamplers used as reference points."""

from __future__ import annotations

import math

import numpy as np

from .audio_io import AudioError, AudioSignal, sinc_resample

METHODS = ("sinc", "zero-hold", "linear")


def output_count(signal: AudioSignal, rate):
    """``floor(duration * rate)``, robust to float noise in the product."""
    return int(math.floor(len(signal) * float(rate) / signal.rate + 1e-9))


def output_coords(signal: AudioSignal, rate):
    return np.arange(output_count(signal, rate)) / float(rate)


def baseline_upsample(signal: AudioSignal, rate, method="sinc") -> AudioSignal:
    """Resample with a classical method.

    ``zero-hold`` repeats the most recent input sample; ``linear`` draws
    straight lines between samples and holds the last sample past the end.
    Both produce ``floor(duration * rate)`` samples; ``sinc`` delegates to
    :func:`arbsr.audio_io.sinc_resample` and keeps its rounding rule.
    """
    if not rate > 0:
        raise AudioError(f"target rate must be positive, got {rate}")
    if method == "sinc":
        return sinc_resample(signal, rate)
    t = output_coords(signal, rate)
    pos = t * signal.rate
    if method == "zero-hold":
        idx = np.clip(np.floor(pos + 1e-9).astype(np.int64), 0, len(signal) - 1)
        return AudioSignal(signal.samples[idx], rate)
    if method == "linear":
        return AudioSignal(np.interp(pos, np.arange(len(signal)), signal.samples), rate)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
