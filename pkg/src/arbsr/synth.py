"""Synthetic corpora of chirping sinusoid mixtures."""

from __future__ import annotations

import numpy as np

from .audio_io import AudioSignal


def chirp_mixture(rng, rate=48000.0, duration=0.25, max_components=8,
                  f_min=60.0, f_max=12000.0, max_sweep=0.5, peak=0.8):
    """Sum of 1..``max_components`` linear chirps with random parameters.

    Start frequencies are log-uniform in ``[f_min, f_max]``; each chirp's
    frequency drifts by up to ``max_sweep`` (relative) over the clip and is
    kept below 0.45 * rate. The mixture is scaled to ``peak``.
    """
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(int(rng.integers(1, max_components + 1))):
        f0 = np.exp(rng.uniform(np.log(f_min), np.log(f_max)))
        f1 = np.clip(f0 * (1.0 + rng.uniform(-max_sweep, max_sweep)), f_min, 0.45 * rate)
        amp = rng.uniform(0.1, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        # instantaneous frequency moves linearly from f0 to f1
        x += amp * np.sin(phase + 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t / duration))
    return AudioSignal(x * (peak / np.max(np.abs(x))), rate)


def chirp_corpus(count, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    return [chirp_mixture(rng, **kwargs) for _ in range(count)]
