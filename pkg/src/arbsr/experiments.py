"""Evaluation reports, scale sweeps, ablations and spectrogram dumps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .autodiff import load_checkpoint
from .audio_io import AudioError, AudioSignal, read_wav, sinc_resample
from .baselines import METHODS, baseline_upsample
from .inference import upsample
from .metrics import LsdConfig, align, log_power_spectrogram, lsd, snr
from .model import ModelWeights
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

REPORT_HEADER = ["model_id", "config_hash", "scale", "file", "snr_db", "lsd"]
MEAN_ROW = "__mean__"
VARIANTS = ("full", "-sto", "-spec")


def config_hash(config) -> str:
    """Short digest of a JSON-serialisable config (dicts hashed with sorted keys)."""
    if hasattr(config, "to_dict"):
        config = config.to_dict()
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def checkpoint_meta(path):
    """The JSON header stored alongside a checkpoint's tensors."""
    return load_checkpoint(path)[1]


def weights_digest(weights: ModelWeights) -> str:
    h = hashlib.sha256()
    for name in sorted(weights.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(weights.params[name].data, dtype="<f4").tobytes())
    return h.hexdigest()[:12]


@dataclass
class FileScore:
    name: str
    snr: float
    lsd: float


@dataclass
class EvalReport:
    scale: float
    model_id: str
    config_hash: str
    files: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.files)

    @property
    def mean_snr(self):
        return float(np.mean([f.snr for f in self.files]))

    @property
    def mean_lsd(self):
        return float(np.mean([f.lsd for f in self.files]))

    def rows(self):
        head = [self.model_id, self.config_hash, _fmt(self.scale)]
        out = [head + [f.name, _fmt(f.snr), _fmt(f.lsd)] for f in self.files]
        out.append(head + [MEAN_ROW, _fmt(self.mean_snr), _fmt(self.mean_lsd)])
        return out


def _fmt(v):
    # repr keeps full precision; inf is written as "inf"
    return "inf" if v == math.inf else repr(float(v))


def write_reports(reports, path):
    """One CSV with a row per (scale, file) plus one ``__mean__`` row per scale."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for report in reports:
            w.writerows(report.rows())


def read_reports(path):
    """Parse a report CSV back into :class:`EvalReport` objects (aggregate rows dropped)."""
    reports = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["model_id"], row["config_hash"], float(row["scale"]))
            rep = reports.setdefault(key, EvalReport(key[2], key[0], key[1]))
            if row["file"] != MEAN_ROW:
                rep.files.append(FileScore(row["file"], float(row["snr_db"]), float(row["lsd"])))
    return list(reports.values())


def score_pairs(pairs, scale=1.0, model_id="-", cfg_hash="-", lsd_config=LsdConfig()):
    """Score ``(name, reference, estimate)`` triples; files are sorted by name."""
    report = EvalReport(float(scale), model_id, cfg_hash)
    for name, ref, est in sorted(pairs, key=lambda p: p[0]):
        x = ref.samples if isinstance(ref, AudioSignal) else ref
        y = est.samples if isinstance(est, AudioSignal) else est
        x, y = align(x, y)
        report.files.append(FileScore(name, snr(x, y), lsd(x, y, lsd_config)))
    return report


def evaluate(testset, scale, weights=None, r_in=8000.0, method="model", cfg_hash="-",
             lsd_config=LsdConfig()):
    """Downsample each ``(name, clip)`` to ``r_in``, upsample by ``scale``, score.

    The reference is the clip band-limited and resampled to ``r_in * scale``.
    ``method`` is ``"model"`` (needs ``weights``) or a classical baseline name.
    """
    r_out = r_in * float(scale)
    if method == "model":
        if weights is None:
            raise ValueError("method 'model' needs weights")
        model_id = weights_digest(weights)
    elif method in METHODS:
        model_id = method
    else:
        raise ValueError(f"unknown method {method!r}")
    pairs = []
    for name, clip in testset:
        if r_out > clip.rate + 1e-9:
            raise AudioError(f"{name}: output rate {r_out} exceeds the clip rate {clip.rate}")
        ref = sinc_resample(clip, r_out)
        low = sinc_resample(clip, r_in)
        if method == "model":
            est = upsample(low, weights, r_out, exact=False)
        else:
            est = baseline_upsample(low, r_out, method)
        pairs.append((name, ref, est))
    return score_pairs(pairs, scale, model_id, cfg_hash, lsd_config)


def sweep_scales(testset, scales, weights=None, r_in=8000.0, method="model", cfg_hash="-"):
    return [evaluate(testset, s, weights, r_in, method, cfg_hash) for s in scales]


def trend(reports):
    """Spearman correlation between scale and mean SNR."""
    if len(reports) < 2:
        return float("nan")
    rho = spearmanr([r.scale for r in reports], [r.mean_snr for r in reports]).statistic
    return float(rho)


def variant_config(cfg: TrainConfig, variant):
    """Training config for an ablation variant: ``-sto`` sets delta=0, ``-spec`` sets lambda=0."""
    if variant == "full":
        return cfg
    if variant == "-sto":
        return cfg.with_overrides(delta=0.0)
    if variant == "-spec":
        return cfg.with_overrides(lam=0.0)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def ablate(corpus, testset, cfg: TrainConfig, variants=VARIANTS, scale=2.0, train=fit):
    """Train every variant on the same corpus and seed; report metrics and deltas vs full.

    Returns a list of dicts with keys variant, snr_db, lsd, d_snr, d_lsd (deltas
    are ``None`` when ``full`` is not among the variants).
    """
    results = {}
    for variant in variants:
        vcfg = variant_config(cfg, variant)
        weights, _ = train(corpus, vcfg)
        results[variant] = evaluate(testset, scale, weights, vcfg.task.r_in, cfg_hash=config_hash(vcfg))
    base = results.get("full")
    table = []
    for variant, rep in results.items():
        row = {"variant": variant, "snr_db": rep.mean_snr, "lsd": rep.mean_lsd, "d_snr": None, "d_lsd": None}
        if base is not None:
            row["d_snr"] = rep.mean_snr - base.mean_snr
            row["d_lsd"] = rep.mean_lsd - base.mean_lsd
        table.append(row)
    return table


def write_ablation(table, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["variant", "snr_db", "lsd", "d_snr", "d_lsd"])
        for row in table:
            w.writerow([row["variant"]] + ["" if row[k] is None else _fmt(row[k])
                                           for k in ("snr_db", "lsd", "d_snr", "d_lsd")])


def spectrogram_dump(signal: AudioSignal, path, config=LsdConfig()):
    """Write the log-power spectrogram of ``signal`` as CSV or PNG (by extension).

    The CSV has a ``time_s`` column followed by one column per frequency bin.
    """
    spec = log_power_spectrogram(signal.samples, config)
    times = (np.arange(spec.shape[0]) * config.hop + config.fft_size / 2) / signal.rate
    freqs = np.fft.rfftfreq(config.fft_size, 1.0 / signal.rate)
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["time_s"] + [f"{v:.3f}" for v in freqs])
            for t, row in zip(times, spec):
                w.writerow([f"{t:.6f}"] + [f"{v:.6g}" for v in row])
    elif ext == ".png":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        mesh = ax.pcolormesh(times, freqs, spec.T, shading="nearest", cmap="magma")
        fig.colorbar(mesh, ax=ax, label="log power")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("frequency (Hz)")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
    else:
        raise ValueError(f"unsupported spectrogram format {ext!r}; use .csv or .png")
    return spec


def load_corpus(directory):
    """All ``*.wav`` files in ``directory`` as sorted ``(name, AudioSignal)`` pairs."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(directory)
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".wav"))
    if not names:
        raise AudioError(f"no .wav files in {directory}")
    return [(n, read_wav(os.path.join(directory, n))) for n in names]
