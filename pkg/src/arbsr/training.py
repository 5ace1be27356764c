"""Self-supervised training on randomly re-sampled super-resolution tasks.

Each task crops a clip, downsamples it to the input rate and, separately, to
a target rate drawn uniformly from ``[r_out_min, r_out_max]``. During
training every target coordinate is decoded from a randomly perturbed
nearest latent (``i(t + eta)``, ``eta ~ N(0, delta^2)``) so each code learns
to cover more than its own cell.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.signal import get_window

from . import autodiff as ad
from .audio_io import AudioSignal, CoordinateGrid, nearest_index, sinc_interpolate, sinc_resample
from .autodiff import Tensor
from .model import (
    LatentSequence,
    ModelConfig,
    ModelWeights,
    batch_codes,
    context_indices,
    decoder_graph,
    decoder_inputs,
    init_weights,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    r_in: float = 8000.0
    r_out_min: float = 8000.0
    r_out_max: float = 24000.0
    r_data: float = 48000.0
    clip_length: float = 0.25
    lam: float = 1.0
    delta: float | None = None  # seconds; None means half an input period

    def __post_init__(self):
        if not 0 < self.r_in <= self.r_out_min <= self.r_out_max <= self.r_data:
            raise ValueError("need 0 < r_in <= r_out_min <= r_out_max <= r_data")
        if self.lam < 0:
            raise ValueError("spectral loss weight must be non-negative")
        if self.delta is not None and self.delta < 0:
            raise ValueError("perturbation std must be non-negative")
        if not self.clip_length > 0:
            raise ValueError("clip_length must be positive")

    @property
    def sigma(self):
        return 1.0 / (2.0 * self.r_in) if self.delta is None else self.delta


@dataclass(frozen=True)
class SpectralLossConfig:
    scales: tuple = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))

    def __post_init__(self):
        scales = tuple(tuple(int(v) for v in s) for s in self.scales)
        for fft, hop, win in scales:
            if not fft >= win > hop > 0:
                raise ValueError(f"invalid STFT scale {(fft, hop, win)}")
        if not scales:
            raise ValueError("need at least one STFT scale")
        object.__setattr__(self, "scales", scales)

    @property
    def longest(self):
        return max(win for _, _, win in self.scales)

    def fitting(self, length):
        """Drop scales whose window does not fit in ``length`` samples."""
        kept = tuple(s for s in self.scales if s[2] <= length)
        if not kept:
            raise ValueError(f"signal of {length} samples is shorter than every STFT window")
        return SpectralLossConfig(kept)


@dataclass
class TrainTask:
    input: AudioSignal
    target_coords: np.ndarray
    target_amps: np.ndarray
    r_out: float


# task generation -------------------------------------------------------------

def sample_task(clip: AudioSignal, spec: TaskSpec, rng, cache=None) -> TrainTask:
    """Random crop of ``clip`` turned into an ``r_in -> r_out'`` task.

    ``cache`` (a dict) memoises the input downsampling per ``(clip, crop start)``.
    """
    if not math.isclose(clip.rate, spec.r_data):
        raise ValueError(f"clip rate {clip.rate} does not match r_data {spec.r_data}")
    n_crop = int(round(spec.clip_length * spec.r_data))
    if len(clip) < n_crop:
        raise ValueError(f"clip too short: {len(clip)} samples, need {n_crop}")
    start = int(rng.integers(0, len(clip) - n_crop + 1))
    crop = AudioSignal(clip.samples[start:start + n_crop], clip.rate)
    if spec.r_out_min == spec.r_out_max:
        r_out = float(spec.r_out_min)
    else:
        r_out = float(rng.uniform(spec.r_out_min, spec.r_out_max))
    key = (id(clip), start)
    inp = None if cache is None else cache.get(key)
    if inp is None:
        inp = sinc_resample(crop, spec.r_in)
        if cache is not None:
            cache[key] = inp
    count = int(math.floor(spec.clip_length * r_out))
    coords = np.arange(count) / r_out
    amps = sinc_interpolate(crop, coords, band_rate=r_out)
    return TrainTask(inp, coords, amps, r_out)


def perturbed_index(t, grid: CoordinateGrid, delta, rng):
    """Nearest grid index of ``t + eta`` with ``eta ~ N(0, delta^2)``, clamped."""
    t = np.asarray(t, dtype=np.float64)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return nearest_index(t, grid)
    return nearest_index(t + rng.normal(0.0, delta, size=t.shape), grid)


# forward passes ---------------------------------------------------------------

def _offset_rows(rows, b, n, total):
    return np.where(rows == n, total, rows + b * n)


def _split(y, counts):
    bounds = np.cumsum([0] + list(counts))
    return [ad.slice_(y, slice(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def batch_predictions(tasks, weights, delta, rng, mode="stochastic"):
    """Differentiable predictions for every task; all inputs must share a length."""
    n = len(tasks[0].input)
    if any(len(t.input) != n for t in tasks):
        raise ValueError("tasks in a batch need equally long inputs")
    codes = batch_codes([t.input for t in tasks], weights)
    total = len(tasks) * n
    counts = [len(t.target_coords) for t in tasks]
    if mode == "stochastic":
        all_rows, all_rel = [], []
        for b, task in enumerate(tasks):
            grid = task.input.grid
            centers = perturbed_index(task.target_coords, grid, delta, rng)
            rows, rel = context_indices(grid, task.target_coords, centers)
            all_rows.append(_offset_rows(rows, b, n, total))
            all_rel.append(rel)
        y = decoder_graph(decoder_inputs(codes, np.concatenate(all_rows), np.concatenate(all_rel)), weights)
        return _split(y, counts)
    if mode == "ensemble":
        left_rows, right_rows, left_rel, right_rel, w_right = [], [], [], [], []
        for b, task in enumerate(tasks):
            grid = task.input.grid
            lo, frac = _ensemble_cells(task.target_coords, grid)
            r, rel = context_indices(grid, task.target_coords, lo)
            left_rows.append(_offset_rows(r, b, n, total))
            left_rel.append(rel)
            r, rel = context_indices(grid, task.target_coords, lo + 1)
            right_rows.append(_offset_rows(r, b, n, total))
            right_rel.append(rel)
            w_right.append(frac)
        rows = np.concatenate(left_rows + right_rows)
        rel = np.concatenate(left_rel + right_rel)
        y = decoder_graph(decoder_inputs(codes, rows, rel), weights)
        m = rows.shape[0] // 2
        w = np.concatenate(w_right).astype(np.float32)
        blended = ad.add(ad.mul(ad.slice_(y, slice(0, m)), Tensor(1.0 - w)),
                         ad.mul(ad.slice_(y, slice(m, 2 * m)), Tensor(w)))
        return _split(blended, counts)
    raise ValueError(f"unknown prediction mode {mode!r}")


def perturbed_predict(task: TrainTask, weights: ModelWeights, spec: TaskSpec, rng):
    """Training-time prediction of ``task``'s targets as a differentiable Tensor."""
    return batch_predictions([task], weights, spec.sigma, rng)[0]


def _ensemble_cells(t, grid):
    """Left cell index and right blend weight for ``t`` inside the grid span."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    u = (t - grid.origin) * grid.rate
    if grid.count < 2 or np.any(u < 0) or np.any(u > grid.count - 1):
        raise ValueError("ensemble prediction needs t within the input grid span")
    lo = np.minimum(np.floor(u).astype(np.int64), grid.count - 2)
    return lo, u - lo


def ensemble_predict(t, latents: LatentSequence, weights: ModelWeights):
    """Distance-weighted blend of the two flanking local predictions at ``t``.

    Kept for the ablation comparison only; regular prediction uses the
    nearest latent.
    """
    grid = latents.grid
    lo, w = _ensemble_cells(t, grid)
    table = Tensor(latents.codes.astype(np.float32))
    with ad.no_grad():
        rows, rel = context_indices(grid, t, lo)
        left = decoder_graph(decoder_inputs(table, rows, rel), weights).data
        rows, rel = context_indices(grid, t, lo + 1)
        right = decoder_graph(decoder_inputs(table, rows, rel), weights).data
    out = (1.0 - w) * left + w * right
    return float(out[0]) if np.ndim(t) == 0 else out


# losses ---------------------------------------------------------------------------

_WINDOWS = {}


def _hann(n, dtype):
    key = (n, np.dtype(dtype).str)
    if key not in _WINDOWS:
        _WINDOWS[key] = get_window("hann", n).astype(dtype)
    return _WINDOWS[key]


def stft_magnitude(x, fft_size, hop, win_length):
    frames = ad.frame(x, win_length, hop)
    frames = ad.mul(frames, Tensor(_hann(win_length, x.dtype)))
    if fft_size > win_length:
        pad = Tensor(np.zeros((frames.shape[0], fft_size - win_length), dtype=x.dtype))
        frames = ad.concat([frames, pad], axis=1)
    return ad.dft_magnitude(frames)


def spec_loss(x, x_hat, config: SpectralLossConfig = SpectralLossConfig()):
    """Multi-resolution STFT loss: spectral convergence plus log-magnitude L1.

    Not symmetric: the convergence term is normalised by the reference
    spectrum ``x``.
    """
    x = ad.as_tensor(x, like=x_hat if isinstance(x_hat, Tensor) else None)
    x_hat = ad.as_tensor(x_hat, like=x)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    if x.shape[0] < config.longest:
        raise ValueError(f"signal of {x.shape[0]} samples is shorter than window {config.longest}")
    terms = []
    for fft, hop, win in config.scales:
        mag = stft_magnitude(x, fft, hop, win)
        mag_hat = stft_magnitude(x_hat, fft, hop, win)
        convergence = ad.div(ad.frobenius_norm(ad.sub(mag, mag_hat)), ad.frobenius_norm(mag))
        log_l1 = ad.mean(ad.abs_(ad.sub(ad.log(mag), ad.log(mag_hat))))
        terms.append(ad.add(convergence, log_l1))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


def total_loss(x, x_hat, lam, config: SpectralLossConfig = SpectralLossConfig()):
    """Waveform L1 plus ``lam`` times the spectral loss."""
    x = ad.as_tensor(x, like=x_hat if isinstance(x_hat, Tensor) else None)
    wave = ad.l1_loss(x_hat, x)
    if lam == 0:
        return wave
    return ad.add(wave, ad.mul(spec_loss(x, x_hat, config), lam))


def lr_at(epoch, lr=1e-3, halve_every=5):
    return lr * 0.5 ** (epoch // halve_every)


# training loop ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    spectral: SpectralLossConfig = field(default_factory=SpectralLossConfig)
    epochs: int = 50
    lr: float = 1e-3
    halve_every: int = 5
    clip_norm: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    mode: str = "stochastic"

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("epochs", "lr", "halve_every", "clip_norm",
                                            "batch_size", "seed", "mode")}
        d.update({k: v for k, v in asdict(self.task).items()})
        d.update(self.model.to_dict())
        d["scales"] = [list(s) for s in self.spectral.scales]
        return d

    @classmethod
    def from_dict(cls, d):
        task_keys = {f.name for f in fields(TaskSpec)}
        model_keys = {f.name for f in fields(ModelConfig)}
        top_keys = {"epochs", "lr", "halve_every", "clip_norm", "batch_size", "seed", "mode"}
        unknown = set(d) - task_keys - model_keys - top_keys - {"scales"}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = {k: d[k] for k in top_keys if k in d}
        kwargs["task"] = TaskSpec(**{k: d[k] for k in task_keys if k in d})
        kwargs["model"] = ModelConfig(**{k: d[k] for k in model_keys if k in d})
        if "scales" in d:
            kwargs["spectral"] = SpectralLossConfig(tuple(tuple(s) for s in d["scales"]))
        return cls(**kwargs)

    def with_overrides(self, **kw):
        task_kw = {k: kw.pop(k) for k in list(kw) if k in {f.name for f in fields(TaskSpec)}}
        cfg = replace(self, **kw)
        if task_kw:
            cfg = replace(cfg, task=replace(cfg.task, **task_kw))
        return cfg


_INT_KEYS = {"epochs", "halve_every", "batch_size", "seed", "hidden", "decoder_layers"}
_LIST_KEYS = {"kernel_sizes", "channels"}


def parse_config_text(text):
    """Parse ``key = value`` lines ('#' comments) into a :class:`TrainConfig`."""
    d = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _LIST_KEYS:
            d[key] = [int(v) for v in value.replace(",", " ").split()]
        elif key == "scales":
            d[key] = [[int(v) for v in part.split("/")] for part in value.replace(",", " ").split()]
        elif key == "mode":
            d[key] = value
        elif key == "delta" and value.lower() in ("", "none", "auto"):
            d[key] = None
        elif key in _INT_KEYS:
            d[key] = int(value)
        else:
            d[key] = float(value)
    return TrainConfig.from_dict(d)


def format_config_text(cfg: TrainConfig):
    lines = []
    for key, value in cfg.to_dict().items():
        if key in _LIST_KEYS:
            value = ", ".join(str(v) for v in value)
        elif key == "scales":
            value = " ".join("/".join(str(v) for v in s) for s in value)
        elif value is None:
            value = "auto"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def fit(corpus, cfg: TrainConfig = TrainConfig(), progress=None):
    """Train encoder and decoder; returns ``(weights, history)``.

    ``history`` holds one dict per epoch with keys epoch, lr, wave_loss,
    spec_loss, total. A non-finite loss aborts with :class:`TrainingError`.
    """
    if not corpus:
        raise TrainingError("empty training corpus")
    spec = cfg.task
    weights = init_weights(cfg.model, seed=cfg.seed)
    state = ad.AdamState()
    history = []
    cache = {}
    for epoch in range(cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        lr = lr_at(epoch, cfg.lr, cfg.halve_every)
        order = rng.permutation(len(corpus))
        sums = np.zeros(3)
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            tasks = [sample_task(corpus[i], spec, rng, cache) for i in order[start:start + cfg.batch_size]]
            wave, spectral, total = _train_step(tasks, weights, state, lr, cfg, rng)
            if not np.isfinite(total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"wave={wave} spec={spectral} lr={lr}")
            sums += (wave, spectral, total)
            batches += 1
        wave, spectral, total = sums / batches
        row = {"epoch": epoch, "lr": lr, "wave_loss": wave, "spec_loss": spectral, "total": total}
        history.append(row)
        log.info("epoch %d lr %.3g wave %.5f spec %.5f total %.5f", epoch, lr, wave, spectral, total)
        if progress is not None:
            progress(row)
    return weights, history


def _train_step(tasks, weights, state, lr, cfg, rng):
    spec = cfg.task
    preds = batch_predictions(tasks, weights, spec.sigma, rng, cfg.mode)
    waves, specs, losses = [], [], []
    for task, pred in zip(tasks, preds):
        target = Tensor(task.target_amps.astype(np.float32))
        wave = ad.l1_loss(pred, target)
        scfg = cfg.spectral.fitting(len(task.target_amps))
        if spec.lam > 0:
            sl = spec_loss(target, pred, scfg)
            loss = ad.add(wave, ad.mul(sl, spec.lam))
            specs.append(sl.item())
        else:
            with ad.no_grad():
                specs.append(spec_loss(target, Tensor(pred.data), scfg).item())
            loss = wave
        waves.append(wave.item())
        losses.append(loss)
    total = losses[0]
    for loss in losses[1:]:
        total = ad.add(total, loss)
    total = ad.mul(total, 1.0 / len(losses))
    value = total.item()
    if not np.isfinite(value):
        return float(np.mean(waves)), float(np.mean(specs)), value
    total.backward()
    grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data)
             for k, p in weights.params.items()}
    grads = ad.clip_grad_norm(grads, cfg.clip_norm)
    ad.adam_step(weights.params, grads, state, lr)
    for p in weights.params.values():
        p.zero_grad()
    return float(np.mean(waves)), float(np.mean(specs)), value


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "lr", "wave_loss", "spec_loss", "total"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(float(v)) if k != "epoch" else int(v)) for k, v in row.items()})
