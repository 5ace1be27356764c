"""Convolutional latent encoder and coordinate-conditioned MLP decoder.

The encoder maps every input sample ``i`` to a latent code ``z_i`` that sees
``k`` samples on each side. To predict the amplitude at time ``t`` the decoder
receives the offset of ``t`` from its nearest input sample (in input sample
periods) together with the codes of that sample and its two neighbours.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .audio_io import AudioSignal, CoordinateGrid, nearest_index
from .autodiff import Tensor


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kernel_sizes: tuple = (7, 3, 3, 1)
    channels: tuple = (16, 32, 64, 32)
    hidden: int = 144
    decoder_layers: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.kernel_sizes) != len(self.channels):
            raise ModelError("kernel_sizes and channels must have the same length")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ModelError("encoder kernel sizes must be odd")
        if self.decoder_layers < 1 or self.hidden < 1:
            raise ModelError("decoder needs at least one layer and a positive width")

    @property
    def latent_dim(self):
        return self.channels[-1]

    @property
    def receptive_half_width(self):
        return sum((k - 1) // 2 for k in self.kernel_sizes)

    @property
    def decoder_input_dim(self):
        return 1 + 3 * self.latent_dim

    def decoder_shapes(self):
        widths = [self.decoder_input_dim] + [self.hidden] * (self.decoder_layers - 1) + [1]
        return list(zip(widths[1:], widths[:-1]))

    def to_dict(self):
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("kernel_sizes", "channels", "hidden", "decoder_layers") if k in d})


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    def encoder_layers(self):
        return [(self.params[f"enc.{n}.weight"], self.params[f"enc.{n}.bias"])
                for n in range(len(self.config.channels))]

    def decoder_layers(self):
        return [(self.params[f"dec.{n}.weight"], self.params[f"dec.{n}.bias"])
                for n in range(self.config.decoder_layers)]

    def arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def copy(self):
        return ModelWeights(self.config, {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                                          for k, v in self.params.items()})

    def save(self, path, extra=None):
        config = {"model": self.config.to_dict()}
        if extra:
            config.update(extra)
        ad.save_checkpoint(path, self.params, config)

    @classmethod
    def load(cls, path):
        arrays, meta = ad.load_checkpoint(path)
        config = ModelConfig.from_dict(meta.get("model", {}))
        weights = cls(config, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})
        expected = init_weights(config, seed=0)
        for k, v in expected.params.items():
            if k not in weights.params or weights.params[k].shape != v.shape:
                raise ModelError(f"checkpoint {path} does not match its architecture at {k!r}")
        return weights


def init_weights(config=None, seed=0):
    """Fan-in scaled uniform initialisation (He bound before ReLU, LeCun otherwise)."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    params = {}
    c_in = 1
    n_enc = len(config.channels)
    for n, (k, c_out) in enumerate(zip(config.kernel_sizes, config.channels)):
        fan_in = c_in * k
        gain = 6.0 if n < n_enc - 1 else 3.0
        w = rng.uniform(-1, 1, size=(c_out, c_in, k)) * np.sqrt(gain / fan_in)
        b = rng.uniform(-1, 1, size=c_out) / np.sqrt(fan_in)
        params[f"enc.{n}.weight"] = Tensor(w.astype(np.float32), requires_grad=True)
        params[f"enc.{n}.bias"] = Tensor(b.astype(np.float32), requires_grad=True)
        c_in = c_out
    shapes = config.decoder_shapes()
    for n, (out_dim, in_dim) in enumerate(shapes):
        gain = 6.0 if n < len(shapes) - 1 else 3.0
        w = rng.uniform(-1, 1, size=(out_dim, in_dim)) * np.sqrt(gain / in_dim)
        b = rng.uniform(-1, 1, size=out_dim) / np.sqrt(in_dim)
        params[f"dec.{n}.weight"] = Tensor(w.astype(np.float32), requires_grad=True)
        params[f"dec.{n}.bias"] = Tensor(b.astype(np.float32), requires_grad=True)
    return ModelWeights(config, params)


def parameter_count(weights, part=None):
    """Number of scalar parameters; ``part`` may be "enc" or "dec"."""
    return int(sum(v.size for k, v in weights.params.items()
                   if part is None or k.startswith(part + ".")))


@dataclass(frozen=True)
class LatentSequence:
    codes: np.ndarray  # [count, latent_dim]
    grid: CoordinateGrid

    def __post_init__(self):
        if self.codes.shape[0] != self.grid.count:
            raise ModelError("latent count does not match its grid")


def encoder_graph(x, weights):
    """Encoder as differentiable ops: ``[B, 1, L]`` samples -> ``[B, D, L]`` codes."""
    layers = weights.encoder_layers()
    h = x
    for n, (w, b) in enumerate(layers):
        h = ad.conv1d(h, w, b)
        if n < len(layers) - 1:
            h = ad.relu(h)
    return h


def decoder_graph(inputs, weights):
    """Decoder MLP on ``[M, 1 + 3D]`` inputs -> ``[M]`` amplitudes."""
    layers = weights.decoder_layers()
    h = inputs
    for n, (w, b) in enumerate(layers):
        h = ad.dense(h, w, b)
        if n < len(layers) - 1:
            h = ad.relu(h)
    return ad.reshape(h, h.shape[:-1])


def _check_length(n, config):
    need = 2 * config.receptive_half_width + 1
    if n < need:
        raise ModelError(f"signal too short: {n} samples, need at least {need}")


def encode(signal: AudioSignal, weights: ModelWeights) -> LatentSequence:
    _check_length(len(signal), weights.config)
    x = Tensor(signal.samples.astype(np.float32)[None, None, :])
    with ad.no_grad():
        h = encoder_graph(x, weights)
    return LatentSequence(np.ascontiguousarray(h.data[0].T), signal.grid)


def context_indices(grid, t, centers=None):
    """Triplet row indices and relative coordinates for query times ``t``.

    Returns ``(rows [M, 3], rel [M])`` where ``rows`` index the latent table
    extended by one trailing zero row (index ``grid.count``) that stands in
    for neighbours past either end. ``rel`` is ``t - t_center`` measured in
    input sample periods. ``centers`` overrides the nearest-index rule.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if centers is None:
        centers = nearest_index(t, grid)
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    rel = (t - grid.coord(centers)) * grid.rate
    rows = centers[:, None] + np.array([-1, 0, 1])[None, :]
    rows = np.where((rows >= 0) & (rows < grid.count), rows, grid.count)
    return rows, rel


def gather_context(latents: LatentSequence, t):
    """``(relative_coord, z_triplet)`` for one query time ``t``."""
    rows, rel = context_indices(latents.grid, t)
    table = np.concatenate([latents.codes, np.zeros((1, latents.codes.shape[1]), latents.codes.dtype)])
    return float(rel[0]), table[rows[0]]


def decoder_inputs(codes, rows, rel):
    """Differentiable assembly of ``[rel, z_{i-1}, z_i, z_{i+1}]`` rows.

    ``codes`` is a ``[N, D]`` tensor; a zero row is appended for padding.
    """
    d = codes.shape[1]
    table = ad.concat([codes, Tensor(np.zeros((1, d), dtype=codes.dtype))], axis=0)
    z = ad.reshape(ad.take_rows(table, rows), (rows.shape[0], 3 * d))
    r = Tensor(rel.astype(codes.dtype)[:, None])
    return ad.concat([r, z], axis=1)


def decode(relative_coord, z_triplet, weights):
    """Amplitude predicted from one relative coordinate and a ``[3, D]`` triplet."""
    z = np.asarray(z_triplet, dtype=np.float32).reshape(-1)
    if not (np.isfinite(relative_coord) and np.all(np.isfinite(z))):
        raise ModelError("decoder inputs must be finite")
    x = Tensor(np.concatenate([[np.float32(relative_coord)], z]).astype(np.float32)[None, :])
    with ad.no_grad():
        return float(decoder_graph(x, weights).data[0])


def batch_codes(inputs, weights):
    """Encode equally long signals together; returns ``[B * L, D]`` code rows."""
    x = Tensor(np.stack([s.samples for s in inputs]).astype(np.float32)[:, None, :])
    h = encoder_graph(x, weights)
    b, d, n = h.shape
    return ad.reshape(ad.transpose(h, (0, 2, 1)), (b * n, d))


def predict_graph(signal, weights, coords, centers=None):
    """Differentiable predictions of ``signal``'s reconstruction at ``coords``."""
    codes = batch_codes([signal], weights)
    rows, rel = context_indices(signal.grid, coords, centers)
    return decoder_graph(decoder_inputs(codes, rows, rel), weights)


def predict(signal: AudioSignal, weights: ModelWeights, coords):
    """Amplitudes at arbitrary ``coords`` (seconds): encode once, decode each."""
    _check_length(len(signal), weights.config)
    with ad.no_grad():
        return predict_graph(signal, weights, coords).data.copy()
