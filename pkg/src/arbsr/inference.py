"""Offline and streaming super-resolution at arbitrary output rates.

Offline ``upsample`` and :class:`StreamSession` share the fixed-order kernels
below: every output element is accumulated term by term in the same order no
matter how many positions are computed together, so a stream fed in any chunk
pattern reproduces the offline result bit for bit.
"""

from __future__ import annotations

import numpy as np

from .audio_io import AudioError, AudioSignal, CoordinateGrid
from .baselines import output_coords, output_count
from .model import ModelError, ModelWeights, context_indices, predict


class StreamClosedError(RuntimeError):
    pass


def _conv_positions(xp, weight, bias, start, count):
    """Conv outputs for ``count`` positions; position ``p`` reads ``xp[:, start + p : start + p + K]``."""
    c_out, c_in, k = weight.shape
    acc = np.zeros((c_out, count), dtype=np.float32)
    for ci in range(c_in):
        for kk in range(k):
            acc += weight[:, ci, kk, None] * xp[None, ci, start + kk:start + kk + count]
    acc += bias[:, None]
    return acc


def _mlp_rows(inputs, layers):
    """Decoder on ``[M, F]`` float32 rows -> ``[M]``, rows independent of each other."""
    h = np.ascontiguousarray(inputs.T)  # [F, M]
    for n, (w, b) in enumerate(layers):
        acc = np.zeros((w.shape[0], h.shape[1]), dtype=np.float32)
        for j in range(w.shape[1]):
            acc += w[:, j, None] * h[None, j]
        acc += b[:, None]
        h = np.maximum(acc, 0) if n < len(layers) - 1 else acc
    return h[0]


def _arrays(weights):
    enc = [(w.data, b.data) for w, b in weights.encoder_layers()]
    dec = [(w.data, b.data) for w, b in weights.decoder_layers()]
    return enc, dec


def _decode_coords(codes, grid, coords, centers, dec):
    """Assemble ``[rel, z_{c-1}, z_c, z_{c+1}]`` rows from a code table and decode."""
    if len(coords) == 0:
        return np.zeros(0, dtype=np.float32)
    rows, rel = context_indices(grid, coords, centers)
    table = np.concatenate([codes, np.zeros((1, codes.shape[1]), dtype=np.float32)])
    z = table[rows].reshape(len(coords), -1)
    return _mlp_rows(np.concatenate([rel.astype(np.float32)[:, None], z], axis=1), dec)


def _centers(coords, rate):
    # unclamped nearest index; same tie rule as audio_io.nearest_index
    from .audio_io import _TIE_TOL
    return np.ceil(coords * rate - 0.5 - _TIE_TOL).astype(np.int64)


def encode_exact(signal: AudioSignal, weights: ModelWeights):
    """Latent codes ``[N, D]`` computed with the fixed-order kernels."""
    n = len(signal)
    need = 2 * weights.config.receptive_half_width + 1
    if n < need:
        raise ModelError(f"signal too short: {n} samples, need at least {need}")
    enc, _ = _arrays(weights)
    h = signal.samples.astype(np.float32)[None, :]
    for idx, (w, b) in enumerate(enc):
        pad = (w.shape[2] - 1) // 2
        xp = np.pad(h, ((0, 0), (pad, pad)))
        h = _conv_positions(xp, w, b, 0, n)
        if idx < len(enc) - 1:
            h = np.maximum(h, 0)
    return np.ascontiguousarray(h.T)


def upsample(signal: AudioSignal, weights: ModelWeights, rate, exact=True) -> AudioSignal:
    """Predict ``signal`` on the grid ``m / rate`` for ``m < floor(duration * rate)``.

    ``exact=True`` uses the chunk-invariant kernels (what streaming matches);
    ``exact=False`` uses the faster BLAS path of :func:`arbsr.model.predict`,
    equal up to float32 rounding.
    """
    if len(signal) == 0:
        raise AudioError("cannot upsample empty input")
    if not rate > 0:
        raise AudioError(f"output rate must be positive, got {rate}")
    coords = output_coords(signal, rate)
    if not exact:
        return AudioSignal(predict(signal, weights, coords).astype(np.float64), rate)
    codes = encode_exact(signal, weights)
    grid = signal.grid
    centers = np.clip(_centers(coords, grid.rate), 0, grid.count - 1)
    _, dec = _arrays(weights)
    y = _decode_coords(codes, grid, coords, centers, dec)
    return AudioSignal(y.astype(np.float64), rate)


class StreamSession:
    """Chunked super-resolution with a lookahead of ``k + 1`` input samples.

    The prediction at ``t`` needs the codes around its nearest input sample
    ``i(t)`` up to ``z_{i(t)+1}``, whose receptive field ends at input sample
    ``i(t) + 1 + k``; it is emitted in the same push that delivers that sample.
    Each encoder layer keeps a short buffer of its recent inputs, so every new
    sample costs one column per layer.
    """

    def __init__(self, weights: ModelWeights, r_in, r_out):
        if not (r_in > 0 and r_out > 0):
            raise AudioError("stream rates must be positive")
        self.weights = weights
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        self.k = weights.config.receptive_half_width
        self._enc, self._dec = _arrays(weights)
        self._pads = [(w.shape[2] - 1) // 2 for w, _ in self._enc]
        # per layer: buffered inputs [C_in, n] covering absolute positions base.. ;
        # left zero padding is pre-filled
        self._buf = [np.zeros((w.shape[1], p), dtype=np.float32) for (w, _), p in zip(self._enc, self._pads)]
        self._base = [-p for p in self._pads]
        self._done = [0] * len(self._enc)  # outputs computed per layer
        self._codes = np.zeros((0, self._enc[-1][0].shape[0]), dtype=np.float32)
        self._codes_base = 0
        self.pushed = 0
        self.emitted = 0
        self.closed = False

    @property
    def lookahead(self):
        return self.k + 1

    def push(self, samples):
        """Feed input samples; returns every output sample that became ready."""
        if self.closed:
            raise StreamClosedError("push after close")
        x = np.asarray(samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise AudioError("samples contain NaN or Inf")
        if x.size:
            self.pushed += x.size
            self._feed(0, x.astype(np.float32)[None, :])
        return self._emit(final=False)

    def close(self):
        """Flush the tail with the same zero padding offline encoding uses."""
        if self.closed:
            raise StreamClosedError("stream already closed")
        need = 2 * self.k + 1
        if self.pushed < need:
            raise ModelError(f"signal too short: {self.pushed} samples, need at least {need}")
        self.closed = True
        for layer, p in enumerate(self._pads):
            self._append(layer, np.zeros((self._buf[layer].shape[0], p), dtype=np.float32))
            self._run_layer(layer, limit=self.pushed)
        return self._emit(final=True)

    def _append(self, layer, cols):
        self._buf[layer] = np.concatenate([self._buf[layer], cols], axis=1)

    def _feed(self, layer, cols):
        self._append(layer, cols)
        self._run_layer(layer, limit=None)

    def _run_layer(self, layer, limit):
        w, b = self._enc[layer]
        p = self._pads[layer]
        buf, base = self._buf[layer], self._base[layer]
        end = base + buf.shape[1] - p  # first position lacking its right context
        if limit is not None:
            end = min(end, limit)
        start = self._done[layer]
        if end <= start:
            return
        out = _conv_positions(buf, w, b, start - p - base, end - start)
        self._done[layer] = end
        # keep only the columns later positions still read
        keep_from = end - p - base
        self._buf[layer] = buf[:, keep_from:]
        self._base[layer] = base + keep_from
        if layer < len(self._enc) - 1:
            out = np.maximum(out, 0)
            self._append(layer + 1, out)
            self._run_layer(layer + 1, limit)
        else:
            self._codes = np.concatenate([self._codes, out.T])

    def _emit(self, final):
        n_codes = self._codes_base + self._codes.shape[0]
        if final:
            count = output_count(AudioSignal(np.zeros(self.pushed), self.r_in), self.r_out)
            stop = count
        else:
            # largest m whose centre c satisfies c + 1 < n_codes
            stop = self.emitted
            c_max = n_codes - 2
            if c_max >= 0:
                stop = max(stop, int(np.floor((c_max + 0.5) * self.r_out / self.r_in)) + 2)
                while stop > self.emitted and _centers(np.array([(stop - 1) / self.r_out]), self.r_in)[0] > c_max:
                    stop -= 1
        if stop <= self.emitted:
            return np.zeros(0)
        coords = np.arange(self.emitted, stop) / self.r_out
        total = self.pushed if final else n_codes
        centers = _centers(coords, self.r_in)
        if final:
            centers = np.clip(centers, 0, total - 1)
        lo = max(int(centers[0]) - 1, 0)
        table = self._codes[lo - self._codes_base:]
        grid = CoordinateGrid(self.r_in, 0.0, total)
        rows, rel = context_indices(grid, coords, centers)
        rows = np.where(rows == total, -1, rows - lo)
        z_table = np.concatenate([table, np.zeros((1, table.shape[1]), dtype=np.float32)])
        z = z_table[rows].reshape(len(coords), -1)
        y = _mlp_rows(np.concatenate([rel.astype(np.float32)[:, None], z], axis=1), self._dec)
        self.emitted = stop
        # codes before the next centre's left neighbour are no longer needed
        next_c = int(_centers(np.array([stop / self.r_out]), self.r_in)[0])
        drop = max(min(next_c - 1, n_codes) - self._codes_base, 0)
        if drop:
            self._codes = self._codes[drop:]
            self._codes_base += drop
        return y.astype(np.float64)


def stream_upsample(signal: AudioSignal, weights: ModelWeights, rate, chunk):
    """Run ``signal`` through a :class:`StreamSession` in chunks of ``chunk`` samples."""
    session = StreamSession(weights, signal.rate, rate)
    parts = [session.push(signal.samples[s:s + chunk]) for s in range(0, len(signal), chunk)]
    parts.append(session.close())
    return AudioSignal(np.concatenate(parts), rate)
