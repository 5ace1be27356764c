"""Reverse-mode differentiation over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them. ``Tensor.backward`` walks
the graph once in reverse topological order, so a tensor used twice receives
the sum of both contributions.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
MAG_FLOOR = 1e-7

# Raise on NaN/Inf after every op when enabled (slow; meant for debugging).
CHECK_FINITE = False

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; ops return plain leaf tensors."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=self.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    # gradients are never updated in place, so arrays can be shared
    if t.grad is None:
        t.grad = np.asarray(g, dtype=t.dtype)
    else:
        t.grad = t.grad + g


def _make(data, parents, backward):
    out = Tensor(data)
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NonFiniteError("non-finite value produced in forward pass")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


def neg(a):
    return _make(-a.data, (a,), lambda g: _accumulate(a, -g))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def relu(a):
    mask = a.data > 0
    return _make(np.maximum(a.data, 0), (a,), lambda g: _accumulate(a, g * mask))


def abs_(a):
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: _accumulate(a, g * sign))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: _accumulate(a, 2 * g * a.data))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: _accumulate(a, g / (2 * out)))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data))


def clamp_min(a, floor):
    """max(a, floor) with zero gradient where the floor is active."""
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor).astype(a.dtype), (a,),
                 lambda g: _accumulate(a, g * mask))


# reductions and shape ----------------------------------------------------------

def sum_(a, axis=None):
    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a, axis=None):
    n = a.size if axis is None else a.shape[axis]
    return sum_(a, axis) * (1.0 / n)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: _accumulate(a, np.transpose(g, inv)))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_(a, key):
    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make(a.data[key], (a,), backward)


def _scatter_rows(rows, idx, shape):
    """Sum ``rows`` into a zero array of ``shape`` at positions ``idx``."""
    out = np.zeros(shape, dtype=rows.dtype)
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def take_rows(a, idx):
    """Gather ``a[idx]`` along axis 0; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        _accumulate(a, _scatter_rows(g.reshape((idx.size,) + a.shape[1:]), idx.ravel(), a.shape))

    return _make(a.data[idx], (a,), backward)


# layers --------------------------------------------------------------------------

def conv1d(x, weight, bias):
    """Stride-1 convolution with symmetric zero padding (output length = input).

    ``x`` is ``[C_in, L]`` or batched ``[B, C_in, L]``; ``weight`` is
    ``[C_out, C_in, K]`` with odd ``K``.
    """
    c_out, c_in, k = weight.shape
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    unbatched = x.data.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or xd.shape[1] != c_in or bias.shape != (c_out,):
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    pad = (k - 1) // 2
    batch, _, length = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    # im2col: [C_in * K, B * L] so the whole layer is one matrix product
    cols = sliding_window_view(xp, length, axis=2)  # [B, C_in, K, L]
    cols = np.ascontiguousarray(cols.transpose(1, 2, 0, 3)).reshape(c_in * k, batch * length)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = w2 @ cols
    out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, batch, length).transpose(1, 0, 2))

    def backward(g):
        g3 = g[None] if unbatched else g
        g2 = np.ascontiguousarray(g3.transpose(1, 0, 2)).reshape(c_out, batch * length)
        if weight.requires_grad:
            _accumulate(weight, (g2 @ cols.T).reshape(c_out, c_in, k))
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=1))
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(c_in, k, batch, length)
            gxp = np.zeros((batch, c_in, length + 2 * pad), dtype=xd.dtype)
            for j in range(k):
                gxp[:, :, j:j + length] += gcols[:, j].transpose(1, 0, 2)
            gx = gxp[:, :, pad:pad + length]
            _accumulate(x, gx[0] if unbatched else gx)

    return _make(out[0] if unbatched else out, (x, weight, bias), backward)


def dense(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape ``[N]`` or ``[M, N]``."""
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    xd = x.data
    out = xd @ weight.data.T + bias.data

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, np.outer(g, xd) if g.ndim == 1 else g.T @ xd)
        if bias.requires_grad:
            _accumulate(bias, g if g.ndim == 1 else g.sum(axis=0))

    return _make(out, (x, weight, bias), backward)


# losses and spectra ----------------------------------------------------------------

def l1_loss(a, b):
    """Mean absolute difference."""
    return mean(abs_(sub(a, b)))


def frobenius_norm(a):
    """sqrt(sum(a**2)); the gradient at an all-zero input is taken as zero."""
    norm = np.sqrt(np.sum(a.data * a.data))
    out = np.asarray(norm, dtype=a.dtype)

    def backward(g):
        if norm > 0:
            _accumulate(a, (g / norm) * a.data)

    return _make(out, (a,), backward)


def frame(x, size, hop):
    """Cut a 1-D tensor into overlapping frames ``[n_frames, size]`` (no padding)."""
    n = x.shape[0]
    if n < size:
        raise ValueError(f"signal of length {n} is shorter than frame size {size}")
    n_frames = 1 + (n - size) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(size)[None, :]
    return take_rows(x, idx)


_DFT_CACHE = {}


def _dft_basis(n, dtype):
    key = (n, np.dtype(dtype).str)
    if key not in _DFT_CACHE:
        k = np.arange(n // 2 + 1)
        ang = 2.0 * np.pi * np.outer(np.arange(n), k) / n
        _DFT_CACHE[key] = (np.cos(ang).astype(dtype), (-np.sin(ang)).astype(dtype))
    return _DFT_CACHE[key]


def dft_magnitude(frames, method="fft"):
    """One-sided |DFT| of each row ``[F, N] -> [F, N // 2 + 1]``.

    ``method="matrix"`` multiplies by dense cosine/sine bases; ``"fft"``
    computes the same quantities with real FFTs. Magnitudes are floored at
    ``MAG_FLOOR``; the floor carries no gradient.
    """
    if frames.size == 0:
        raise ValueError("dft_magnitude of empty frames")
    fd = frames.data
    n = fd.shape[-1]
    if method == "matrix":
        cos_m, sin_m = _dft_basis(n, fd.dtype)
        re = fd @ cos_m
        im = fd @ sin_m
    elif method == "fft":
        spec = np.fft.rfft(fd.astype(np.float64), axis=-1)
        re = spec.real.astype(fd.dtype)
        im = spec.imag.astype(fd.dtype)
    else:
        raise ValueError(f"unknown DFT method {method!r}")
    power = re * re + im * im
    live = power > MAG_FLOOR * MAG_FLOOR
    mag = np.where(live, np.sqrt(np.where(live, power, 1.0)), MAG_FLOOR).astype(fd.dtype)

    def backward(g):
        scale = np.where(live, g / mag, 0).astype(fd.dtype)
        if method == "matrix":
            _accumulate(frames, (scale * re) @ cos_m.T + (scale * im) @ sin_m.T)
            return
        # sum_k Re(c_k exp(+2 pi i n k / N)) over the one-sided bins, via irfft
        c = (scale * re).astype(np.float64) + 1j * (scale * im).astype(np.float64)
        c[..., 1:(n + 1) // 2] *= 0.5
        _accumulate(frames, (n * np.fft.irfft(c, n=n, axis=-1)).astype(fd.dtype))

    return _make(mag, (frames,), backward)
