"""Minimal dense-tensor kernel set with reverse-mode differentiation.

Tensors wrap contiguous float64 numpy arrays. Every op records its parents
and a backward closure; ``Tensor.backward`` replays the tape in reverse
topological order. Single-threaded per graph; tensors without grad state are
safe to share read-only.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NumericError(ValueError):
    """A tensor received or produced non-finite values."""


def _as_array(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values in tensor data")
    return arr


class Tensor:
    """Dense N-d array with an optional gradient buffer.

    Attributes:
        data: contiguous float64 array, row-major.
        grad: accumulated gradient of the same shape, or None.
        requires_grad: whether backward should populate ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None):
        """Reverse pass from this tensor.

        If ``seed`` is None the tensor must be scalar and the seed is 1.
        Gradients accumulate additively across fan-out; call ``zero_grad``
        on parameters between steps.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar loss")
            seed = np.ones_like(self.data)
        else:
            seed = _as_array(seed)
            if seed.shape != self.shape:
                raise ValueError("seed gradient shape mismatch")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward):
    if _needs_grad(*parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def bw(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def bw(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so neither tail overflows exp.
    pos = a.data >= 0
    s = np.empty_like(a.data)
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    s[~pos] = e / (1.0 + e)

    def bw(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), bw)


def tsum(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(np.full_like(a.data, float(g.sum())))

    return _make(np.array(a.data.sum()), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        a._accumulate(np.full_like(a.data, float(g.sum()) / n))

    return _make(np.array(a.data.mean()), (a,), bw)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x[n,d_in] @ w[d_in,d_out] + b[d_out] broadcast over rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ValueError("linear expects x[n,d_in], w[d_in,d_out], b[d_out]")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape}, {w.shape}, {b.shape}")

    def bw(g):
        x._accumulate(g @ w.data.T)
        w._accumulate(x.data.T @ g)
        b._accumulate(g.sum(axis=0))

    return _make(x.data @ w.data + b.data, (x, w, b), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape).copy(), (a,), bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        a._accumulate(full)

    return _make(a.data[:, lo:hi].copy(), (a,), bw)


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]
    offs = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw)


def gather(a: Tensor, idx: np.ndarray, out_shape) -> Tensor:
    """out.flat[i] = a.flat[idx[i]] for a permutation idx; exact inverse exists."""
    out_shape = tuple(out_shape)

    def bw(g):
        full = np.zeros(a.data.size)
        np.add.at(full, idx, g.ravel())
        a._accumulate(full.reshape(a.shape))

    return _make(a.data.ravel()[idx].reshape(out_shape), (a,), bw)


# ---------------------------------------------------------------------------
# Row-wise normalizers


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        a._accumulate((g - dot) * s)

    return _make(s, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if x.data.ndim != 2:
        raise ValueError("layer_norm expects a 2-d input")
    d = x.shape[1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ValueError("layer_norm gain/shift must have shape (d,)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bw(g):
        gxh = g * gain.data
        x._accumulate(inv * (gxh - gxh.mean(axis=1, keepdims=True)
                             - xhat * (gxh * xhat).mean(axis=1, keepdims=True)))
        gain._accumulate((g * xhat).sum(axis=0))
        shift._accumulate(g.sum(axis=0))

    return _make(xhat * gain.data + shift.data, (x, gain, shift), bw)


# ---------------------------------------------------------------------------
# Spatial ops on [C, H, W] maps


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation of x[C_in,H,W] with w[C_out,C_in,kh,kw]."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError("conv2d expects x[C,H,W] and w[C_out,C_in,kh,kw]")
    c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d channel mismatch: {c_in} vs {c_in_w}")
    if kh < 1 or kw < 1:
        raise ValueError("conv2d kernel sides must be positive")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (wd + 2 * pad - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(w.data, windows, axes=([1, 2, 3], [0, 3, 4]))

    def bw(g):
        w._accumulate(np.tensordot(g, windows, axes=([1, 2], [1, 2])))
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, u:u + stride * h_out:stride, v:v + stride * w_out:stride] += \
                    np.tensordot(w.data[:, :, u, v], g, axes=([0], [0]))
        x._accumulate(dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp)

    return _make(out, (x, w), bw)


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias b[C] to every spatial position of x[C,H,W]."""
    if x.data.ndim != 3 or b.data.ndim != 1 or x.shape[0] != b.shape[0]:
        raise ValueError("channel_bias expects x[C,H,W] and b[C]")

    def bw(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=(1, 2)))

    return _make(x.data + b.data[:, None, None], (x, b), bw)


def concat_channels(parts: list[Tensor]) -> Tensor:
    hw = parts[0].shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.shape[1:] != hw:
            raise ValueError("concat_channels: spatial size mismatch")
    chans = [p.shape[0] for p in parts]
    offs = np.cumsum([0] + chans)

    def bw(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            p._accumulate(g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Ties go to the first window index (row-major)."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("max_pool2d requires even spatial sides")
    win = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4) \
        .reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        x._accumulate(dwin.reshape(c, h // 2, w // 2, 2, 2)
                      .transpose(0, 1, 3, 2, 4).reshape(c, h, w))

    return _make(out, (x,), bw)


def _bilinear_matrix(n_in: int) -> np.ndarray:
    """Row-interpolation matrix doubling a length, half-pixel-center sampling."""
    n_out = 2 * n_in
    src = np.clip((np.arange(n_out) + 0.5) / 2.0 - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i1] += frac
    return m


def bilinear_upsample(x: Tensor) -> Tensor:
    """Double both spatial sides; pixel centers at half-pixel offsets."""
    c, h, w = x.shape
    mh = _bilinear_matrix(h)
    mw = _bilinear_matrix(w)
    out = np.einsum("oh,chw,pw->cop", mh, x.data, mw, optimize=True)

    def bw(g):
        x._accumulate(np.einsum("oh,cop,pw->chw", mh, g, mw, optimize=True))

    return _make(out, (x,), bw)


def _avg_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Averaging matrix for adaptive pooling, bin [floor(i*n/o), ceil((i+1)*n/o))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-(i + 1) * n_in // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    c, h, w = x.shape
    if out_h < 1 or out_w < 1 or out_h > h or out_w > w:
        raise ValueError("adaptive_avg_pool target outside [1, input size]")
    mh = _avg_pool_matrix(h, out_h)
    mw = _avg_pool_matrix(w, out_w)
    out = np.einsum("oh,chw,pw->cop", mh, x.data, mw, optimize=True)

    def bw(g):
        x._accumulate(np.einsum("oh,cop,pw->chw", mh, g, mw, optimize=True))

    return _make(out, (x,), bw)
