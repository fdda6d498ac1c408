"""Forward primitives with their exact backward rules.

Every primitive takes and returns :class:`Tensor` values. A node is recorded
only when at least one input requires a gradient.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Node, Tensor


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(arr: np.ndarray, op: str, inputs: tuple, backward) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor.wrap(arr, Node(op, inputs, backward))
    return Tensor.wrap(arr)


# ---------------------------------------------------------------------------
# elementwise and structural


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record(out, "add", (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record(out, "sub", (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return record(a.data * c, "scale", (a,), lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return record(out, "mul", (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return record(np.asarray(x.data.sum()), "sum", (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return record(np.asarray(x.data.mean()), "mean", (x,), lambda g: (np.full(shape, float(g) / n),))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    return record(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def index(x: Tensor, key) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        if _is_fancy(key):
            np.add.at(full, key, g)
        else:
            full[key] = g
        return (full,)

    return record(np.array(x.data[key]), "index", (x,), backward)


def _is_fancy(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def stack(xs: Sequence[Tensor]) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    return record(np.stack([x.data for x in xs]), "stack", xs, lambda g: tuple(g))


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate flattened tensors into one vector."""
    xs = tuple(as_tensor(x) for x in xs)
    sizes = [x.size for x in xs]
    shapes = [x.shape for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]].reshape(shapes[i]) for i in range(len(xs)))

    return record(np.concatenate([x.data.reshape(-1) for x in xs]), "concat", xs, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector ``x``."""
    if x.ndim != 1 or weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ValueError(f"linear: weight {weight.shape} does not match input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} does not match output dim {weight.shape[0]}")
    out = weight.data @ x.data + bias.data

    def backward(g):
        gx = weight.data.T @ g if x.requires_grad else None
        gw = np.outer(g, x.data) if weight.requires_grad else None
        return gx, gw, g

    return record(out, "linear", (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope)
    return record(x.data * factor, "leaky_relu", (x,), lambda g: (g * factor,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return record(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation over ``[C,H,W]`` or batched ``[N,C,H,W]`` input."""
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d: input must be [C,H,W] or [N,C,H,W], got shape {x.shape}")
    if kernel.ndim != 4:
        raise ValueError(f"conv2d: kernel must be [K,C,kh,kw], got shape {kernel.shape}")
    k, c, kh, kw = kernel.shape
    in_c = x.shape[-3]
    if in_c != c:
        raise ValueError(f"conv2d: channel dimension mismatch, input has {in_c}, kernel expects {c}")
    if bias.shape != (k,):
        raise ValueError(f"conv2d: bias dimension mismatch, expected ({k},), got {bias.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel height/width must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")

    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, _, h, w = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw} with pad {pad}")
    # windows: [N, C, Ho, Wo, kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, k).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        gflat = gb.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
        gbias = gflat.sum(axis=0)
        gkernel = (gflat.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            # col2im in channels-last layout, one strided add per kernel tap
            dcols = (gflat @ wmat).reshape(n, ho, wo, c, kh * kw)
            taps = np.ascontiguousarray(dcols.transpose(4, 0, 1, 2, 3))
            dxp = np.zeros((n, xp.shape[2], xp.shape[3], c))
            for t in range(kh * kw):
                i, j = divmod(t, kw)
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += taps[t]
            dxp = dxp.transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp)
            if not batched:
                gx = gx[0]
        return gx, gkernel, gbias

    return record(out, "conv2d", (x, kernel, bias), backward)


# ---------------------------------------------------------------------------
# resampling


@lru_cache(maxsize=256)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``[n_out, n_in]`` interpolation matrix, half-pixel centres.

    Output sample ``i`` reads input coordinate ``(i + 0.5) * n_in / n_out - 0.5``,
    clamped to the valid range.
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    m.setflags(write=False)
    return m


def resize_bilinear_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-array bilinear resize of the last two axes (up or down)."""
    ah = bilinear_matrix(x.shape[-2], out_h)
    aw = bilinear_matrix(x.shape[-1], out_w)
    return ah @ x @ aw.T


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsampling of the trailing ``[h, w]`` axes."""
    h, w = x.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"upsample_bilinear: target {out_h}x{out_w} smaller than input {h}x{w}")
    ah = bilinear_matrix(h, out_h)
    aw = bilinear_matrix(w, out_w)
    out = ah @ x.data @ aw.T
    return record(out, "upsample_bilinear", (x,), lambda g: (ah.T @ g @ aw,))
