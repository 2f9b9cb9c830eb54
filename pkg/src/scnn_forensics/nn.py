"""Minimal numeric kernels with exact backpropagation.

Activations are ``(h, w, c)`` or batched ``(b, h, w, c)`` float32 arrays.
Filter banks are ``(cout, kh, kw, cin)``; dense weights are ``(n, m)``.

Every kernel accepts an optional :class:`Tape`. When given, the kernel
records what it needs for the backward pass, and :func:`backward` walks the
records in reverse to produce per-parameter gradients.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError, StateError

DTYPE = np.float32
BCE_EPS = 1e-7

LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=DTYPE)


class MacCounter:
    """Tallies multiply-accumulate operations performed by the kernels."""

    def __init__(self):
        self.conv = 0
        self.dense = 0

    @property
    def total(self):
        return self.conv + self.dense

    def __repr__(self):
        return f"MacCounter(conv={self.conv}, dense={self.dense})"


class Tape:
    """Ordered record of a forward pass through a sequential network."""

    def __init__(self):
        self.records = []

    def push(self, kind, **cache):
        self.records.append((kind, cache))

    def __len__(self):
        return len(self.records)


def _batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def im2col(x, kh=3, kw=3):
    """Patch matrix of a batched image, columns ordered (di, dj, channel)."""
    b, h, w, c = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"input {h}x{w} smaller than {kh}x{kw} kernel")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # b, ho, wo, c, kh, kw
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        b, h - kh + 1, w - kw + 1, kh * kw * c
    )


def conv2d_valid(x, filters, bias, tape=None, name=None, counter=None):
    """Stride-1 valid convolution (cross-correlation, no kernel flip)."""
    filters = np.asarray(filters)
    if filters.ndim != 4:
        raise ShapeError(f"filters must be rank 4, got shape {filters.shape}")
    cout, kh, kw, cin = filters.shape
    xb, single = _batched(x, 3)
    if xb.shape[-1] != cin:
        raise ShapeError(
            f"input has {xb.shape[-1]} channels but filters expect {cin}"
        )
    if np.shape(bias) != (cout,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {cout} filters")
    cols = im2col(xb, kh, kw)
    b, ho, wo, k = cols.shape
    out = cols.reshape(-1, k) @ filters.reshape(cout, k).T
    out += bias
    out = out.reshape(b, ho, wo, cout)
    if counter is not None:
        counter.conv += b * ho * wo * cout * k
    if tape is not None:
        tape.push("conv", name=name, cols=cols, filters=filters, in_shape=xb.shape,
                  single=single)
    return out[0] if single else out


def _conv_backward(grad, cache):
    cols, filters = cache["cols"], cache["filters"]
    cout, kh, kw, cin = filters.shape
    b, ho, wo, k = cols.shape
    g = grad.reshape(-1, cout)
    dw = (g.T @ cols.reshape(-1, k)).reshape(filters.shape)
    db = g.sum(axis=0)
    dcols = (g @ filters.reshape(cout, k)).reshape(b, ho, wo, kh, kw, cin)
    dx = np.zeros(cache["in_shape"], dtype=grad.dtype)
    for di in range(kh):
        for dj in range(kw):
            dx[:, di:di + ho, dj:dj + wo, :] += dcols[:, :, :, di, dj, :]
    return dx, {"filters": dw, "bias": db}


def dense(x, weights, bias, tape=None, name=None, counter=None):
    """Fully-connected layer: ``x @ weights + bias``."""
    weights = np.asarray(weights)
    xb, single = _batched(x, 1)
    if weights.ndim != 2 or xb.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"input length {xb.shape[1]} does not match weights {weights.shape}"
        )
    if np.shape(bias) != (weights.shape[1],):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match weights {weights.shape}")
    out = xb @ weights + bias
    if counter is not None:
        counter.dense += xb.shape[0] * weights.size
    if tape is not None:
        tape.push("dense", name=name, x=xb, weights=weights, single=single)
    return out[0] if single else out


def _dense_backward(grad, cache):
    x, w = cache["x"], cache["weights"]
    return grad @ w.T, {"weights": x.T @ grad, "bias": grad.sum(axis=0)}


def relu(x, tape=None):
    x = np.asarray(x)
    if tape is not None:
        tape.push("relu", mask=x > 0)
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def sigmoid(x, tape=None):
    x = np.asarray(x)
    # two-branch form keeps exp() from overflowing at either tail
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    if tape is not None:
        tape.push("sigmoid", out=out)
    return out


def dropout(x, rate, mode, rng=None, tape=None):
    """Inverted dropout; identity in ``"infer"`` mode."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x)
    if mode == "infer" or rate == 0.0:
        if tape is not None:
            tape.push("identity")
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    factor = keep * scale
    if tape is not None:
        tape.push("dropout", factor=factor)
    return (x * factor).astype(x.dtype, copy=False)


def flatten(x, tape=None):
    """Row-major (height, width, channel) flatten of a batch of activations."""
    x = np.asarray(x)
    if tape is not None:
        tape.push("reshape", shape=x.shape)
    return x.reshape(x.shape[0], -1)


def bce_loss(prediction, label):
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce_grad(prediction, label):
    """d(bce_loss)/d(prediction) with the same clamping as the loss."""
    p = np.clip(np.asarray(prediction), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(label, dtype=p.dtype)
    return (-(y / p) + (1 - y) / (1 - p)).astype(p.dtype, copy=False)


def backward(tape, grad):
    """Propagate ``grad`` (d loss / d network output) back through ``tape``.

    Returns ``{"<layer>.<param>": gradient}`` for every parameterised layer
    recorded on the tape. The tape is consumed.
    """
    if tape is None or not len(tape):
        raise StateError("backward called without a recorded forward pass")
    grads = {}
    g = np.asarray(grad)
    for kind, cache in reversed(tape.records):
        if kind == "conv":
            if cache["single"] and g.ndim == 3:
                g = g[None]
            g, pg = _conv_backward(g, cache)
            if cache["single"]:
                g = g[0]
        elif kind == "dense":
            if cache["single"] and g.ndim == 1:
                g = g[None]
            g, pg = _dense_backward(g, cache)
            if cache["single"]:
                g = g[0]
        else:
            pg = None
            if kind == "relu":
                g = g * cache["mask"]
            elif kind == "sigmoid":
                out = cache["out"]
                g = g * out * (1 - out)
            elif kind == "dropout":
                g = g * cache["factor"]
            elif kind == "reshape":
                g = g.reshape(cache["shape"])
        if pg is not None and cache["name"] is not None:
            for key, value in pg.items():
                grads[f"{cache['name']}.{key}"] = value
    tape.records.clear()
    return grads
