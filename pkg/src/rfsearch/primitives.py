"""Forward/backward definitions of the tape primitives.

All primitives take the active Tape as their first argument, compute the
forward value with float64 accumulation inside reductions, cast the result
back to the input dtype, and record a backward closure on the tape.

Shape conventions: activations are (N, C, H, W); conv weights are
(Cout, Cin, kh, kw); fully-connected weights are (Out, In, 1, 1); channel
descriptors and gates are (N, C, 1, 1).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import EvenKernel, ShapeMismatch
from .tensor import Tape, Tensor

_ACC = np.float64  # accumulation dtype inside reductions


def _out(tape: Tape, kind: str, inputs, data, backward_fn) -> Tensor:
    return tape.record(kind, inputs, Tensor(data), backward_fn)


def _check_odd(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise EvenKernel(f"pooling kernel must be odd and positive, got {k}")


# ---------------------------------------------------------------------------
# elementwise / affine


def relu(tape: Tape, x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _out(tape, "relu", (x,), np.where(mask, x.data, 0), bwd)


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    s = expit(x.data)

    def bwd(g):
        return (g * s * (1 - s),)

    return _out(tape, "sigmoid", (x,), s.astype(x.dtype), bwd)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add with restricted broadcasting (each dim equal or 1)."""
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    out = a.data + b.data

    def reduce_to(g, shape):
        axes = tuple(i for i, (go, si) in enumerate(zip(g.shape, shape)) if si == 1 and go != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True, dtype=_ACC)
        return g

    def bwd(g):
        return reduce_to(g, a.shape), reduce_to(g, b.shape)

    return _out(tape, "add", (a, b), out, bwd)


def scale(tape: Tape, x: Tensor, s, element: tuple = (0, 0, 0, 0)) -> Tensor:
    """Scale a tensor by a python float or by one element of a tensor.

    When `s` is a Tensor, the scalar is read at `element` and the gradient
    is routed back to that position only.
    """
    if isinstance(s, Tensor):
        v = float(s.data[element])
        out = x.data * np.asarray(v, dtype=x.dtype)

        def bwd(g):
            gs = np.zeros_like(s.data)
            gs[element] = np.sum(g * x.data, dtype=_ACC)
            return g * np.asarray(v, dtype=x.dtype), gs

        return _out(tape, "scale", (x, s), out, bwd)

    c = float(s)

    def bwd_const(g):
        return (g * np.asarray(c, dtype=x.dtype),)

    return _out(tape, "scale", (x,), x.data * np.asarray(c, dtype=x.dtype), bwd_const)


def channel_mul(tape: Tape, x: Tensor, s: Tensor) -> Tensor:
    """Multiply each (n, c) plane of x by the per-(n, c) scalar in s."""
    N, C, _, _ = x.shape
    if s.shape != (N, C, 1, 1):
        raise ShapeMismatch(f"gate shape {s.shape} must be {(N, C, 1, 1)}")
    out = x.data * s.data

    def bwd(g):
        gx = g * s.data
        gs = np.sum(g * x.data, axis=(2, 3), keepdims=True, dtype=_ACC)
        return gx, gs

    return _out(tape, "channel_mul", (x, s), out, bwd)


def fc(tape: Tape, x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map on channel vectors: (N,Cin,1,1) x (Cout,Cin,1,1) -> (N,Cout,1,1)."""
    N, Cin, H, W = x.shape
    Cout, Cin_w, _, _ = w.shape
    if (H, W) != (1, 1) or Cin_w != Cin:
        raise ShapeMismatch(f"fc expects (N,{Cin_w},1,1) input, got {x.shape}")
    xm = x.data.reshape(N, Cin).astype(_ACC)
    wm = w.data.reshape(Cout, Cin).astype(_ACC)
    out = xm @ wm.T
    if b is not None:
        if b.shape != (1, Cout, 1, 1):
            raise ShapeMismatch(f"fc bias shape {b.shape} must be {(1, Cout, 1, 1)}")
        out = out + b.data.reshape(1, Cout)
    out = out.astype(x.dtype).reshape(N, Cout, 1, 1)

    def bwd(g):
        gm = g.reshape(N, Cout).astype(_ACC)
        gx = (gm @ wm).reshape(N, Cin, 1, 1)
        gw = (gm.T @ xm).reshape(Cout, Cin, 1, 1)
        grads = [gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=0).reshape(1, Cout, 1, 1))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _out(tape, "fc", inputs, out, bwd)


# ---------------------------------------------------------------------------
# convolution


def conv2d(tape: Tape, x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """2-D convolution with zero "same" padding, stride 1 or 2, kernel 1x1 or 3x3."""
    N, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin_w != Cin:
        raise ShapeMismatch(f"conv weight expects {Cin_w} input channels, got {Cin}")
    if kh != kw or kh not in (1, 3):
        raise ShapeMismatch(f"conv kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"conv stride must be 1 or 2, got {stride}")
    p = (kh - 1) // 2
    Ho = (H + 2 * p - kh) // stride + 1
    Wo = (W + 2 * p - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, Ho*Wo, Cin*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N, Ho * Wo, Cin * kh * kw).astype(_ACC)
    wm = w.data.reshape(Cout, Cin * kh * kw).astype(_ACC)
    out = (cols @ wm.T).transpose(0, 2, 1).reshape(N, Cout, Ho, Wo)
    if b is not None:
        if b.shape != (1, Cout, 1, 1):
            raise ShapeMismatch(f"conv bias shape {b.shape} must be {(1, Cout, 1, 1)}")
        out = out + b.data
    out = out.astype(x.dtype)

    def bwd(g):
        gm = g.reshape(N, Cout, Ho * Wo).transpose(0, 2, 1).astype(_ACC)  # (N, HoWo, Cout)
        gw = np.einsum("npo,npk->ok", gm, cols).reshape(Cout, Cin, kh, kw)
        gcols = gm @ wm  # (N, HoWo, Cin*kh*kw)
        g6 = gcols.reshape(N, Ho, Wo, Cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((N, Cin, H + 2 * p, W + 2 * p), dtype=_ACC)
        for a in range(kh):
            for c in range(kw):
                gxp[:, :, a : a + stride * Ho : stride, c : c + stride * Wo : stride] += g6[:, :, a, c]
        gx = gxp[:, :, p : p + H, p : p + W]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3), keepdims=False, dtype=_ACC).reshape(1, Cout, 1, 1))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _out(tape, "conv2d", inputs, out, bwd)


# ---------------------------------------------------------------------------
# pooling and means


def max_pool_same(tape: Tape, x: Tensor, k: int) -> Tensor:
    """Same-size stride-1 max pooling with -inf padding.

    Ties inside a window route the gradient to the first maximal element in
    row-major window order.
    """
    _check_odd(k)
    N, C, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    win = sliding_window_view(xp, (k, k), axis=(2, 3)).reshape(N, C, H, W, k * k)
    idx = win.argmax(axis=-1)  # first max in row-major order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=_ACC)
        ii = np.arange(H)[None, None, :, None] + idx // k
        jj = np.arange(W)[None, None, None, :] + idx % k
        nn = np.arange(N)[:, None, None, None]
        cc = np.arange(C)[None, :, None, None]
        np.add.at(gp, (nn, cc, ii, jj), g)
        return (gp[:, :, p : p + H, p : p + W],)

    return _out(tape, "max_pool", (x,), out.astype(x.dtype), bwd)


def _pool_counts(H: int, W: int, k: int) -> np.ndarray:
    p = (k - 1) // 2
    rows = np.minimum(np.arange(H) + p, H - 1) - np.maximum(np.arange(H) - p, 0) + 1
    cols = np.minimum(np.arange(W) + p, W - 1) - np.maximum(np.arange(W) - p, 0) + 1
    return np.outer(rows, cols).astype(_ACC)


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sum over centered k x k windows with zero padding, float64."""
    p = (k - 1) // 2
    ap = np.pad(a.astype(_ACC), ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(ap, (k, k), axis=(2, 3))
    return win.sum(axis=(-1, -2))


def avg_pool_same(tape: Tape, x: Tensor, k: int) -> Tensor:
    """Same-size stride-1 average pooling dividing by the non-padded count."""
    _check_odd(k)
    N, C, H, W = x.shape
    counts = _pool_counts(H, W, k)
    out = _box_sum(x.data, k) / counts

    def bwd(g):
        return (_box_sum(g.astype(_ACC) / counts, k),)

    return _out(tape, "avg_pool", (x,), out.astype(x.dtype), bwd)


def global_avg_pool(tape: Tape, x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=_ACC)

    def bwd(g):
        return (np.broadcast_to(g / (H * W), x.shape),)

    return _out(tape, "global_avg_pool", (x,), out.astype(x.dtype), bwd)


def row_mean(tape: Tape, x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C,H,1), mean over each row."""
    W = x.shape[3]
    out = x.data.mean(axis=3, keepdims=True, dtype=_ACC)

    def bwd(g):
        return (np.broadcast_to(g / W, x.shape),)

    return _out(tape, "row_mean", (x,), out.astype(x.dtype), bwd)


def col_mean(tape: Tape, x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C,1,W), mean over each column."""
    H = x.shape[2]
    out = x.data.mean(axis=2, keepdims=True, dtype=_ACC)

    def bwd(g):
        return (np.broadcast_to(g / H, x.shape),)

    return _out(tape, "col_mean", (x,), out.astype(x.dtype), bwd)


def constant_pad(tape: Tape, x: Tensor, pad_h: int, pad_w: int, value: float = 0.0) -> Tensor:
    N, C, H, W = x.shape
    out = np.pad(
        x.data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)), constant_values=value
    )

    def bwd(g):
        return (g[:, :, pad_h : pad_h + H, pad_w : pad_w + W],)

    return _out(tape, "pad", (x,), out, bwd)


# ---------------------------------------------------------------------------
# softmax / losses


def softmax_channels(tape: Tape, x: Tensor) -> Tensor:
    """Softmax over the channel axis, independently per (n, h, w)."""
    z = x.data.astype(_ACC)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        gz = g.astype(_ACC)
        dot = (gz * s).sum(axis=1, keepdims=True)
        return (s * (gz - dot),)

    return _out(tape, "softmax", (x,), s.astype(x.dtype), bwd)


def cross_entropy_logits(
    tape: Tape, logits: Tensor, labels: np.ndarray, label_smoothing: float = 0.0
) -> Tensor:
    """Mean cross-entropy over the batch; logits (N,K,1,1), integer labels (N,)."""
    N, K, H, W = logits.shape
    if (H, W) != (1, 1):
        raise ShapeMismatch(f"logits must be (N,K,1,1), got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (N,):
        raise ShapeMismatch(f"labels must have shape ({N},), got {labels.shape}")
    z = logits.data.reshape(N, K).astype(_ACC)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    q = np.full((N, K), label_smoothing / K, dtype=_ACC)
    q[np.arange(N), labels] += 1.0 - label_smoothing
    loss = -(q * logp).sum(axis=1).mean()
    sm = np.exp(logp)

    def bwd(g):
        gs = float(np.asarray(g).reshape(()))
        return ((sm - q).reshape(N, K, 1, 1) * (gs / N),)

    return _out(tape, "cross_entropy", (logits,), np.full((1, 1, 1, 1), loss, dtype=logits.dtype), bwd)


def sum_masked(tape: Tape, x: Tensor, mask: np.ndarray) -> Tensor:
    """Scalar sum of x * mask for a constant mask; analysis helper."""
    if mask.shape != x.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != tensor shape {x.shape}")
    val = np.sum(x.data.astype(_ACC) * mask)

    def bwd(g):
        return (mask * float(np.asarray(g).reshape(())),)

    return _out(tape, "sum_masked", (x,), np.full((1, 1, 1, 1), val, dtype=x.dtype), bwd)


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    """Scalar sum of all elements; test/analysis helper."""
    val = np.sum(x.data, dtype=_ACC)

    def bwd(g):
        return (np.full(x.shape, float(np.asarray(g).reshape(())), dtype=_ACC),)

    return _out(tape, "sum_all", (x,), np.full((1, 1, 1, 1), val, dtype=x.dtype), bwd)


# ---------------------------------------------------------------------------
# generic dispatch

PRIMITIVE_KINDS = (
    "conv2d",
    "fc",
    "relu",
    "sigmoid",
    "softmax",
    "add",
    "channel_mul",
    "global_avg_pool",
    "max_pool",
    "avg_pool",
    "row_mean",
    "col_mean",
    "scale",
    "cross_entropy",
    "pad",
)


def apply_primitive(tape: Tape, kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Apply a primitive by kind name; records the result on `tape`."""
    attrs = dict(attrs or {})
    if kind == "conv2d":
        return conv2d(tape, *inputs, stride=attrs.get("stride", 1))
    if kind == "fc":
        return fc(tape, *inputs)
    if kind == "relu":
        return relu(tape, *inputs)
    if kind == "sigmoid":
        return sigmoid(tape, *inputs)
    if kind == "softmax":
        return softmax_channels(tape, *inputs)
    if kind == "add":
        return add(tape, *inputs)
    if kind == "channel_mul":
        return channel_mul(tape, *inputs)
    if kind == "global_avg_pool":
        return global_avg_pool(tape, *inputs)
    if kind == "max_pool":
        return max_pool_same(tape, inputs[0], attrs["k"])
    if kind == "avg_pool":
        return avg_pool_same(tape, inputs[0], attrs["k"])
    if kind == "row_mean":
        return row_mean(tape, *inputs)
    if kind == "col_mean":
        return col_mean(tape, *inputs)
    if kind == "scale":
        if len(inputs) == 2:
            return scale(tape, inputs[0], inputs[1], element=tuple(attrs.get("element", (0, 0, 0, 0))))
        return scale(tape, inputs[0], attrs["value"])
    if kind == "cross_entropy":
        return cross_entropy_logits(
            tape, inputs[0], attrs["labels"], attrs.get("label_smoothing", 0.0)
        )
    if kind == "pad":
        return constant_pad(tape, inputs[0], attrs["pad_h"], attrs["pad_w"], attrs.get("value", 0.0))
    raise ShapeMismatch(f"unknown primitive kind '{kind}'")
