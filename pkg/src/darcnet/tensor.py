"""Minimal reverse-mode automatic differentiation.

Only the handful of operations that DARC and DAMP need are provided. Operations
are recorded onto the innermost active :class:`Tape`; outside of a tape (or when
no input requires a gradient) they run as plain numpy code with no bookkeeping,
which is what evaluation uses.

A tape can be replayed backward exactly once. A second call to
:meth:`Tape.backward` raises :class:`TapeConsumedError`; build a new tape for a
new forward pass. Leaf gradients accumulate (``leaf.grad += ...``) across tapes
until :func:`zero_grad` is called, which is how size-bucketed batches are
combined into a single optimizer step.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "TapeConsumedError",
    "ShapeError",
    "LabelError",
    "set_default_dtype",
    "get_default_dtype",
    "zero_grad",
    "add",
    "mul",
    "sum",
    "transpose",
    "mask",
    "embedding",
    "conv2d_3x3",
    "layer_norm",
    "gelu",
    "linear",
    "softmax_cross_entropy",
]

_DEFAULT_DTYPE = np.float64
_node_ids = itertools.count()
_tape_stack: list["Tape"] = []

_SQRT_HALF = float(1.0 / np.sqrt(2.0))  # python floats keep float32 arrays float32
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class LabelError(ValueError):
    """Raised when an integer class label falls outside ``[0, K)``."""


class TapeConsumedError(RuntimeError):
    """Raised when backward is requested twice on the same tape."""


def set_default_dtype(dtype) -> None:
    """Select the float precision used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """Dense n-d array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of operations, replayed in reverse by :meth:`backward`.

    Use as a context manager; tapes nest, and operations go to the innermost one.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        if self.consumed:
            raise TapeConsumedError("cannot record onto a tape that has already been replayed")
        self.ops.append(_Op(out, inputs, backward))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if self.consumed:
            raise TapeConsumedError("backward already ran on this tape; record a new forward pass")
        if root.data.size != 1 or root.data.ndim > 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        for op in reversed(self.ops):
            g_out = grads.pop(op.out.node_id, None)
            if g_out is None:
                continue
            for inp, g in zip(op.inputs, op.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.node_id in grads:
                    grads[inp.node_id] = grads[inp.node_id] + g
                else:
                    grads[inp.node_id] = g
        # every produced node was popped above; what remains belongs to leaves
        for op in self.ops:
            for inp in op.inputs:
                g = grads.pop(inp.node_id, None)
                if g is not None:
                    inp.grad = g.copy() if inp.grad is None else inp.grad + g
        g = grads.pop(root.node_id, None)
        if g is not None and root.requires_grad:
            root.grad = g if root.grad is None else root.grad + g
        self.ops.clear()


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _tape_stack:
        _tape_stack[-1].record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def transpose(w: Tensor) -> Tensor:
    """Matrix transpose; the result's data is a numpy view of ``w.data``."""
    if w.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {w.shape}")
    return _emit(w.data.T, (w,), lambda g: (g.T,))


def mask(x: Tensor, m: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 array that broadcasts against ``x``."""
    m = np.asarray(m, dtype=x.dtype)
    return _emit(x.data * m, (x,), lambda g: (g * m,))


def embedding(indices: np.ndarray, weight: Tensor) -> Tensor:
    """Equivalent to ``one_hot(indices, K) @ weight`` without materializing the one-hot."""
    indices = np.asarray(indices)
    k = weight.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= k):
        raise LabelError(f"embedding index outside [0, {k})")
    flat = indices.reshape(-1)

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, flat, g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _emit(weight.data[indices], (weight,), backward)


# ---------------------------------------------------------------------------
# layers


def _im2col_3x3(x: np.ndarray) -> np.ndarray:
    """Columns of shape (B*H*W, C*9) over zero-padded 3x3 windows of an NHWC array."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))  # B,H,W,C,3,3
    b, h, w, c = x.shape
    return win.reshape(b * h * w, c * 9)


def conv2d_3x3(x: Tensor, weight: Tensor, bias: Tensor, layout: str = "NCHW") -> Tensor:
    """3x3 convolution, stride 1, zero padding 1, so spatial extents are preserved.

    ``weight`` is ``(C_out, C_in, 3, 3)`` and ``bias`` is ``(C_out,)``. With
    ``layout="NHWC"`` the input and output are channels-last, which lets the model
    skip layout shuffles between the convolution and the channel-wise layers.
    """
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d_3x3 expects a (C_out, C_in, 3, 3) kernel, got {weight.shape}")
    c_out, c_in = weight.shape[:2]
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d_3x3 bias shape {bias.shape} != ({c_out},)")
    if x.ndim != 4:
        raise ShapeError(f"conv2d_3x3 expects a 4-d input, got shape {x.shape}")
    if layout == "NCHW":
        xd = x.data.transpose(0, 2, 3, 1)
    elif layout == "NHWC":
        xd = x.data
    else:
        raise ValueError(f"unknown layout {layout!r}")
    b, h, w, c = xd.shape
    if c != c_in:
        raise ShapeError(f"conv2d_3x3: input has {c} channels, kernel expects {c_in}")

    wm = weight.data.reshape(c_out, c_in * 9)
    cols = _im2col_3x3(xd)
    out = (cols @ wm.T + bias.data).reshape(b, h, w, c_out)
    if layout == "NCHW":
        out = out.transpose(0, 3, 1, 2)

    def backward(g):
        if layout == "NCHW":
            g = g.transpose(0, 2, 3, 1)
        g2 = np.ascontiguousarray(g).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = g2.sum(axis=0)
        dcols = (g2 @ wm).reshape(b, h, w, c_in, 3, 3)
        gxp = np.zeros((b, h + 2, w + 2, c_in), dtype=g2.dtype)
        for dy in range(3):
            for dx in range(3):
                gxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., dy, dx]
        gx = gxp[:, 1:-1, 1:-1, :]
        if layout == "NCHW":
            gx = gx.transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(gx), gw, gb)

    return _emit(np.ascontiguousarray(out), (x, weight, bias), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing (channel) axis with the biased variance."""
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise ShapeError("layer_norm over an empty channel axis")
    if gain.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"layer_norm gain/shift must have shape ({c},)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_shift = g.sum(axis=lead)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return (gx, g_gain, g_shift)

    return _emit(xhat * gd + shift.data, (x, gain, shift), backward)


# Rational minimax fit of erf on [-4, 4] (outside that range erf is +/-1 in
# single precision). Max abs error vs. the float64 erf is below 5e-7, i.e. at
# float32 resolution; float64 tensors always go through scipy's erf.
_ERF_P = tuple(np.float32(c) for c in (
    -2.72614225801306e-10, 2.77068142495902e-08, -2.10102402082508e-06,
    -5.69250639462346e-05, -7.34990630326855e-04, -2.95459980854025e-03,
    -1.60960333262415e-02,
))
_ERF_Q = tuple(np.float32(c) for c in (
    -1.45660718464996e-05, -2.13374055278905e-04, -1.68282697438203e-03,
    -7.37332916720468e-03, -1.42647390514189e-02,
))


def _erf32(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, -4.0, 4.0)
    x2 = x * x
    p = x2 * _ERF_P[0]
    p += _ERF_P[1]
    for c in _ERF_P[2:]:
        p *= x2
        p += c
    p *= x
    q = x2 * _ERF_Q[0]
    q += _ERF_Q[1]
    for c in _ERF_Q[2:]:
        q *= x2
        q += c
    p /= q
    return p


def erf_like(x: np.ndarray) -> np.ndarray:
    """erf at the precision of ``x``."""
    if x.dtype == np.float32:
        return _erf32(x)
    return erf(x)


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    xd = x.data
    cdf = erf_like(xd * _SQRT_HALF)
    cdf += 1.0
    cdf *= 0.5

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _emit(xd * cdf, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` applied over all leading axes of ``x``."""
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {weight.shape}")
    c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"linear: input last axis {x.shape[-1]} != weight rows {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"linear bias shape {bias.shape} != ({c_out},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, c_in)
    wd = weight.data
    out = x2 @ wd
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, c_out)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gx = (g2 @ wd.T).reshape(*lead, c_in)
        gw = x2.T @ g2
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out, inputs, backward)


def softmax_cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    scale: float = 1.0,
    cell_mask: np.ndarray | None = None,
) -> Tensor:
    """Mean over all cells of ``-log softmax(logits)[target]``, times ``scale``.

    ``logits`` has the class axis last; ``targets`` holds integer labels with the
    leading shape of ``logits``. ``scale`` lets a caller weight a sub-batch by its
    share of the cells in a larger batch. With ``cell_mask`` (0/1, shape of
    ``targets``) the mean runs over the unmasked cells only.
    """
    targets = np.asarray(targets)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} != logits leading shape {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise LabelError(f"target label outside [0, {k})")
    z = logits.data.reshape(-1, k)
    t = targets.reshape(-1)
    n = z.shape[0]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    nll = np.log(s[:, 0]) - z[rows, t]
    if cell_mask is None:
        w = None
        denom = n
        total = nll.sum()
    else:
        w = np.asarray(cell_mask, dtype=logits.dtype).reshape(-1)
        if w.shape != (n,):
            raise ShapeError("cell_mask must match the targets shape")
        denom = w.sum()
        if denom <= 0:
            raise ShapeError("cell_mask selects no cells")
        total = (nll * w).sum()
    loss = np.asarray(total / denom * scale, dtype=logits.dtype)

    def backward(g):
        p = e / s
        p[rows, t] -= 1.0
        p *= g * scale / denom
        if w is not None:
            p *= w[:, None]
        return (p.reshape(logits.shape),)

    return _emit(loss, (logits,), backward)
