"""DARC and DAMP: depth-aware recurrent convolutional networks.

Both models embed a grid of color indices into a C-channel residual stream,
apply one weight-shared block ``2 * max(H, W)`` times, and read logits back out
through the transpose of the embedding matrix.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import LabelError, ShapeError, Tensor

NUM_COLORS = 10
ARCHS = ("darc", "damp")

# Each conv/linear weight maps to its fan-in for N(0, 1/fan_in) initialization.
MATRIX_PARAMS = ("conv.weight", "mlp.w", "mlp.v", "mlp.w2")


class ConfigError(ValueError):
    """Raised for an invalid architecture description."""


@dataclass(frozen=True)
class ArchConfig:
    arch: str = "damp"
    channels: int = 64
    colors: int = NUM_COLORS
    mlp_expansion: int = 4
    ln_eps: float = 1e-5
    embed_init_std: float = 0.005

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if not isinstance(self.channels, (int, np.integer)) or self.channels < 1:
            raise ConfigError(f"channels must be a positive integer, got {self.channels!r}")
        if self.colors != NUM_COLORS:
            raise ConfigError(f"colors is fixed at {NUM_COLORS}")
        if self.arch == "damp" and self.mlp_expansion != 4:
            raise ConfigError("DAMP uses a fixed MLP expansion of 4")
        if self.ln_eps <= 0 or self.embed_init_std <= 0:
            raise ConfigError("ln_eps and embed_init_std must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_shapes(config: ArchConfig) -> dict[str, tuple[int, ...]]:
    c, k = config.channels, config.colors
    shapes = {
        "embed.weight": (k, c),
        "conv.weight": (c, c, 3, 3),
        "conv.bias": (c,),
        "ln1.gain": (c,),
        "ln1.shift": (c,),
    }
    if config.arch == "damp":
        h = config.mlp_expansion * c
        shapes.update({
            "ln2.gain": (c,),
            "ln2.shift": (c,),
            "mlp.w": (c, h),
            "mlp.b_w": (h,),
            "mlp.v": (c, h),
            "mlp.b_v": (h,),
            "mlp.w2": (h, c),
            "mlp.b2": (c,),
        })
    return shapes


def expected_param_count(config: ArchConfig) -> int:
    """Closed-form parameter count: embedding, conv, norms and (DAMP) the gated MLP."""
    k, c = config.colors, config.channels
    n = k * c + (9 * c * c + c) + 2 * c
    if config.arch == "damp":
        e = config.mlp_expansion
        n += 2 * c + (c * e * c + e * c) * 2 + (e * c * c + c)
    return n


@dataclass
class ModelParams:
    config: ArchConfig
    seed: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    @property
    def num_params(self) -> int:
        return int(np.sum([t.data.size for t in self.tensors.values()]))

    @property
    def dtype(self):
        return self.tensors["embed.weight"].dtype

    def head(self) -> np.ndarray:
        """Output projection: a transpose *view* of the embedding matrix."""
        return self.tensors["embed.weight"].data.T

    def zero_grad(self) -> None:
        T.zero_grad(self.tensors.values())

    def digest(self) -> str:
        """Content hash over names, shapes and raw parameter bytes."""
        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(str(t.shape).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.seed, {
            n: Tensor(t.data.copy(), requires_grad=True, name=n) for n, t in self.tensors.items()
        })


def depth_for(height: int, width: int) -> int:
    """Number of block iterations for an ``height x width`` grid."""
    if height < 1 or width < 1:
        raise ShapeError(f"grid extents must be positive, got {height}x{width}")
    return 2 * max(height, width)


def build(config: ArchConfig, seed: int, dtype=None) -> ModelParams:
    """Fresh randomly initialized parameters; deterministic in ``seed``."""
    dtype = dtype or T.get_default_dtype()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name == "embed.weight":
            data = rng.normal(0.0, config.embed_init_std, size=shape)
        elif name in MATRIX_PARAMS:
            fan_in = int(np.prod(shape[1:])) if name == "conv.weight" else shape[0]
            data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    params = ModelParams(config, seed, tensors)
    assert params.num_params == expected_param_count(config)
    return params


def geglu_mlp(x: Tensor, params: ModelParams) -> Tensor:
    """Position-wise gated MLP ``(GeLU(x W + b_w) * (x V + b_v)) W2 + b2``."""
    p = params.tensors
    gate = T.gelu(T.linear(x, p["mlp.w"], p["mlp.b_w"]))
    value = T.linear(x, p["mlp.v"], p["mlp.b_v"])
    return T.linear(T.mul(gate, value), p["mlp.w2"], p["mlp.b2"])


def _check_grids(grids, colors: int) -> np.ndarray:
    g = np.asarray(grids)
    if g.ndim == 2:
        g = g[None]
    if g.ndim != 3:
        raise ShapeError(f"expected a (B, H, W) batch of grids, got shape {g.shape}")
    if 0 in g.shape:
        raise ShapeError(f"empty grid batch {g.shape}")
    if g.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(g, 1), 0)):
            raise LabelError("grid cells must be integer color indices")
        g = g.astype(np.int64)
    if g.min() < 0 or g.max() >= colors:
        raise LabelError(f"grid color outside [0, {colors})")
    return g


def forward(
    params: ModelParams,
    grids,
    depth: Optional[int] = None,
    on_iteration: Optional[Callable[[int, Tensor], None]] = None,
) -> Tensor:
    """Logits of shape ``(B, H, W, K)`` for a batch of same-sized grids.

    ``depth`` overrides the iteration count (default ``depth_for(H, W)``).
    ``on_iteration(i, stream)`` is called after each block iteration.
    """
    cfg = params.config
    p = params.tensors
    g = _check_grids(grids, cfg.colors)
    n = depth_for(g.shape[1], g.shape[2]) if depth is None else int(depth)
    if n < 0:
        raise ValueError("depth must be non-negative")

    stream = T.embedding(g, p["embed.weight"])  # (B, H, W, C)
    for i in range(n):
        h = T.layer_norm(stream, p["ln1.gain"], p["ln1.shift"], cfg.ln_eps)
        h = T.conv2d_3x3(h, p["conv.weight"], p["conv.bias"], layout="NHWC")
        stream = T.add(stream, T.gelu(h))
        if cfg.arch == "damp":
            h = T.layer_norm(stream, p["ln2.gain"], p["ln2.shift"], cfg.ln_eps)
            stream = T.add(stream, geglu_mlp(h, params))
        if on_iteration is not None:
            on_iteration(i, stream)
    return T.linear(stream, T.transpose(p["embed.weight"]))


@dataclass
class PackedBatch:
    """Variable-sized grids laid into one zero-filled ``(B, Hmax, Wmax)`` array.

    ``cells`` marks the real cells of each grid and ``depths`` holds each grid's
    own ``depth_for(H, W)``. Running the block under these masks reproduces, grid
    by grid, exactly what an unpadded forward pass computes: the convolution only
    ever sees zeros outside a grid, and a grid's stream stops changing once its
    own iteration count is reached.
    """

    grids: np.ndarray
    cells: np.ndarray
    depths: np.ndarray
    extents: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.extents)

    def unpack(self, arr: np.ndarray) -> list[np.ndarray]:
        return [arr[i, :h, :w] for i, (h, w) in enumerate(self.extents)]


def pack(grids, fill: int = 0) -> PackedBatch:
    grids = [np.asarray(g) for g in grids]
    if not grids:
        raise ShapeError("cannot pack an empty list of grids")
    for g in grids:
        if g.ndim != 2 or 0 in g.shape:
            raise ShapeError(f"expected non-empty 2-d grids, got shape {g.shape}")
    hmax = max(g.shape[0] for g in grids)
    wmax = max(g.shape[1] for g in grids)
    out = np.full((len(grids), hmax, wmax), fill, dtype=np.int64)
    cells = np.zeros((len(grids), hmax, wmax), dtype=bool)
    for i, g in enumerate(grids):
        out[i, : g.shape[0], : g.shape[1]] = g
        cells[i, : g.shape[0], : g.shape[1]] = True
    depths = np.array([depth_for(*g.shape) for g in grids])
    return PackedBatch(out, cells, depths, [g.shape for g in grids])


# Python-side cost of one block iteration, expressed in grid cells of numpy work.
_CHUNK_OVERHEAD_CELLS = 200


def _padded_cost(shapes) -> int:
    h = max(s[0] for s in shapes)
    w = max(s[1] for s in shapes)
    return (len(shapes) * h * w + _CHUNK_OVERHEAD_CELLS) * depth_for(h, w)


def pack_buckets(grids) -> list[tuple[list[int], PackedBatch]]:
    """Split grids into a few size-similar packed batches.

    Greedy over grids sorted by depth: a grid joins the current chunk when that
    costs less padded work than starting a chunk of its own. Returns
    ``(indices, batch)`` pairs; indices refer to positions in ``grids``.
    """
    grids = [np.asarray(g) for g in grids]
    order = sorted(range(len(grids)), key=lambda i: (-max(grids[i].shape), -grids[i].size, i))
    chunks: list[list[int]] = []
    for i in order:
        if chunks:
            cur = [grids[j].shape for j in chunks[-1]]
            joined = _padded_cost(cur + [grids[i].shape])
            if joined <= _padded_cost(cur) + _padded_cost([grids[i].shape]):
                chunks[-1].append(i)
                continue
        chunks.append([i])
    return [(idx, pack([grids[j] for j in idx])) for idx in chunks]


def forward_packed(params: ModelParams, batch: PackedBatch) -> Tensor:
    """Logits ``(B, Hmax, Wmax, K)`` for a :class:`PackedBatch`.

    Entries outside a grid's own extent are meaningless and must be ignored.
    """
    cfg = params.config
    p = params.tensors
    g = _check_grids(batch.grids, cfg.colors)
    cells = batch.cells[..., None]
    stream = T.mask(T.embedding(g, p["embed.weight"]), cells)
    active = None
    for i in range(int(batch.depths.max())):
        live = batch.depths > i
        if active is None or not np.array_equal(live, prev_live):
            active = cells & live[:, None, None, None]
            prev_live = live
        h = T.layer_norm(stream, p["ln1.gain"], p["ln1.shift"], cfg.ln_eps)
        h = T.conv2d_3x3(T.mask(h, cells), p["conv.weight"], p["conv.bias"], layout="NHWC")
        stream = T.add(stream, T.mask(T.gelu(h), active))
        if cfg.arch == "damp":
            h = T.layer_norm(stream, p["ln2.gain"], p["ln2.shift"], cfg.ln_eps)
            stream = T.add(stream, T.mask(geglu_mlp(h, params), active))
    return T.linear(stream, T.transpose(p["embed.weight"]))


def predict(params: ModelParams, grids) -> list[np.ndarray]:
    """Argmax color grids for a list of (possibly differently sized) grids.

    Ties resolve to the lowest color index.
    """
    out: list = [None] * len(grids)
    for idx, batch in pack_buckets(grids):
        for i, pred in zip(idx, batch.unpack(np.argmax(forward_packed(params, batch).data, axis=-1))):
            out[i] = pred
    return out
