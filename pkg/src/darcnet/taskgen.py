"""Difficulty-parameterized, size-preserving grid tasks.

Every generator has the signature ``f(l, u) -> (input, output)``: a difficulty
``d`` is drawn uniformly from ``[l, u]``, and ``d`` drives both grid size and
content complexity. The output is always ``transform_oracle(spec, input)``, so
each family is a fixed, deterministic transformation for a given task spec.

Difficulty -> size: the nominal side is ``s = round(4 + 24*d)``; each of H and
W is ``s`` plus a uniform offset in ``[-a, a]`` with ``a = min(2, s-4, 28-s)``,
which keeps both inside ``[4, 28]`` and makes ``d = 0`` exactly 4x4.

Externally generated examples (for instance from real Re-ARC generators) enter
through :func:`load_dataset`; see ``docs/formats.md`` for the file grammar.
"""
from __future__ import annotations

import json
import os
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import ndimage

NUM_COLORS = 10
BACKGROUND = 0
MIN_SIDE, MAX_SIDE = 4, 28
MAX_GRID = 30

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = np.ones((3, 3), dtype=bool)


class TaskError(ValueError):
    """Base class for task and dataset errors."""


class InvalidRangeError(TaskError):
    pass


class UnknownTaskError(TaskError, KeyError):
    def __str__(self) -> str:  # KeyError would quote the message
        return str(self.args[0]) if self.args else ""


class DatasetError(TaskError):
    """Malformed or invalid dataset file. ``line`` / ``index`` locate the problem."""

    def __init__(self, message: str, line: Optional[int] = None, index: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.index = index


@dataclass(frozen=True)
class ExamplePair:
    input: np.ndarray
    output: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.output.shape:
            raise TaskError(f"pair is not size-preserving: {self.input.shape} -> {self.output.shape}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExamplePair):
            return NotImplemented
        return np.array_equal(self.input, other.input) and np.array_equal(self.output, other.output)


@dataclass(frozen=True)
class TaskSpec:
    """One task: a family plus the task-level parameters that fix its rule.

    Parameters not given in ``params`` are derived from ``seed``, so
    ``TaskSpec("t", "recolor_map", seed=3)`` always names the same permutation.
    """

    task_id: str
    kind: str
    seed: int = 0
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise UnknownTaskError(f"unknown task family {self.kind!r}; known: {sorted(FAMILIES)}")
        resolved = dict(_default_params(self.kind, self.seed))
        resolved.update(self.params or {})
        object.__setattr__(self, "params", resolved)

    @classmethod
    def from_id(cls, task_id: str) -> "TaskSpec":
        """``"family"`` or ``"family:seed"``."""
        kind, _, seed = task_id.partition(":")
        if kind not in FAMILIES:
            raise UnknownTaskError(f"unknown task {task_id!r}; known families: {sorted(FAMILIES)}")
        return cls(task_id, kind, int(seed) if seed else 0)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "kind": self.kind, "seed": self.seed,
                "params": {k: (list(v) if isinstance(v, (tuple, list, np.ndarray)) else v)
                           for k, v in self.params.items()}}


def _default_params(kind: str, seed: int) -> dict:
    rng = np.random.default_rng([zlib.crc32(kind.encode()), seed])
    if kind == "recolor_map":
        perm = rng.permutation(NUM_COLORS)
        while np.any(perm == np.arange(NUM_COLORS)):  # every color must change
            perm = rng.permutation(NUM_COLORS)
        return {"perm": tuple(int(c) for c in perm)}
    if kind == "fill_enclosed":
        return {"fill_color": int(rng.integers(1, NUM_COLORS))}
    if kind == "border_paint":
        return {"border_color": int(rng.integers(1, NUM_COLORS))}
    if kind == "largest_object_recolor":
        return {"target_color": int(rng.integers(1, NUM_COLORS))}
    if kind == "denoise":
        return {"noise_scale": 1.0}
    return {}


# ---------------------------------------------------------------------------
# transformations


def _recolor_map(grid: np.ndarray, params) -> np.ndarray:
    return np.asarray(params["perm"], dtype=grid.dtype)[grid]


def _fill_enclosed(grid: np.ndarray, params) -> np.ndarray:
    bg = grid == BACKGROUND
    labels, n = ndimage.label(bg, structure=_FOUR)
    if n == 0:
        return grid.copy()
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    inside = bg & ~np.isin(labels, edge)
    out = grid.copy()
    out[inside] = params["fill_color"]
    return out


def _gravity_down(grid: np.ndarray, params) -> np.ndarray:
    filled = grid != BACKGROUND
    # stable sort moves background cells to the top of each column, keeping order otherwise
    order = np.argsort(filled, axis=0, kind="stable")
    return np.take_along_axis(grid, order, axis=0)


def _denoise(grid: np.ndarray, params) -> np.ndarray:
    filled = grid != BACKGROUND
    neighbours = ndimage.convolve(filled.astype(np.int8), _EIGHT.astype(np.int8), mode="constant") - filled
    out = grid.copy()
    out[filled & (neighbours == 0)] = BACKGROUND
    return out


def _border_paint(grid: np.ndarray, params) -> np.ndarray:
    out = grid.copy()
    c = params["border_color"]
    out[0, :] = c
    out[-1, :] = c
    out[:, 0] = c
    out[:, -1] = c
    return out


def _largest_object_recolor(grid: np.ndarray, params) -> np.ndarray:
    """Recolor the largest same-color 4-connected non-background component.

    Ties go to the component whose first cell comes earliest in raster order.
    """
    best_size, best_first, best_mask = 0, None, None
    for color in np.unique(grid):
        if color == BACKGROUND:
            continue
        labels, n = ndimage.label(grid == color, structure=_FOUR)
        sizes = np.bincount(labels.ravel())[1:]
        flat = labels.ravel()
        for lab in np.flatnonzero(sizes == sizes.max()) + 1:
            first = int(np.argmax(flat == lab))
            size = int(sizes[lab - 1])
            if size > best_size or (size == best_size and first < best_first):
                best_size, best_first, best_mask = size, first, labels == lab
    out = grid.copy()
    if best_mask is not None:
        out[best_mask] = params["target_color"]
    return out


# ---------------------------------------------------------------------------
# input samplers


def grid_shape(d: float, rng: np.random.Generator) -> tuple[int, int]:
    s = int(np.clip(round(MIN_SIDE + (MAX_SIDE - MIN_SIDE) * d), MIN_SIDE, MAX_SIDE))
    a = min(2, s - MIN_SIDE, MAX_SIDE - s)
    h, w = s + rng.integers(-a, a + 1, size=2)
    return int(h), int(w)


def _n_colors(d: float, lo: int = 2) -> int:
    return min(NUM_COLORS, lo + int(8 * d))


def _palette(rng, n: int, exclude=(BACKGROUND,)) -> np.ndarray:
    avail = np.array([c for c in range(NUM_COLORS) if c not in exclude])
    return rng.choice(avail, size=min(n, len(avail)), replace=False)


def _scatter(grid, rng, density: float, palette, only_background: bool = True) -> None:
    spots = rng.random(grid.shape) < density
    if only_background:
        spots &= grid == BACKGROUND
    grid[spots] = rng.choice(palette, size=int(spots.sum()))


def _rect(rng, h: int, w: int, min_side: int, max_side: int):
    rh = int(rng.integers(min_side, max(min_side, min(max_side, h)) + 1))
    rw = int(rng.integers(min_side, max(min_side, min(max_side, w)) + 1))
    rh, rw = min(rh, h), min(rw, w)
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    return y, x, rh, rw


def _sample_recolor_map(rng, d, h, w, params):
    palette = rng.choice(NUM_COLORS, size=_n_colors(d), replace=False)
    return rng.choice(palette, size=(h, w))


def _sample_fill_enclosed(rng, d, h, w, params):
    grid = np.zeros((h, w), dtype=np.int64)
    palette = _palette(rng, _n_colors(d, 1), exclude=(BACKGROUND, params["fill_color"]))
    n_shapes = 1 + int(rng.integers(0, 1 + int(4 * d)))
    for _ in range(n_shapes):
        y, x, rh, rw = _rect(rng, h, w, 3, max(3, min(h, w) // 2 + 2))
        ring = np.zeros((rh, rw), dtype=bool)
        ring[[0, -1], :] = True
        ring[:, [0, -1]] = True
        if rng.random() < 0.25 * d:  # open rings do not enclose anything
            ring[0, rw // 2] = False
        grid[y:y + rh, x:x + rw][ring] = rng.choice(palette)
    _scatter(grid, rng, 0.04 * d, palette)
    return grid


def _sample_gravity_down(rng, d, h, w, params):
    grid = np.zeros((h, w), dtype=np.int64)
    _scatter(grid, rng, 0.1 + 0.3 * d, _palette(rng, _n_colors(d, 1)))
    return grid


def _sample_denoise(rng, d, h, w, params):
    grid = np.zeros((h, w), dtype=np.int64)
    palette = _palette(rng, _n_colors(d, 1))
    for _ in range(1 + int(rng.integers(0, 1 + int(4 * d)))):
        y, x, rh, rw = _rect(rng, h, w, 2, max(2, min(h, w) // 2))
        grid[y:y + rh, x:x + rw] = rng.choice(palette)
    _scatter(grid, rng, (0.03 + 0.09 * d) * float(params.get("noise_scale", 1.0)), palette)
    return grid


def _sample_border_paint(rng, d, h, w, params):
    grid = np.zeros((h, w), dtype=np.int64)
    _scatter(grid, rng, 0.15 + 0.35 * d, _palette(rng, _n_colors(d, 1)))
    return grid


def _sample_largest_object_recolor(rng, d, h, w, params):
    grid = np.zeros((h, w), dtype=np.int64)
    palette = _palette(rng, _n_colors(d, 1), exclude=(BACKGROUND, params["target_color"]))
    for _ in range(2 + int(rng.integers(0, 1 + int(4 * d)))):
        y, x, rh, rw = _rect(rng, h, w, 1, max(2, min(h, w) // 2))
        grid[y:y + rh, x:x + rw] = rng.choice(palette)
    _scatter(grid, rng, 0.05 * d, palette)
    return grid


@dataclass(frozen=True)
class Family:
    name: str
    sample: Callable
    transform: Callable


FAMILIES: dict[str, Family] = {
    f.name: f for f in (
        Family("recolor_map", _sample_recolor_map, _recolor_map),
        Family("fill_enclosed", _sample_fill_enclosed, _fill_enclosed),
        Family("gravity_down", _sample_gravity_down, _gravity_down),
        Family("denoise", _sample_denoise, _denoise),
        Family("border_paint", _sample_border_paint, _border_paint),
        Family("largest_object_recolor", _sample_largest_object_recolor, _largest_object_recolor),
    )
}


def validate_grid(grid) -> np.ndarray:
    g = np.asarray(grid)
    if g.ndim != 2 or not (1 <= g.shape[0] <= MAX_GRID and 1 <= g.shape[1] <= MAX_GRID):
        raise TaskError(f"grid must be 2-d with sides in [1, {MAX_GRID}], got shape {g.shape}")
    if g.dtype.kind not in "iu":
        raise TaskError("grid cells must be integers")
    if g.min() < 0 or g.max() >= NUM_COLORS:
        raise TaskError(f"grid color outside [0, {NUM_COLORS})")
    return g


def transform_oracle(spec: TaskSpec, grid) -> np.ndarray:
    """Ground-truth output of ``spec``'s rule on ``grid``."""
    g = validate_grid(grid).astype(np.int64, copy=False)
    return FAMILIES[spec.kind].transform(g, spec.params)


def generate(spec: TaskSpec, lo: float, hi: float, rng: np.random.Generator) -> ExamplePair:
    if not 0.0 <= lo <= hi <= 1.0:
        raise InvalidRangeError(f"difficulty range must satisfy 0 <= l <= u <= 1, got [{lo}, {hi}]")
    family = FAMILIES.get(spec.kind)
    if family is None:
        raise UnknownTaskError(f"unknown task family {spec.kind!r}")
    d = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    h, w = grid_shape(d, rng)
    grid = family.sample(rng, d, h, w, spec.params).astype(np.int64, copy=False)
    return ExamplePair(grid, family.transform(grid, spec.params))


def builtin_specs() -> list[TaskSpec]:
    return [TaskSpec(name, name) for name in FAMILIES]


def throughput_bench(spec: TaskSpec, seconds: float = 1.0, lo: float = 0.3, hi: float = 0.5,
                     seed: int = 0) -> dict:
    """Single-threaded ``generate`` calls per second over a wall-clock window."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    rng = np.random.default_rng(seed)
    count = 0
    start = time.perf_counter()
    deadline = start + seconds
    while True:
        generate(spec, lo, hi, rng)
        count += 1
        now = time.perf_counter()
        if now >= deadline:
            break
    elapsed = now - start
    return {"task_id": spec.task_id, "family": spec.kind, "band": [lo, hi],
            "pairs": count, "seconds": round(elapsed, 6), "pairs_per_second": count / elapsed}


# ---------------------------------------------------------------------------
# dataset files


def _as_grid(obj, index: int, key: str) -> np.ndarray:
    if (not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj)):
        raise DatasetError(f"pair {index}: {key!r} must be a non-empty list of rows", index=index)
    widths = {len(r) for r in obj}
    if len(widths) != 1:
        raise DatasetError(f"pair {index}: {key!r} rows have unequal lengths", index=index)
    for row in obj:
        for v in row:
            if isinstance(v, bool) or not isinstance(v, int):
                raise DatasetError(f"pair {index}: {key!r} holds a non-integer cell {v!r}", index=index)
    g = np.array(obj, dtype=np.int64)
    try:
        validate_grid(g)
    except TaskError as exc:
        raise DatasetError(f"pair {index}: {key!r}: {exc}", index=index) from None
    return g


def parse_dataset(text: str) -> list[ExamplePair]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed dataset at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                           line=exc.lineno) from None
    if not isinstance(doc, list):
        raise DatasetError("dataset must be a JSON array of {input, output} objects", line=1)
    pairs = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "input" not in item or "output" not in item:
            raise DatasetError(f"pair {i}: expected an object with 'input' and 'output'", index=i)
        gi = _as_grid(item["input"], i, "input")
        go = _as_grid(item["output"], i, "output")
        if gi.shape != go.shape:
            raise DatasetError(f"pair {i}: not size-preserving ({gi.shape[0]}x{gi.shape[1]} -> "
                               f"{go.shape[0]}x{go.shape[1]})", index=i)
        pairs.append(ExamplePair(gi, go))
    return pairs


def load_dataset(path: str | os.PathLike) -> list[ExamplePair]:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())


def dump_dataset(pairs) -> str:
    rows = [{"input": p.input.tolist(), "output": p.output.tolist()} for p in pairs]
    return json.dumps(rows, separators=(",", ":")) + "\n"


def save_dataset(pairs, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_dataset(pairs))


class DatasetTask:
    """A fixed pool of example pairs used like a generator.

    Sampling ignores difficulty: pairs are drawn uniformly with replacement.
    There is no transformation oracle for file-backed tasks.
    """

    def __init__(self, task_id: str, pairs: list[ExamplePair]):
        if not pairs:
            raise DatasetError("dataset task needs at least one pair")
        self.task_id = task_id
        self.kind = "dataset"
        self.pairs = pairs

    def generate(self, lo: float, hi: float, rng: np.random.Generator) -> ExamplePair:
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidRangeError(f"difficulty range must satisfy 0 <= l <= u <= 1, got [{lo}, {hi}]")
        return self.pairs[int(rng.integers(len(self.pairs)))]

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "kind": "dataset", "pairs": len(self.pairs)}


def sample(task, lo: float, hi: float, rng: np.random.Generator) -> ExamplePair:
    """``generate`` for either a :class:`TaskSpec` or a :class:`DatasetTask`."""
    if isinstance(task, DatasetTask):
        return task.generate(lo, hi, rng)
    return generate(task, lo, hi, rng)
