"""Exact-match grading and difficulty sweeps."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import model as M
from .tensor import ShapeError, Tensor
from .taskgen import sample

ID_VALUES = (0.30, 0.35, 0.40, 0.45, 0.50)
OOD_VALUES = (0.55, 0.60, 0.65, 0.70, 0.75, 0.80)
SPLITS = ("id", "ood")

# A predictor maps a list of input grids to a list of (H, W, K) logit arrays.
Predictor = Callable[[list], list]


def exact_match(logits, target) -> int:
    """1 iff the argmax color of every cell equals the target (ties -> lowest index)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    t = np.asarray(target)
    if z.ndim != 3 or z.shape[:2] != t.shape:
        raise ShapeError(f"logits {z.shape} do not match target grid {t.shape}")
    return int(np.array_equal(np.argmax(z, axis=-1), t))


def cell_accuracy(logits, target) -> float:
    """Fraction of matching cells; a debugging aid, not a headline metric."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return float(np.mean(np.argmax(z, axis=-1) == np.asarray(target)))


@dataclass(frozen=True)
class SweepConfig:
    values: tuple[float, ...] = ID_VALUES
    grids_per_value: int = 64
    seed: int = 0
    band_width: float = 0.01
    split: str = "id"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("difficulty values must be non-empty and strictly increasing")
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("difficulty values must lie in [0, 1]")
        if self.grids_per_value < 1:
            raise ValueError("grids_per_value must be >= 1")
        if self.band_width < 0:
            raise ValueError("band_width must be >= 0")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")

    @classmethod
    def for_split(cls, split: str, **kw) -> "SweepConfig":
        values = {"id": ID_VALUES, "ood": OOD_VALUES}.get(split)
        if values is None:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return cls(values=values, split=split, **kw)


@dataclass
class TaskResult:
    task_id: str
    split: str
    difficulties: list[float]
    accuracies: list[float]
    grids_per_value: int = 64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.difficulties) != len(self.accuracies):
            raise ValueError("one accuracy per difficulty value")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def task_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "split": self.split, "difficulties": list(self.difficulties),
                "accuracies": list(self.accuracies), "task_accuracy": self.task_accuracy,
                "grids_per_value": self.grids_per_value, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskResult":
        return cls(d["task_id"], d["split"], list(d["difficulties"]), list(d["accuracies"]),
                   d.get("grids_per_value", 64), d.get("meta", {}))


def model_predictor(params: M.ModelParams) -> Predictor:
    """Logits for each grid, batched through size-similar packed forward passes."""

    def predict(grids: list) -> list:
        out: list = [None] * len(grids)
        for idx, batch in M.pack_buckets(grids):
            logits = batch.unpack(M.forward_packed(params, batch).data)
            for i, z in zip(idx, logits):
                out[i] = z
        return out

    return predict


def copy_predictor(colors: int = M.NUM_COLORS) -> Predictor:
    """Predicts the input grid unchanged (one-hot logits); a test fixture."""
    return lambda grids: [np.eye(colors)[np.asarray(g)] for g in grids]


def instance_rng(seed: int, task_id: str, d: float, index: int) -> np.random.Generator:
    """RNG keyed by (seed, task, difficulty, instance), independent of evaluation order."""
    return np.random.default_rng([seed, zlib.crc32(task_id.encode()), int(round(d * 10000)), index])


def difficulty_accuracy(predict: Predictor, task, d: float, config: SweepConfig) -> float:
    hi = min(1.0, d + config.band_width)
    pairs = [sample(task, d, hi, instance_rng(config.seed, task.task_id, d, i))
             for i in range(config.grids_per_value)]
    logits = predict([p.input for p in pairs])
    return float(np.mean([exact_match(z, p.output) for z, p in zip(logits, pairs)]))


def sweep(model: Union[M.ModelParams, Predictor], task, config: SweepConfig) -> TaskResult:
    """Evaluate ``model`` on fresh draws at each difficulty value of ``config``."""
    predict = model_predictor(model) if isinstance(model, M.ModelParams) else model
    accs = [difficulty_accuracy(predict, task, d, config) for d in config.values]
    return TaskResult(task.task_id, config.split, list(config.values), accs, config.grids_per_value,
                      {"band_width": config.band_width, "seed": config.seed})


@dataclass
class SplitSummary:
    split: str
    task_ids: list[str]
    accuracies: np.ndarray
    mean: float
    median: float


def aggregate(results: Sequence[TaskResult]) -> dict[str, SplitSummary]:
    """Per-split task-accuracy vectors ordered by task id, with mean and median."""
    if not results:
        raise ValueError("aggregate needs at least one result")
    by_split: dict[str, dict[str, float]] = {}
    for r in results:
        bucket = by_split.setdefault(r.split, {})
        if r.task_id in bucket:
            raise ValueError(f"duplicate result for task {r.task_id!r} in split {r.split!r}")
        bucket[r.task_id] = r.task_accuracy
    out = {}
    for split, accs in by_split.items():
        ids = sorted(accs)
        vec = np.array([accs[i] for i in ids])
        out[split] = SplitSummary(split, ids, vec, float(vec.mean()), float(np.median(vec)))
    return out
