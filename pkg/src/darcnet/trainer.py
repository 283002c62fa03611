"""Per-task training loop.

Each step samples ``batch_size`` pairs from the task's generator in the
training difficulty band, computes one cross-entropy averaged over every cell of
every example, and takes one optimizer step at ``lr_at(step)``.

Mixed grid sizes never get padded *semantically*. By default a batch is split
into size-similar buckets that run through :func:`~darcnet.model.forward_packed`,
which is numerically the same as running each grid alone with its own depth;
``bucketing="exact"`` instead groups strictly by ``(H, W)`` and uses the plain
forward pass. Either way gradients of all buckets accumulate before the step.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .checkpoint import checkpoint_load, checkpoint_save  # noqa: F401  (re-exported)
from .optim import LrSchedule, OptimConfig, lr_at, make_optimizer
from .taskgen import ExamplePair, sample

log = logging.getLogger(__name__)

ProgressFn = Callable[[dict], None]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, lr: float, loss: float, history: Sequence[float]):
        self.step, self.lr, self.loss = step, lr, loss
        self.history = list(history)
        tail = ", ".join(f"{x:.4g}" for x in self.history[-8:])
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr:.3g}); last losses: [{tail}]")


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from a mix of ints and strings."""
    ints = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


@dataclass
class TrainConfig:
    batches: int = 2048
    batch_size: int = 16
    band: tuple[float, float] = (0.3, 0.5)
    arch: M.ArchConfig = field(default_factory=M.ArchConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    dtype: str = "float32"
    bucketing: str = "packed"

    def __post_init__(self):
        if self.batches < 1 or self.batch_size < 1:
            raise ValueError("batches and batch_size must be >= 1")
        lo, hi = self.band
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"training band must satisfy 0 <= l <= u <= 1, got {self.band}")
        self.band = (float(lo), float(hi))
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.bucketing not in ("packed", "exact"):
            raise ValueError("bucketing must be 'packed' or 'exact'")

    def schedule(self) -> LrSchedule:
        o = self.optim
        return LrSchedule(peak=o.lr, warmup=min(o.warmup, self.batches), total=self.batches,
                          final=min(o.final_lr, o.lr))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["band"] = list(self.band)
        d["optim"]["betas"] = list(self.optim.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "arch" in d and isinstance(d["arch"], dict):
            d["arch"] = M.ArchConfig.from_dict(d["arch"])
        if "optim" in d and isinstance(d["optim"], dict):
            d["optim"] = OptimConfig(**d["optim"])
        if "band" in d:
            d["band"] = tuple(d["band"])
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainRecord:
    task_id: str
    losses: list[float]
    lrs: list[float]
    wall_time: float
    model_seed: int
    data_seed: int
    params: Optional[M.ModelParams] = None
    checkpoint: Optional[str] = None

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "losses": self.losses, "lrs": self.lrs,
                "wall_time": self.wall_time, "model_seed": self.model_seed,
                "data_seed": self.data_seed, "checkpoint": self.checkpoint}


def batch_loss_and_grad(params: M.ModelParams, pairs: Sequence[ExamplePair], bucketing: str = "packed") -> float:
    """Accumulate gradients of the per-cell mean cross-entropy over ``pairs``.

    Returns the loss value. Parameter gradients are added to whatever is already
    in ``.grad``; callers zero them first.
    """
    total = sum(p.input.size for p in pairs)
    loss_value = 0.0
    if bucketing == "exact":
        groups: dict[tuple[int, int], list[ExamplePair]] = {}
        for p in pairs:
            groups.setdefault(p.input.shape, []).append(p)
        for shape, group in groups.items():
            x = np.stack([p.input for p in group])
            y = np.stack([p.output for p in group])
            with T.Tape() as tape:
                loss = T.softmax_cross_entropy(M.forward(params, x), y, scale=y.size / total)
            tape.backward(loss)
            loss_value += loss.item()
        return loss_value
    inputs = [p.input for p in pairs]
    for idx, batch in M.pack_buckets(inputs):
        targets = M.pack([pairs[i].output for i in idx]).grids
        with T.Tape() as tape:
            logits = M.forward_packed(params, batch)
            loss = T.softmax_cross_entropy(logits, targets, scale=batch.cells.sum() / total,
                                           cell_mask=batch.cells)
        tape.backward(loss)
        loss_value += loss.item()
    return loss_value


def fit(
    params: M.ModelParams,
    config: TrainConfig,
    next_batch: Callable[[int], Sequence[ExamplePair]],
    task_id: str = "",
    progress: Optional[ProgressFn] = None,
    stop_when: Optional[Callable[[int, M.ModelParams], bool]] = None,
) -> tuple[list[float], list[float]]:
    """Run the optimizer loop on batches from ``next_batch(step)``.

    ``stop_when(step, params)`` is consulted after every step and ends training
    early when it returns True.
    """
    opt = make_optimizer(config.optim, params.named(), M.MATRIX_PARAMS)
    schedule = config.schedule()
    losses: list[float] = []
    lrs: list[float] = []
    for step in range(config.batches):
        lr = lr_at(schedule, step)
        params.zero_grad()
        loss = batch_loss_and_grad(params, next_batch(step), config.bucketing)
        if not math.isfinite(loss):
            raise TrainingDiverged(step, lr, loss, losses)
        opt.step(lr)
        losses.append(loss)
        lrs.append(lr)
        if progress is not None:
            progress({"task_id": task_id, "step": step, "loss": loss, "lr": lr})
        if stop_when is not None and stop_when(step, params):
            break
    params.zero_grad()
    return losses, lrs


def train_task(config: TrainConfig, task, progress: Optional[ProgressFn] = None) -> TrainRecord:
    """Train a freshly initialized model on one task (a TaskSpec or DatasetTask)."""
    model_seed = derive_seed(config.seed, task.task_id, config.arch.arch, "model")
    data_seed = derive_seed(config.seed, task.task_id, "data")
    params = M.build(config.arch, model_seed, dtype=np.dtype(config.dtype).type)
    rng = np.random.default_rng(data_seed)
    lo, hi = config.band

    def next_batch(step: int):
        return [sample(task, lo, hi, rng) for _ in range(config.batch_size)]

    start = time.perf_counter()
    losses, lrs = fit(params, config, next_batch, task.task_id, progress)
    wall = time.perf_counter() - start
    log.info("trained %s/%s: %d steps in %.1fs, final loss %.4f",
             task.task_id, config.arch.arch, len(losses), wall, losses[-1])
    return TrainRecord(task.task_id, losses, lrs, wall, model_seed, data_seed, params)
