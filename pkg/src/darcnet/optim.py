"""Muon and AdamW optimizers plus a linear-warmup / cosine-decay schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor

# Quintic Newton-Schulz coefficients of the public Muon formulation.
NS_COEFFS = (3.4445, -4.7750, 2.0315)


@dataclass(frozen=True)
class LrSchedule:
    peak: float = 0.01
    warmup: int = 16
    total: int = 2048
    final: float = 1e-7

    def __post_init__(self):
        if self.total < 1 or not 0 <= self.warmup <= self.total:
            raise ValueError(f"need 0 <= warmup <= total and total >= 1, got {self.warmup}, {self.total}")
        if self.final < 0 or self.peak < self.final:
            raise ValueError("need peak >= final >= 0")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate for 0-based ``step``.

    Linear warmup reaches ``peak`` on step ``warmup - 1``; the cosine then runs
    from ``peak`` on step ``warmup`` down to ``final`` on step ``total - 1``.
    """
    s = schedule
    if not 0 <= step < s.total:
        raise IndexError(f"step {step} outside [0, {s.total})")
    if step < s.warmup:
        return s.peak * (step + 1) / s.warmup
    span = s.total - s.warmup - 1
    if span <= 0:
        return s.peak
    frac = (step - s.warmup) / span
    return s.final + 0.5 * (s.peak - s.final) * (1.0 + math.cos(math.pi * frac))


def newton_schulz(m: np.ndarray, iters: int = 5, coeffs=NS_COEFFS) -> np.ndarray:
    """Approximate the orthogonal factor ``U V^T`` of ``m`` by quintic Newton-Schulz.

    A zero matrix maps to a zero matrix.
    """
    if m.ndim != 2:
        raise ValueError(f"newton_schulz expects a matrix, got shape {m.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    a, b, c = coeffs
    norm = np.linalg.norm(m)
    if norm == 0.0:
        return np.zeros_like(m)
    x = m / norm
    tall = x.shape[0] > x.shape[1]
    if tall:
        x = x.T
    for _ in range(iters):
        g = x @ x.T
        x = a * x + (b * g + c * (g @ g)) @ x
    return x.T if tall else x


def _check_shapes(params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is not None and p.grad.shape != p.data.shape:
            raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(
        self,
        params: Sequence[Tensor],
        betas: tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 0.01,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        _check_shapes(self.params)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


class Muon:
    """Momentum followed by Newton-Schulz orthogonalization for matrix parameters.

    ``matrix_params`` are updated with Nesterov momentum (``m = beta*m + g``,
    ``g' = g + beta*m``), flattened to ``(rows, prod(rest))``, orthogonalized and
    scaled by ``sqrt(max(1, rows/cols))``. Everything in ``other_params`` goes
    through an internal :class:`AdamW` at the same learning rate.
    """

    def __init__(
        self,
        matrix_params: Sequence[Tensor],
        other_params: Sequence[Tensor] = (),
        momentum: float = 0.95,
        ns_iters: int = 5,
        fallback_betas: tuple[float, float] = (0.9, 0.999),
        fallback_weight_decay: float = 0.0,
        fallback_eps: float = 1e-8,
    ):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.params = list(matrix_params)
        for p in self.params:
            if p.ndim < 2:
                raise ValueError(f"Muon needs matrix-shaped parameters, got shape {p.shape}")
        self.momentum = momentum
        self.ns_iters = ns_iters
        self.step_count = 0
        self.buffers = [np.zeros_like(p.data) for p in self.params]
        self.fallback = AdamW(other_params, betas=fallback_betas,
                              weight_decay=fallback_weight_decay, eps=fallback_eps)

    def step(self, lr: float) -> None:
        _check_shapes(self.params)
        self.step_count += 1
        beta = self.momentum
        for p, buf in zip(self.params, self.buffers):
            if p.grad is None:
                continue
            g = p.grad
            buf *= beta
            buf += g
            g = g + beta * buf
            rows = p.shape[0]
            g2 = g.reshape(rows, -1)
            cols = g2.shape[1]
            update = newton_schulz(g2, self.ns_iters).reshape(p.shape)
            scale = lr * math.sqrt(max(1.0, rows / cols))
            p.data -= (scale * update).astype(p.data.dtype, copy=False)
        self.fallback.step(lr)


@dataclass
class OptimConfig:
    name: str = "muon"
    lr: float = 0.01
    warmup: int = 16
    final_lr: float = 1e-7
    momentum: float = 0.95
    ns_iters: int = 5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    fallback_weight_decay: float = 0.0
    muon_on_embedding: bool = False

    def __post_init__(self):
        if self.name not in ("muon", "adamw"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        self.betas = tuple(self.betas)

    @classmethod
    def adamw_default(cls) -> "OptimConfig":
        return cls(name="adamw", lr=0.001, betas=(0.9, 0.999), weight_decay=0.01)


def make_optimizer(cfg: OptimConfig, named_params: Sequence[tuple[str, Tensor]], matrix_names: Sequence[str]):
    """Instantiate the optimizer described by ``cfg`` over a model's parameters."""
    if cfg.name == "adamw":
        return AdamW([t for _, t in named_params], betas=cfg.betas,
                     weight_decay=cfg.weight_decay, eps=cfg.eps)
    on_muon = set(matrix_names)
    if cfg.muon_on_embedding:
        on_muon.add("embed.weight")
    mats = [t for n, t in named_params if n in on_muon]
    rest = [t for n, t in named_params if n not in on_muon]
    return Muon(mats, rest, momentum=cfg.momentum, ns_iters=cfg.ns_iters,
                fallback_betas=cfg.betas, fallback_weight_decay=cfg.fallback_weight_decay,
                fallback_eps=cfg.eps)
