"""Paired-comparison statistics over per-task accuracy vectors.

Conventions: ``x`` is the baseline (model A), ``y`` the challenger (model B),
and differences are ``y - x`` so a positive effect means B is better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


class InvalidInputError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """The statistic is undefined for this input (e.g. zero variance)."""


def _vec(a, name: str = "input", min_len: int = 1) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64).ravel()
    if v.size < min_len:
        raise InvalidInputError(f"{name} needs at least {min_len} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return v


def _paired(x, y, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    x, y = _vec(x, "x", min_len), _vec(y, "y", min_len)
    if x.shape != y.shape:
        raise InvalidInputError(f"paired vectors differ in length: {x.size} vs {y.size}")
    return x, y


def _constant(v: np.ndarray) -> bool:
    # exact test; std() of a constant vector can be a few ulp instead of 0
    return bool(np.all(v == v[0]))


def bootstrap_ci(diffs, B: int = 10_000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile-bootstrap interval for the mean of ``diffs``."""
    d = _vec(diffs, "diffs", 2)
    if B < 1:
        raise InvalidInputError("B must be >= 1")
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = d.size
    means = np.empty(B)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        means[start:stop] = d[rng.integers(0, n, size=(stop - start, n))].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def paired_t(x, y) -> tuple[float, float]:
    """Paired t statistic on ``y - x`` and its two-sided p-value."""
    x, y = _paired(x, y, 2)
    d = y - x
    if _constant(d):
        raise DegenerateInputError("paired differences have zero variance")
    sd = d.std(ddof=1)
    n = d.size
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * _st.t.sf(abs(t), n - 1)
    return float(t), float(min(1.0, p))


EXACT_MAX_N = 20


def _signed_rank_inputs(d: np.ndarray, zero_method: str) -> np.ndarray:
    """Ranks of the non-zero |d| (average ranks for ties)."""
    if zero_method == "drop":
        nz = d[d != 0]
        return _st.rankdata(np.abs(nz))
    if zero_method == "pratt":
        ranks = _st.rankdata(np.abs(d))
        return ranks[d != 0]
    raise InvalidInputError(f"zero_method must be 'drop' or 'pratt', got {zero_method!r}")


def _exact_lower_tail(ranks: np.ndarray, w: float) -> float:
    """P(W+ <= w) under random signs, via a subset-sum count on doubled ranks."""
    r2 = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(r2.sum()) + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r].copy() if r else counts * 2
    w2 = int(math.floor(2 * w + 1e-9))
    return float(counts[: w2 + 1].sum() / 2.0 ** len(r2))


def wilcoxon_signed_rank(x, y, zero_method: str = "drop", method: str = "auto") -> tuple[float, float]:
    """Wilcoxon signed-rank test on ``y - x``; returns ``(W, two-sided p)``.

    ``W = min(W+, W-)``. The exact null distribution is used for up to
    ``EXACT_MAX_N`` non-zero differences, otherwise the normal approximation
    with tie-corrected variance and a 0.5 continuity correction.
    """
    x, y = _paired(x, y, 1)
    d = y - x
    ranks = _signed_rank_inputs(d, zero_method)
    nz = d[d != 0]
    if nz.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    w_plus = float(ranks[nz > 0].sum())
    w_minus = float(ranks[nz < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if nz.size <= EXACT_MAX_N else "normal"
    if method == "exact":
        p = 2.0 * _exact_lower_tail(ranks, w)
    elif method == "normal":
        mean = ranks.sum() / 2.0
        sd = math.sqrt(float((ranks ** 2).sum()) / 4.0)
        z = (w - mean + 0.5) / sd
        p = 2.0 * _st.norm.cdf(min(z, 0.0))
    else:
        raise InvalidInputError(f"method must be 'auto', 'exact' or 'normal', got {method!r}")
    return w, float(min(1.0, p))


def cohens_d_pooled(x, y) -> float:
    x, y = _vec(x, "x", 2), _vec(y, "y", 2)
    if _constant(x) and _constant(y):
        raise DegenerateInputError("pooled standard deviation is zero")
    nx, ny = x.size, y.size
    pooled = math.sqrt(((nx - 1) * x.var(ddof=1) + (ny - 1) * y.var(ddof=1)) / (nx + ny - 2))
    return float((y.mean() - x.mean()) / pooled)


def cohens_d_z(x, y) -> float:
    x, y = _paired(x, y, 2)
    d = y - x
    if _constant(d):
        raise DegenerateInputError("paired differences have zero variance")
    return float(d.mean() / d.std(ddof=1))


def cohens_d(x, y) -> tuple[float, float]:
    """``(d_pooled, d_z)``; positive when ``y`` is better."""
    return cohens_d_pooled(x, y), cohens_d_z(x, y)


def cliffs_delta(x, y) -> float:
    """(#{y_j > x_i} - #{y_j < x_i}) / (|x| |y|) over all cross pairs."""
    x, y = _vec(x, "x"), _vec(y, "y")
    ys = np.sort(y)
    greater = ys.size - np.searchsorted(ys, x, side="right")
    less = np.searchsorted(ys, x, side="left")
    return float((greater.sum() - less.sum()) / (x.size * y.size))


BUCKETS = ("b_better", "both_perfect", "both_zero", "other_tie", "a_better")


@dataclass(frozen=True)
class WinLossTie:
    b_better: int
    both_perfect: int
    both_zero: int
    other_tie: int
    a_better: int

    @property
    def n(self) -> int:
        return sum(self.counts())

    def counts(self) -> tuple[int, ...]:
        return tuple(getattr(self, b) for b in BUCKETS)

    def percentages(self) -> tuple[float, ...]:
        n = self.n
        return tuple(100.0 * c / n if n else 0.0 for c in self.counts())

    def to_dict(self) -> dict:
        return {b: getattr(self, b) for b in BUCKETS}


def win_loss_tie(x, y, tol: float = 1e-9) -> WinLossTie:
    """Five exhaustive buckets; a tie is ``|y - x| <= tol``."""
    x, y = _paired(x, y, 0)
    if tol < 0:
        raise InvalidInputError("tol must be >= 0")
    tie = np.abs(y - x) <= tol
    perfect = tie & (np.abs(x - 1.0) <= tol) & (np.abs(y - 1.0) <= tol)
    zero = tie & ~perfect & (np.abs(x) <= tol) & (np.abs(y) <= tol)
    other = tie & ~perfect & ~zero
    return WinLossTie(int(np.sum(~tie & (y > x))), int(perfect.sum()), int(zero.sum()),
                      int(other.sum()), int(np.sum(~tie & (y < x))))


def histogram(acc, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width counts over [0, 1] (1.0 lands in the last bin) and the bin edges."""
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    a = _vec(acc, "acc", 0)
    if np.any((a < 0.0) | (a > 1.0)):
        raise InvalidInputError("accuracies must lie in [0, 1]")
    counts, edges = np.histogram(a, bins=bins, range=(0.0, 1.0))
    return counts, edges
