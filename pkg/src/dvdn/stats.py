"""Evaluation statistics: bootstrap intervals, ranking test, checkpoint selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CHUNK = 2_000_000


def _boot_means(x: np.ndarray, resamples: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    rows = max(1, _CHUNK // n)
    out = np.empty(resamples)
    for start in range(0, resamples, rows):
        k = min(rows, resamples - start)
        out[start:start + k] = x[rng.integers(0, n, size=(k, n))].mean(axis=1)
    return out


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def bootstrap_ci(samples, level: float = 0.95, resamples: int = 20_000, rng=None) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if len(x) < 2:
        raise ValueError("bootstrap needs at least two samples")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    means = _boot_means(x, resamples, _rng(rng))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def rank_compare(a_samples, b_samples, level: float = 0.95, resamples: int = 20_000, rng=None) -> str:
    """'matches' when the bootstrap CI of mean(a) - mean(b) contains 0, else the sign decides."""
    a = np.asarray(a_samples, dtype=np.float64).ravel()
    b = np.asarray(b_samples, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("rank_compare needs nonempty samples")
    rng = _rng(rng)
    diffs = _boot_means(a, resamples, rng) - _boot_means(b, resamples, rng)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(diffs, [alpha, 1.0 - alpha])
    if lo <= 0.0 <= hi:
        return "matches"
    return "outperforms" if a.mean() > b.mean() else "underperforms"


@dataclass(frozen=True)
class MetricsRecord:
    index: int
    step: int
    per_seed: tuple
    mean: float
    ci_low: float
    ci_high: float


def aggregate_checkpoints(per_seed: np.ndarray, steps, resamples: int = 20_000, rng=None) -> list[MetricsRecord]:
    """Seed-averaged records from a (seeds x checkpoints) array of per-seed mean returns."""
    per_seed = np.atleast_2d(np.asarray(per_seed, dtype=np.float64))
    rng = _rng(rng)
    out = []
    for k, step in enumerate(steps):
        col = per_seed[:, k]
        m = float(col.mean())
        lo, hi = bootstrap_ci(col, resamples=resamples, rng=rng) if len(col) > 1 else (m, m)
        # percentile bounds can sit a rounding error inside the sample mean
        out.append(MetricsRecord(k, int(step), tuple(float(v) for v in col), m, min(lo, m), max(hi, m)))
    return out


def max_average_return(metrics) -> MetricsRecord:
    """Checkpoint with the largest seed-averaged return; ties go to the earliest."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("no checkpoints")
    best = metrics[0]
    for rec in metrics[1:]:
        if rec.mean > best.mean:
            best = rec
    return best


@dataclass(frozen=True)
class PooledGroup:
    best_index: int
    indices: tuple
    samples: np.ndarray
    flagged: bool


def pool_best_neighborhood(per_seed: np.ndarray, radius: int = 2) -> PooledGroup:
    """Samples from the best checkpoint and its +-radius neighbors, over all seeds.

    The window is clipped at the run boundaries; a window narrower than
    ``2 * radius + 1`` checkpoints is flagged.
    """
    per_seed = np.atleast_2d(np.asarray(per_seed, dtype=np.float64))
    means = per_seed.mean(axis=0)
    best = int(np.argmax(means))
    lo, hi = max(0, best - radius), min(per_seed.shape[1], best + radius + 1)
    idx = tuple(range(lo, hi))
    return PooledGroup(best, idx, per_seed[:, lo:hi].ravel(), len(idx) < 2 * radius + 1)
