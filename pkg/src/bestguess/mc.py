"""Monte Carlo revenue estimation and SPB surcharge sweeps.

Samples are drawn in fixed-size batches, each from its own substream keyed by
``(seed, batch index)``, and batch statistics are merged with the pairwise
mean/variance update. The result therefore does not depend on how batches are
spread over workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .mechanisms import _winners, make_mechanism, spb_batch_revenue
from .valuedist import Dist1D, JointValuation, second_highest

__all__ = ["substream", "Estimate", "SweepResult", "sample_revenues", "estimate_revenue", "spb_sweep",
           "write_estimates_csv"]

BATCH_SIZE = 8192
CSV_COLUMNS = ("mech", "w", "mean", "stderr", "n", "seed")


def substream(seed: int, idx: int) -> np.random.Generator:
    """Independent generator for batch ``idx`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(idx)]))


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int

    def ci(self, z: float = 2.0) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples, "seed": self.seed}


class _Moments:
    """Count, mean and sum of squared deviations, per column."""

    def __init__(self, width: int):
        self.n = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add_batch(self, values: np.ndarray) -> None:
        values = values.reshape(len(values), -1)
        nb = len(values)
        if nb == 0:
            return
        mb = values.mean(axis=0)
        m2b = ((values - mb) ** 2).sum(axis=0)
        tot = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / tot
        self.m2 = self.m2 + m2b + delta**2 * self.n * nb / tot
        self.n = tot

    def estimates(self, seed: int) -> list[Estimate]:
        if self.n < 2:
            se = np.zeros_like(self.mean)
        else:
            se = np.sqrt(np.maximum(self.m2 / (self.n - 1), 0.0) / self.n)
        return [Estimate(float(m), float(s), self.n, seed) for m, s in zip(self.mean, se)]


def _batches(n_samples: int, batch_size: int):
    for b, start in enumerate(range(0, n_samples, batch_size)):
        yield b, min(batch_size, n_samples - start)


def _vectorized(desc: dict):
    kind = desc.get("mech")
    if kind == "vickrey":
        return lambda x, rng: second_highest(x, axis=1).sum(axis=1)
    if kind == "spb" and desc.get("w", "auto") != "auto":
        w = float(desc["w"])
        tie = desc.get("tie_rule", "uniform-random")
        return lambda x, rng: spb_batch_revenue(x, [w], _winners(x, tie, rng))[:, 0]
    return None


def _batch_revenues(desc, est, FJ, seed, b, size):
    rng = substream(seed, b)
    x = FJ.sample(rng, size)
    fast = _vectorized(desc)
    if fast is not None:
        return fast(x, rng)
    return np.array([est.outcome(m, rng=rng).revenue for m in x])


def _prepare(desc: dict, FJ: JointValuation):
    if desc.get("mech") in ("dbgr", "dbg", "bg", "bgr") and not FJ.is_discrete:
        raise ValueError(f"{desc['mech']} conditions on discrete slices: discretize the prior first")
    if _vectorized(desc) is not None:
        return None
    return make_mechanism(desc, FJ)


def sample_revenues(desc: dict, FJ: JointValuation, n_samples: int, seed: int,
                    batch_size: int = BATCH_SIZE) -> np.ndarray:
    """Per-sample total payments, in sample order."""
    est = _prepare(desc, FJ)
    return np.concatenate([_batch_revenues(desc, est, FJ, seed, b, size)
                           for b, size in _batches(n_samples, batch_size)])


def estimate_revenue(desc: dict, FJ: JointValuation, n_samples: int = 100_000, seed: int = 0,
                     n_jobs: int = 1, batch_size: int = BATCH_SIZE) -> Estimate:
    """Mean total payment of mechanism ``desc`` on draws from ``FJ``."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    est = _prepare(desc, FJ)
    jobs = list(_batches(n_samples, batch_size))
    parts = Parallel(n_jobs=n_jobs)(delayed(_batch_revenues)(desc, est, FJ, seed, b, size) for b, size in jobs)
    acc = _Moments(1)
    for part in parts:
        acc.add_batch(part)
    return acc.estimates(seed)[0]


@dataclass(frozen=True)
class SweepResult:
    w: np.ndarray
    estimates: tuple

    @property
    def best_index(self) -> int:
        return int(np.argmax([e.mean for e in self.estimates]))

    @property
    def best(self) -> tuple[float, Estimate]:
        i = self.best_index
        return float(self.w[i]), self.estimates[i]

    def rows(self, mech: str = "spb") -> list[dict]:
        return [{"mech": mech, "w": float(w), "mean": e.mean, "stderr": e.stderr, "n": e.n_samples, "seed": e.seed}
                for w, e in zip(self.w, self.estimates)]


def _sweep_batch(FJ, w_grid, tie_rule, seed, b, size):
    rng = substream(seed, b)
    x = FJ.sample(rng, size)
    return spb_batch_revenue(x, w_grid, _winners(x, tie_rule, rng))


def spb_sweep(F: Dist1D, n: int, k: int, w_grid, n_samples: int = 100_000, seed: int = 0,
              tie_rule: str = "uniform-random", n_jobs: int = 1, batch_size: int = BATCH_SIZE) -> SweepResult:
    """SPB revenue over a surcharge grid with common sample matrices and tie draws."""
    w_grid = np.asarray(w_grid, dtype=float).reshape(-1)
    if w_grid.size == 0:
        raise ValueError("empty surcharge grid")
    if np.any(w_grid < 0) or not np.all(np.isfinite(w_grid)):
        raise ValueError("surcharges must be finite and nonnegative")
    FJ = JointValuation.iid(F, n, k)
    parts = Parallel(n_jobs=n_jobs)(delayed(_sweep_batch)(FJ, w_grid, tie_rule, seed, b, size)
                                    for b, size in _batches(n_samples, batch_size))
    acc = _Moments(w_grid.size)
    for part in parts:
        acc.add_batch(part)
    return SweepResult(w_grid, tuple(acc.estimates(seed)))


def write_estimates_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in CSV_COLUMNS})

