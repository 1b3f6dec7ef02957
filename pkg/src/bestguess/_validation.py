"""Input checks shared by the mechanism estimators."""

from __future__ import annotations

import numpy as np

TIE_RULES = ("lowest-index", "uniform-random")


def check_valuation_matrix(x, n: int | None = None, k: int | None = None, *, allow_batch: bool = False):
    """Return ``x`` as a float array of shape (n, k), or (B, n, k) if batches are allowed."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim not in ((2, 3) if allow_batch else (2,)):
        raise ValueError(f"expected a valuation matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("valuations must be finite")
    if np.any(x < 0):
        raise ValueError("valuations must be nonnegative")
    if n is not None and x.shape[-2] != n:
        raise ValueError(f"expected {n} bidders, got {x.shape[-2]}")
    if k is not None and x.shape[-1] != k:
        raise ValueError(f"expected {k} items, got {x.shape[-1]}")
    return x


def check_bid(z, k: int | None = None):
    z = np.asarray(z, dtype=float).reshape(-1)
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("bids must be finite and nonnegative")
    if k is not None and z.size != k:
        raise ValueError(f"expected a bid over {k} items, got {z.size}")
    return z


def check_beta(beta, k: int | None = None):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("exclusion vector must be finite and componentwise >= 0")
    if k is not None and beta.size != k:
        raise ValueError(f"exclusion vector has length {beta.size}, expected {k}")
    return beta


def check_tie_rule(tie_rule: str) -> str:
    if tie_rule not in TIE_RULES:
        raise ValueError(f"tie_rule must be one of {TIE_RULES}, got {tie_rule!r}")
    return tie_rule


def check_nonneg(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite nonnegative number")
    return value
