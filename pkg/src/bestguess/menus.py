"""One-bidder mechanisms as menus, the profitable-entry transform and the
beta-lifting Phi_beta.

A :class:`Menu` is a finite set of (allocation, price) entries that always
holds the null entry; the buyer takes a utility maximiser, so every menu is
IR and IC by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .valuedist import DiscreteDist, as_support

__all__ = [
    "Menu",
    "TransformParams",
    "PhiResult",
    "best_response",
    "menu_revenue",
    "adjusted_revenue",
    "menu_from_lp",
    "menu_from_direct",
    "profitable_transform",
    "phi_beta",
]

UTIL_TOL = 1e-12
DEFAULT_EPSILON = 1e-9


class Menu:
    """Immutable set of (q, price) entries including ``(0, 0)``."""

    __slots__ = ("q", "prices", "k")

    def __init__(self, entries, k: int | None = None):
        rows = {}
        for q, p in entries:
            q = tuple(float(v) for v in np.asarray(q, dtype=float).reshape(-1))
            if k is None:
                k = len(q)
            if len(q) != k:
                raise ValueError("menu entries must share one allocation length")
            if any(v < -1e-12 or v > 1 + 1e-12 for v in q):
                raise ValueError("menu allocations must lie in [0, 1]")
            if not math.isfinite(float(p)):
                raise ValueError("menu prices must be finite")
            rows[(q, float(p))] = None
        if k is None:
            raise ValueError("cannot infer the number of items of an empty menu")
        rows[((0.0,) * k, 0.0)] = None
        ordered = sorted(rows, key=lambda e: (e[1], e[0]))
        self.k = k
        self.q = np.array([e[0] for e in ordered], dtype=float).reshape(len(ordered), k)
        self.prices = np.array([e[1] for e in ordered], dtype=float)
        self.q.setflags(write=False)
        self.prices.setflags(write=False)

    @classmethod
    def null(cls, k: int) -> "Menu":
        return cls([], k)

    def __len__(self) -> int:
        return len(self.prices)

    def __iter__(self):
        return iter(zip(map(tuple, self.q), self.prices))

    def __eq__(self, other) -> bool:
        return isinstance(other, Menu) and self.k == other.k and np.array_equal(self.q, other.q) \
            and np.array_equal(self.prices, other.prices)

    def __repr__(self) -> str:
        return f"Menu(k={self.k}, entries={len(self)})"

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.q == 0) | (self.q == 1)))

    def to_json(self) -> dict:
        return {"entries": [{"q": [float(v) for v in q], "price": float(p)} for q, p in self]}

    @classmethod
    def from_json(cls, obj: dict) -> "Menu":
        entries = obj["entries"]
        k = len(entries[0]["q"]) if entries else None
        return cls([(e["q"], e["price"]) for e in entries], k)


@dataclass(frozen=True)
class TransformParams:
    a: float = 4.0
    b: float = 0.75

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError("a must exceed 1")
        if not 0 < self.b < 1:
            raise ValueError("b must lie in (0, 1)")
        if not self.a * self.b > 1:
            raise ValueError("b must exceed 1/a")

    @property
    def c(self) -> float:
        return 1.0 - 1.0 / (1.0 + self.a * (1.0 - self.b))

    @property
    def factor(self) -> float:
        """(b - 1/a) * c, the per-entry payment guarantee."""
        return (self.b - 1.0 / self.a) * self.c


def _choices(menu: Menu, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chosen entry index and utility per row of Z.

    Entries are sorted by (price, allocation), so the first near-maximiser is
    the lowest-price, lexicographically smallest one.
    """
    U = Z @ menu.q.T - menu.prices
    best = U.max(axis=1, keepdims=True)
    tied = U >= best - UTIL_TOL * np.maximum(1.0, np.abs(best))
    idx = np.argmax(tied, axis=1)
    return idx, U[np.arange(len(Z)), idx]


def best_response(menu: Menu, z) -> tuple[tuple[tuple, float], float]:
    """Utility-maximising entry for bid ``z`` and its utility."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != menu.k:
        raise ValueError(f"bid has {z.shape[1]} items, menu has {menu.k}")
    idx, util = _choices(menu, z)
    i = int(idx[0])
    return (tuple(float(v) for v in menu.q[i]), float(menu.prices[i])), max(float(util[0]), 0.0)


def _outcomes(menu: Menu, L):
    points, probs = as_support(L)
    idx, _ = _choices(menu, points)
    return points, probs, menu.q[idx], menu.prices[idx]


def menu_revenue(menu: Menu, L) -> float:
    _, probs, _, pay = _outcomes(menu, L)
    return math.fsum(probs * pay)


def adjusted_revenue(menu: Menu, L, beta) -> float:
    """Expected price minus the value of items handed over at or below beta."""
    points, probs, q, pay = _outcomes(menu, L)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    credit = np.sum(np.where(points <= beta, q * points, 0.0), axis=1)
    return math.fsum(probs * (pay - credit))


def _shade_factor(points, q, s, epsilon):
    """Relative price cut that breaks indifference toward the dearer entry
    without reordering strictly ranked ones."""
    U = points @ q.T - s
    gaps = []
    for row in U:
        d = np.diff(np.unique(row))
        gaps.extend(d[d > 1e-9 * max(1.0, np.abs(row).max())])
    top = float(np.max(np.abs(s), initial=0.0))
    if top == 0:
        return 0.0
    return min(epsilon, 0.5 * min(gaps, default=math.inf) / top)


def menu_from_direct(points, q, s, epsilon: float = DEFAULT_EPSILON) -> Menu:
    """Menu of a direct mechanism listed per support type.

    Prices are scaled by ``1 - delta`` with ``delta <= epsilon`` so that a type
    indifferent between its own entry and a cheaper one takes its own.
    """
    points = np.asarray(points, dtype=float)
    q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
    s = np.asarray(s, dtype=float)
    delta = _shade_factor(points, q, s, epsilon) if epsilon > 0 else 0.0
    return Menu(zip(q, s * (1.0 - delta)), points.shape[1])


def menu_from_lp(result, epsilon: float = DEFAULT_EPSILON) -> Menu:
    """Menu read off a one-bidder LP solution, one entry per support type."""
    sol = result.solution
    q = np.where(np.abs(sol["q"]) < 1e-10, 0.0, sol["q"])
    return menu_from_direct(sol["types"], q, sol["s"], epsilon)


def profitable_transform(menu: Menu, beta, params: TransformParams = TransformParams()) -> Menu:
    """Drop entries with price below ``a * beta.q`` and cut the rest to ``b`` times their price."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    keep = menu.prices >= params.a * (menu.q @ beta)
    return Menu(zip(menu.q[keep], params.b * menu.prices[keep]), menu.k)


@dataclass(frozen=True)
class PhiResult:
    """Phi_beta(M): the chosen branch, its revenue, and a menu realising it.

    ``revenue_1``/``revenue_2`` are direct evaluations of the two lifted
    mechanisms on L; ``menu_exact`` records whether the menu reproduces the
    chosen mechanism on every support point.
    """

    branch: int
    revenue: float
    revenue_1: float
    revenue_2: float
    menu: Menu
    q: np.ndarray
    s: np.ndarray
    menu_exact: bool


def _phi1(M: Menu, beta, points):
    z = np.maximum(points - beta, 0.0)
    idx, _ = _choices(M, z)
    q = np.where(z > 0, M.q[idx], 0.0)  # 0-exclusive version of M
    return q, M.prices[idx] + q @ beta


def _phi2(beta, points):
    q = (points > beta).astype(float)
    return q, q @ beta


def _posted_price_menu(beta) -> Menu:
    k = len(beta)
    return Menu(((np.array(S, dtype=float), float(np.dot(S, beta))) for S in itertools.product((0, 1), repeat=k)), k)


def phi_beta(M: Menu, beta, L) -> PhiResult:
    """Lift a menu built for ``L+_beta - beta`` to a beta-exclusive mechanism on L."""
    points, probs = as_support(L)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    q1, s1 = _phi1(M, beta, points)
    q2, s2 = _phi2(beta, points)
    r1, r2 = math.fsum(probs * s1), math.fsum(probs * s2)
    if r1 > r2:
        branch, q, s = 1, q1, s1
        menu = Menu(zip(q1, s1), len(beta))
    else:
        branch, q, s = 2, q2, s2
        menu = _posted_price_menu(beta)
    _, _, mq, mp = _outcomes(menu, DiscreteDist(points, probs))
    exact = bool(np.allclose(mp, s, atol=1e-9))
    return PhiResult(branch, max(r1, r2), r1, r2, menu, q, s, exact)

