"""Value distributions and the revenue quantities derived from them.

One-dimensional laws are :class:`Dist1D`; a bidder's k-item law is either a
:class:`ProductDist` (independent items) or a finite :class:`DiscreteDist`;
the full n x k prior is a :class:`JointValuation`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "Dist1D",
    "ProductDist",
    "DiscreteDist",
    "JointValuation",
    "DerivedQuantities",
    "OrderStats",
    "InfiniteRevenueError",
    "DiscretizeFirstError",
    "discretize",
    "r_of",
    "hat_of",
    "a_c_ell",
    "derived_quantities",
    "closed_form_revenue",
    "lift_plus",
    "lift_minus",
    "shift",
    "xi_of",
    "second_max_dist",
    "gap_tail",
    "order_statistics",
    "fact7_b",
    "fact7_b_exact",
    "as_support",
]

PROB_TOL = 1e-12
SIZE_GUARD = 10**6


class InfiniteRevenueError(ValueError):
    """Raised when sup x Pr{X >= x} cannot be bounded."""


class DiscretizeFirstError(ValueError):
    """Raised when an exact path receives a continuous distribution."""


def _fsum(values) -> float:
    return math.fsum(float(v) for v in values)


@dataclass(frozen=True)
class Dist1D:
    """A one-dimensional value distribution.

    Build instances through the classmethod constructors rather than by hand.
    ``params`` holds named parameters as sorted ``(name, value)`` pairs so the
    object stays hashable; ``base``/``power`` describe the law of the maximum
    of ``power`` iid draws of ``base`` (what :func:`hat_of` returns for
    continuous inputs).
    """

    kind: str
    atoms: tuple[tuple[float, float], ...] = ()
    params: tuple[tuple[str, float], ...] = ()
    shifted: bool = False
    base: "Dist1D | None" = field(default=None, compare=True)
    power: int = 1

    KINDS = ("discrete", "point-mass", "uniform", "exponential", "truncated-equal-revenue", "max-of")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.is_discrete:
            if not self.atoms:
                raise ValueError("discrete distribution needs at least one atom")
            vals = [a for a, _ in self.atoms]
            probs = [p for _, p in self.atoms]
            if any(not (0.0 < p <= 1.0 + PROB_TOL) for p in probs):
                raise ValueError("atom probabilities must lie in (0, 1]")
            if abs(_fsum(probs) - 1.0) > PROB_TOL:
                raise ValueError(f"atom probabilities sum to {_fsum(probs)!r}, not 1")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError("atom values must be strictly increasing")
            if not self.shifted and vals[0] < 0:
                raise ValueError("negative values are only allowed in shift-derived distributions")
        p = dict(self.params)
        if self.kind == "uniform" and not (0 <= p["lo"] < p["hi"] < math.inf):
            raise ValueError("uniform needs 0 <= lo < hi < inf")
        if self.kind == "exponential" and not p["rate"] > 0:
            raise ValueError("exponential needs rate > 0")
        if self.kind == "truncated-equal-revenue" and not p["h"] >= 1:
            raise ValueError("equal-revenue truncation point must be >= 1")
        if self.kind == "max-of" and (self.base is None or self.power < 1):
            raise ValueError("max-of needs a base distribution and power >= 1")

    # -- constructors -----------------------------------------------------

    @classmethod
    def discrete(cls, atoms, *, shifted: bool = False) -> "Dist1D":
        """Build from ``(value, prob)`` pairs; merges repeats, drops zero mass."""
        merged: dict[float, float] = {}
        for v, p in atoms:
            if p < 0:
                raise ValueError("negative probability")
            if p == 0:
                continue
            merged[float(v)] = merged.get(float(v), 0.0) + float(p)
        items = tuple(sorted(merged.items()))
        if len(items) == 1:
            return cls("point-mass", ((items[0][0], 1.0),), shifted=shifted)
        return cls("discrete", items, shifted=shifted)

    @classmethod
    def point_mass(cls, value: float) -> "Dist1D":
        return cls("point-mass", ((float(value), 1.0),), shifted=value < 0)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "Dist1D":
        return cls("uniform", params=(("hi", float(hi)), ("lo", float(lo))))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "Dist1D":
        return cls("exponential", params=(("rate", float(rate)),))

    @classmethod
    def equal_revenue(cls, h: float = math.inf) -> "Dist1D":
        """F(x) = 1 - 1/x on [1, h) with the remaining mass 1/h at h."""
        return cls("truncated-equal-revenue", params=(("h", float(h)),))

    # -- basic properties -------------------------------------------------

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("discrete", "point-mass")

    @cached_property
    def values(self) -> np.ndarray:
        self._require_discrete()
        return np.array([a for a, _ in self.atoms], dtype=float)

    @cached_property
    def probs(self) -> np.ndarray:
        self._require_discrete()
        return np.array([p for _, p in self.atoms], dtype=float)

    def _require_discrete(self):
        if not self.is_discrete:
            raise DiscretizeFirstError(f"{self.kind} distribution: discretize first")

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    @property
    def lower(self) -> float:
        if self.is_discrete:
            return float(self.atoms[0][0])
        if self.kind == "uniform":
            return self.param("lo")
        if self.kind == "truncated-equal-revenue":
            return 1.0
        if self.kind == "max-of":
            return self.base.lower
        return 0.0

    @property
    def upper(self) -> float:
        if self.is_discrete:
            return float(self.atoms[-1][0])
        if self.kind == "uniform":
            return self.param("hi")
        if self.kind == "truncated-equal-revenue":
            return self.param("h")
        if self.kind == "max-of":
            return self.base.upper
        return math.inf

    def cdf(self, x):
        """Right-continuous CDF, vectorised over ``x``."""
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            cum = np.cumsum(self.probs)
            idx = np.searchsorted(self.values, x, side="right")
            out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
            return np.minimum(out, 1.0)
        if self.kind == "uniform":
            lo, hi = self.param("lo"), self.param("hi")
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        if self.kind == "exponential":
            return np.where(x > 0, -np.expm1(-self.param("rate") * np.maximum(x, 0)), 0.0)
        if self.kind == "truncated-equal-revenue":
            h = self.param("h")
            with np.errstate(divide="ignore"):
                body = 1.0 - 1.0 / np.maximum(x, 1.0)
            return np.where(x < 1.0, 0.0, np.where(x >= h, 1.0, body))
        return np.asarray(self.base.cdf(x)) ** self.power

    def sf(self, x):
        """Pr{X > x}, computed without cancellation in the far tail."""
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            return 1.0 - self.cdf(x)
        if self.kind == "uniform":
            lo, hi = self.param("lo"), self.param("hi")
            return np.clip((hi - x) / (hi - lo), 0.0, 1.0)
        if self.kind == "exponential":
            return np.where(x > 0, np.exp(-self.param("rate") * np.maximum(x, 0)), 1.0)
        if self.kind == "truncated-equal-revenue":
            h = self.param("h")
            return np.where(x < 1.0, 1.0, np.where(x >= h, 0.0, 1.0 / np.maximum(x, 1.0)))
        return _max_of_tail(np.asarray(self.base.sf(x)), self.power)

    def sf_ge(self, x):
        """Pr{X >= x} (left limit of the survival function)."""
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            idx = np.searchsorted(self.values, x, side="left")
            tail = np.concatenate([np.cumsum(self.probs[::-1])[::-1], [0.0]])
            return np.minimum(tail[idx], 1.0)
        if self.kind == "truncated-equal-revenue":
            h = self.param("h")
            return np.where(x <= 1.0, 1.0, np.where(x > h, 0.0, 1.0 / np.maximum(x, 1.0)))
        if self.kind == "max-of" and self.base.kind == "truncated-equal-revenue":
            return _max_of_tail(np.asarray(self.base.sf_ge(x)), self.power)
        return self.sf(x)

    def ppf(self, u):
        """Smallest x with F(x) >= u."""
        u = np.asarray(u, dtype=float)
        if self.is_discrete:
            cum = np.cumsum(self.probs)
            cum[-1] = 1.0
            idx = np.searchsorted(cum, u - 1e-15, side="left")
            return self.values[np.minimum(idx, len(cum) - 1)]
        if self.kind == "uniform":
            lo, hi = self.param("lo"), self.param("hi")
            return lo + u * (hi - lo)
        if self.kind == "exponential":
            return -np.log1p(-np.minimum(u, 1 - 1e-300)) / self.param("rate")
        if self.kind == "truncated-equal-revenue":
            h = self.param("h")
            with np.errstate(divide="ignore"):
                x = 1.0 / np.maximum(1.0 - u, 0.0)
            return np.minimum(x, h)
        return self.base.ppf(u ** (1.0 / self.power))

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_discrete:
            return rng.choice(self.values, size=size, p=self.probs)
        return self.ppf(rng.random(size))

    def mean(self) -> float:
        if self.is_discrete:
            return _fsum(self.values * self.probs)
        if self.kind == "uniform":
            return 0.5 * (self.param("lo") + self.param("hi"))
        if self.kind == "exponential":
            return 1.0 / self.param("rate")
        if self.kind == "truncated-equal-revenue":
            h = self.param("h")
            if math.isinf(h):
                return math.inf
            return 1.0 + math.log(h)
        return _integral_sf(self, 0.0, self.upper)

    def to_json(self) -> dict:
        if self.is_discrete:
            return {"kind": "discrete", "atoms": [[a, p] for a, p in self.atoms], "shifted": self.shifted}
        if self.kind == "max-of":
            return {"kind": "max-of", "base": self.base.to_json(), "n": self.power}
        out = {"kind": self.kind}
        out.update(dict(self.params))
        return out

    @classmethod
    def from_json(cls, spec: dict) -> "Dist1D":
        kind = spec["kind"]
        if kind == "discrete":
            return cls.discrete([tuple(a) for a in spec["atoms"]], shifted=bool(spec.get("shifted", False)))
        if kind == "point-mass":
            return cls.point_mass(spec["value"])
        if kind == "uniform":
            return cls.uniform(spec.get("lo", 0.0), spec.get("hi", 1.0))
        if kind == "exponential":
            return cls.exponential(spec.get("rate", 1.0))
        if kind == "truncated-equal-revenue":
            return cls.equal_revenue(spec.get("h", math.inf))
        if kind == "max-of":
            return hat_of(cls.from_json(spec["base"]), int(spec["n"]))
        raise ValueError(f"unknown distribution kind {kind!r}")


def _max_of_tail(base_tail: np.ndarray, power: int) -> np.ndarray:
    """1 - (1 - t)**power via log1p/expm1."""
    t = np.clip(base_tail, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        return np.where(t >= 1.0, 1.0, -np.expm1(power * np.log1p(-np.minimum(t, 1.0 - 1e-300))))


def discretize(F: Dist1D, n_atoms: int = 64) -> Dist1D:
    """Quantile-grid discretisation: atoms at the mid-quantiles of ``F``."""
    if F.is_discrete:
        return F
    u = (np.arange(n_atoms) + 0.5) / n_atoms
    return Dist1D.discrete(zip(F.ppf(u), np.full(n_atoms, 1.0 / n_atoms)))


def _integral_sf(F: Dist1D, lo: float, hi: float) -> float:
    """Integral of Pr{X > x} over [lo, hi]."""
    if hi <= lo:
        return 0.0
    if F.is_discrete:
        vals = F.values
        inner = vals[(vals > lo) & (vals < hi)]
        knots = np.concatenate([[lo], inner, [hi]])
        return _fsum(np.diff(knots) * F.sf(knots[:-1]))
    points = None
    if F.kind == "truncated-equal-revenue" or (F.kind == "max-of" and F.base.kind == "truncated-equal-revenue"):
        points = [p for p in (1.0, F.upper) if lo < p < hi]
    if math.isinf(hi):
        val, _ = integrate.quad(lambda x: float(F.sf(x)), lo, hi, epsabs=1e-11, epsrel=1e-11, limit=500)
        return val
    val, _ = integrate.quad(
        lambda x: float(F.sf(x)), lo, hi, points=points, epsabs=1e-11, epsrel=1e-11, limit=500
    )
    return val


# -- derived revenue quantities --------------------------------------------


def r_of(F: Dist1D) -> float:
    """Monopoly revenue sup_{x >= 0} x Pr{X >= x}."""
    if F.is_discrete:
        vals = F.values
        keep = vals >= 0
        if not keep.any():
            return 0.0
        return max(0.0, float(np.max(vals[keep] * F.sf_ge(vals[keep]))))
    if F.kind == "uniform":
        lo, hi = F.param("lo"), F.param("hi")
        x = max(lo, hi / 2.0)
        return x * (hi - x) / (hi - lo)
    if F.kind == "exponential":
        return 1.0 / (math.e * F.param("rate"))
    if F.kind == "truncated-equal-revenue":
        return 1.0
    if F.kind == "max-of" and F.base.kind == "truncated-equal-revenue" and math.isinf(F.base.param("h")):
        # x (1 - (1 - 1/x)^n) increases to n and never attains it
        return float(F.power)
    return _r_numeric(F)


def _r_numeric(F: Dist1D) -> float:
    upper = F.upper
    if math.isinf(upper):
        upper = float(F.ppf(1.0 - 1e-12))
    def revenue(x):
        return x * float(F.sf_ge(x))
    grid = np.linspace(0.0, upper, 4001)
    vals = grid * F.sf_ge(grid)
    i = int(np.argmax(vals))
    if i == len(grid) - 1 and math.isinf(F.upper):
        raise InfiniteRevenueError("x Pr{X >= x} still increasing at the top of the search bracket")
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda x: -revenue(x), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, hi)})
    return max(float(vals[i]), -float(res.fun))


def hat_of(F: Dist1D, n: int) -> Dist1D:
    """Law of the maximum of ``n`` iid draws of ``F``, i.e. F(x)**n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return F
    if F.is_discrete:
        cum = np.cumsum(F.probs)
        cum[-1] = 1.0
        prev = np.concatenate([[0.0], cum[:-1]])
        return Dist1D.discrete(zip(F.values, cum**n - prev**n), shifted=F.shifted)
    if F.kind == "max-of":
        return Dist1D("max-of", base=F.base, power=F.power * n)
    return Dist1D("max-of", base=F, power=n)


@dataclass(frozen=True)
class DerivedQuantities:
    r: float
    a_ell: float
    c_ell: float
    ell: int


def a_c_ell(F: Dist1D, ell: int) -> tuple[float, float]:
    """Return ``(A_ell, C_ell)``: r + int_0^{ell r}(1-F) and int_0^{ell r} x dF."""
    if ell < 1:
        raise ValueError("ell must be a positive integer")
    r = r_of(F)
    b = ell * r
    tail = _integral_sf(F, 0.0, b)
    if F.is_discrete:
        vals, probs = F.values, F.probs
        mask = (vals > 0) & (vals <= b * (1 + 1e-12))
        c = _fsum(vals[mask] * probs[mask])
    else:
        # integration by parts on [0, b] with right-continuous F
        c = tail - b * float(F.sf(b))
    return r + tail, max(c, 0.0)


def derived_quantities(F: Dist1D, ell: int) -> DerivedQuantities:
    a, c = a_c_ell(F, ell)
    return DerivedQuantities(r=r_of(F), a_ell=a, c_ell=c, ell=ell)


def closed_form_revenue(F: Dist1D, n: int, k: int) -> float:
    """k * A_m(F-hat) with m = ceil(k / n)."""
    m = -(-k // n)
    a, _ = a_c_ell(hat_of(F, n), m)
    return k * a


# -- product / finite joint laws for a single bidder ------------------------


@dataclass(frozen=True)
class ProductDist:
    """Independent items, one :class:`Dist1D` per coordinate."""

    items: tuple[Dist1D, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    @property
    def k(self) -> int:
        return len(self.items)

    @property
    def is_discrete(self) -> bool:
        return all(d.is_discrete for d in self.items)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        for d in self.items:
            d._require_discrete()
        size = math.prod(len(d.values) for d in self.items)
        if size > SIZE_GUARD:
            raise ValueError(f"product support of {size} points exceeds guard {SIZE_GUARD}")
        grids = np.meshgrid(*[d.values for d in self.items], indexing="ij")
        pgrids = np.meshgrid(*[d.probs for d in self.items], indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        probs = np.prod(np.stack([g.ravel() for g in pgrids], axis=1), axis=1)
        return points, probs

    def sample(self, rng, size: int) -> np.ndarray:
        return np.stack([d.sample(rng, size) for d in self.items], axis=-1)

    def to_json(self) -> dict:
        return {"items": [d.to_json() for d in self.items]}


class DiscreteDist:
    """Finite distribution over R^k given by support points and masses."""

    def __init__(self, points, probs, *, merge: bool = True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        probs = np.asarray(probs, dtype=float)
        if points.shape[0] != probs.shape[0]:
            raise ValueError("points and probs disagree in length")
        if np.any(probs < 0):
            raise ValueError("negative probability")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {probs.sum()!r}")
        keep = probs > 0
        points, probs = points[keep], probs[keep]
        if merge and len(points):
            uniq, inv = np.unique(points, axis=0, return_inverse=True)
            merged = np.zeros(len(uniq))
            np.add.at(merged, inv.ravel(), probs)
            points, probs = uniq, merged
        self.points = points
        self.probs = probs / probs.sum()
        self.points.setflags(write=False)
        self.probs.setflags(write=False)

    @property
    def k(self) -> int:
        return self.points.shape[1]

    is_discrete = True

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points, self.probs

    def sample(self, rng, size: int) -> np.ndarray:
        return self.points[rng.choice(len(self.probs), size=size, p=self.probs)]

    def marginal(self, j: int) -> Dist1D:
        return Dist1D.discrete(zip(self.points[:, j], self.probs), shifted=bool(np.any(self.points[:, j] < 0)))

    def key(self) -> tuple:
        return (self.points.tobytes(), self.probs.round(15).tobytes(), self.points.shape)

    def __repr__(self):
        return f"DiscreteDist(m={len(self.probs)}, k={self.k})"


def as_support(L) -> tuple[np.ndarray, np.ndarray]:
    """(points, probs) for a ProductDist, DiscreteDist, or sequence of Dist1D."""
    if isinstance(L, (list, tuple)):
        L = ProductDist(tuple(L))
    if isinstance(L, Dist1D):
        L = ProductDist((L,))
    if not getattr(L, "is_discrete", False):
        raise DiscretizeFirstError("continuous distribution: discretize first")
    return L.support()


# -- distribution transforms ------------------------------------------------


def _items_of(L) -> tuple[Dist1D, ...]:
    if isinstance(L, ProductDist):
        return L.items
    if isinstance(L, Dist1D):
        return (L,)
    return tuple(L)


def _check_beta(beta, k: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (k,):
        raise ValueError(f"beta has length {beta.size}, expected {k}")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite and componentwise >= 0")
    return beta


def xi_of(L, beta) -> np.ndarray:
    """Per-item probabilities Pr{Y^j > beta^j}."""
    items = _items_of(L)
    beta = _check_beta(beta, len(items))
    return np.array([float(d.sf(b)) for d, b in zip(items, beta)])


def _lift(L, beta, floor_at_beta: bool) -> ProductDist:
    items = _items_of(L)
    beta = _check_beta(beta, len(items))
    out = []
    for d, b in zip(items, beta):
        if not d.is_discrete:
            raise DiscretizeFirstError("lifting a continuous law has no exact conditional: discretize first")
        upper = d.values > b
        low_mass = 1.0 - _fsum(d.probs[upper])
        atoms = list(zip(d.values[upper], d.probs[upper]))
        atoms.append((b if floor_at_beta else 0.0, low_mass))
        out.append(Dist1D.discrete(atoms))
    return ProductDist(tuple(out))


def lift_plus(L, beta) -> ProductDist:
    """Keep each coordinate above beta^j, move the rest to an atom at beta^j."""
    return _lift(L, beta, True)


def lift_minus(L, beta) -> ProductDist:
    """Keep each coordinate above beta^j, move the rest to an atom at 0."""
    return _lift(L, beta, False)


def shift(L, beta) -> ProductDist:
    """Subtract beta^j from every value of coordinate j."""
    items = _items_of(L)
    beta = _check_beta(beta, len(items))
    out = []
    for d, b in zip(items, beta):
        d._require_discrete()
        out.append(Dist1D.discrete(zip(d.values - b, d.probs), shifted=True))
    return ProductDist(tuple(out))


def shift_joint(L: DiscreteDist, beta) -> DiscreteDist:
    """Shift a finite joint law by beta (negative values allowed)."""
    beta = _check_beta(beta, L.k)
    return DiscreteDist(L.points - beta, L.probs)


# -- the n x k prior --------------------------------------------------------


class JointValuation:
    """Prior over n x k valuation matrices.

    Three models: ``grid`` (an n x k array of independent cells), ``iid``
    (every cell equal to one :class:`Dist1D`), and ``table`` (an explicit
    finite list of matrices with probabilities).
    """

    def __init__(self, model: str, *, grid=None, dist=None, n=None, k=None,
                 matrices=None, probs=None, item_independent: bool | None = None):
        self.model = model
        if model == "iid":
            if dist is None or n is None or k is None or n < 1 or k < 1:
                raise ValueError("iid model needs dist, n >= 1, k >= 1")
            self.dist = dist
            self.grid = tuple(tuple(dist for _ in range(k)) for _ in range(n))
        elif model == "grid":
            self.grid = tuple(tuple(row) for row in grid)
            if not self.grid or not self.grid[0] or len({len(r) for r in self.grid}) != 1:
                raise ValueError("grid must be a non-empty rectangular n x k array of Dist1D")
            self.dist = None
        elif model == "table":
            mats = np.asarray(matrices, dtype=float)
            if mats.ndim != 3:
                raise ValueError("table matrices must have shape (M, n, k)")
            p = np.asarray(probs, dtype=float)
            if abs(p.sum() - 1.0) > PROB_TOL * max(1, len(p)):
                raise ValueError(f"table probabilities sum to {p.sum()!r}")
            if np.any(mats < 0):
                raise ValueError("valuation matrices must be nonnegative")
            keep = p > 0
            mats, p = mats[keep], p[keep]
            uniq, inv = np.unique(mats.reshape(len(mats), -1), axis=0, return_inverse=True)
            merged = np.zeros(len(uniq))
            np.add.at(merged, inv.ravel(), p)
            self._matrices = uniq.reshape(-1, mats.shape[1], mats.shape[2])
            self._probs = merged / merged.sum()
            self.grid = None
            self.dist = None
        else:
            raise ValueError(f"unknown joint model {model!r}")
        if self.grid is not None:
            for row in self.grid:
                for d in row:
                    if d.shifted or d.lower < 0:
                        raise ValueError("n-bidder cells must have nonnegative support")
        self._item_independent = item_independent

    # constructors
    @classmethod
    def iid(cls, F: Dist1D, n: int, k: int) -> "JointValuation":
        return cls("iid", dist=F, n=n, k=k)

    @classmethod
    def from_grid(cls, grid) -> "JointValuation":
        return cls("grid", grid=grid)

    @classmethod
    def from_table(cls, matrices, probs, item_independent: bool | None = None) -> "JointValuation":
        return cls("table", matrices=matrices, probs=probs, item_independent=item_independent)

    @classmethod
    def from_columns(cls, columns: Sequence[DiscreteDist]) -> "JointValuation":
        """Item-independent prior: column j (a law over R^n) drawn independently."""
        supports = [c.support() for c in columns]
        idx = itertools.product(*[range(len(p)) for _, p in supports])
        mats, probs = [], []
        for combo in idx:
            mats.append(np.stack([supports[j][0][t] for j, t in enumerate(combo)], axis=1))
            probs.append(math.prod(supports[j][1][t] for j, t in enumerate(combo)))
        probs = np.array(probs)
        return cls.from_table(np.array(mats), probs / probs.sum(), item_independent=True)

    # shape / flags
    @property
    def n(self) -> int:
        return len(self.grid) if self.grid is not None else self._matrices.shape[1]

    @property
    def k(self) -> int:
        return len(self.grid[0]) if self.grid is not None else self._matrices.shape[2]

    @property
    def is_discrete(self) -> bool:
        if self.grid is None:
            return True
        return all(d.is_discrete for row in self.grid for d in row)

    @property
    def item_independent(self) -> bool:
        if self.grid is not None:
            return True
        if self._item_independent is None:
            self._item_independent = self._detect_independence(axis="item")
        return self._item_independent

    @property
    def bidder_independent(self) -> bool:
        if self.grid is not None:
            return True
        return self._detect_independence(axis="bidder")

    @property
    def cells_independent(self) -> bool:
        if self.grid is not None:
            return True
        return self._detect_independence(axis="cell")

    def _detect_independence(self, axis: str) -> bool:
        mats, probs = self.support()
        n, k = self.n, self.k
        if axis == "item":
            blocks = [mats[:, :, j].reshape(len(mats), -1) for j in range(k)]
        elif axis == "bidder":
            blocks = [mats[:, i, :].reshape(len(mats), -1) for i in range(n)]
        else:
            blocks = [mats[:, i, j].reshape(len(mats), 1) for i in range(n) for j in range(k)]
        marg = []
        for b in blocks:
            uniq, inv = np.unique(b, axis=0, return_inverse=True)
            m = np.zeros(len(uniq))
            np.add.at(m, inv.ravel(), probs)
            marg.append((uniq, inv.ravel(), m))
        if math.prod(len(u) for u, _, _ in marg) != len(probs):
            return False
        prod = np.ones(len(probs))
        for _, inv, m in marg:
            prod *= m[inv]
        return bool(np.allclose(prod, probs, atol=1e-12))

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """All support matrices (M, n, k) with their probabilities."""
        if self.grid is None:
            return self._matrices, self._probs
        cells = [d for row in self.grid for d in row]
        for d in cells:
            d._require_discrete()
        size = math.prod(len(d.values) for d in cells)
        if size > SIZE_GUARD:
            raise ValueError(f"joint support of {size} matrices exceeds guard {SIZE_GUARD}")
        vals = np.meshgrid(*[d.values for d in cells], indexing="ij")
        prbs = np.meshgrid(*[d.probs for d in cells], indexing="ij")
        mats = np.stack([v.ravel() for v in vals], axis=1).reshape(-1, self.n, self.k)
        probs = np.prod(np.stack([p.ravel() for p in prbs], axis=1), axis=1)
        return mats, probs

    def support_size(self) -> int:
        if self.grid is None:
            return len(self._probs)
        return math.prod(len(d.values) if d.is_discrete else math.inf for row in self.grid for d in row)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.grid is None:
            return self._matrices[rng.choice(len(self._probs), size=size, p=self._probs)]
        out = np.empty((size, self.n, self.k))
        for i, row in enumerate(self.grid):
            for j, d in enumerate(row):
                out[:, i, j] = d.sample(rng, size)
        return out

    def bidder_types(self, i: int) -> np.ndarray:
        """Distinct rows bidder ``i`` can hold (the support grid)."""
        if self.grid is not None:
            pts, _ = ProductDist(self.grid[i]).support()
            return pts
        return np.unique(self._matrices[:, i, :], axis=0)

    def bidder_marginal(self, i: int):
        if self.grid is not None:
            return ProductDist(self.grid[i])
        return DiscreteDist(self._matrices[:, i, :], self._probs)

    def others(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Support of x_{-i} as (M', n-1, k) with probabilities."""
        if self.grid is not None:
            rows = [r for t, r in enumerate(self.grid) if t != i]
            if not rows:
                return np.zeros((1, 0, self.k)), np.ones(1)
            sub = JointValuation.from_grid(rows)
            return sub.support()
        if self.n == 1:
            return np.zeros((1, 0, self.k)), np.ones(1)
        rest = np.delete(self._matrices, i, axis=1)
        flat = rest.reshape(len(rest), -1)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        p = np.zeros(len(uniq))
        np.add.at(p, inv.ravel(), self._probs)
        return uniq.reshape(-1, self.n - 1, self.k), p

    def conditional(self, i: int, x_minus_i) -> DiscreteDist | ProductDist:
        """Law of X_i given x_{-i}; raises on zero-probability slices."""
        if self.grid is not None:
            return ProductDist(self.grid[i])
        rest = np.asarray(x_minus_i, dtype=float).reshape(self.n - 1, self.k)
        others = np.delete(self._matrices, i, axis=1)
        mask = np.all(np.isclose(others, rest[None], rtol=0, atol=1e-12), axis=(1, 2))
        if not mask.any():
            raise ValueError(f"zero-probability conditioning slice for bidder {i}")
        p = self._probs[mask]
        return DiscreteDist(self._matrices[mask, i, :], p / p.sum())

    def column(self, j: int) -> DiscreteDist:
        """Law of item j's column (a distribution over R^n)."""
        if self.grid is not None:
            return DiscreteDist(*ProductDist(tuple(row[j] for row in self.grid)).support())
        return DiscreteDist(self._matrices[:, :, j], self._probs)

    def to_json(self) -> dict:
        if self.model == "iid":
            return {"iid": {"dist": self.dist.to_json(), "n": self.n, "k": self.k}}
        if self.model == "grid":
            return {"grid": [[d.to_json() for d in row] for row in self.grid]}
        return {"table": [[m.tolist(), float(p)] for m, p in zip(self._matrices, self._probs)],
                "item_independent": self._item_independent}

    def __repr__(self):
        return f"JointValuation(model={self.model!r}, n={self.n}, k={self.k})"


# -- order statistics -------------------------------------------------------


def second_highest(x: np.ndarray, axis: int = -2) -> np.ndarray:
    """Multiset 2nd order statistic along ``axis``; 0 for a singleton."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 2:
        return np.zeros(np.delete(x.shape, axis % x.ndim))
    return -np.partition(-x, 1, axis=axis).take(1, axis=axis)


def second_max_dist(F: Dist1D, n: int) -> Dist1D:
    """V_F: the second largest of ``n`` iid draws of a discrete ``F``."""
    F._require_discrete()
    if n == 1:
        return Dist1D.point_mass(0.0)
    cum = np.cumsum(F.probs)
    cum[-1] = 1.0
    G = cum**n + n * cum ** (n - 1) * (1 - cum)
    prev = np.concatenate([[0.0], G[:-1]])
    return Dist1D.discrete(zip(F.values, G - prev))


def _w_v_joint(F: Dist1D, n: int) -> list[tuple[float, float, float]]:
    """Exact joint pmf of (W_F, V_F) for discrete F as (w, v, prob) triples."""
    vals, p = F.values, F.probs
    cum = np.cumsum(p)
    cum[-1] = 1.0
    prev = np.concatenate([[0.0], cum[:-1]])
    out = []
    if n == 1:
        return [(float(a), 0.0, float(q)) for a, q in zip(vals, p)]
    for s in range(len(vals)):
        for t in range(s):
            mass = n * p[s] * (cum[t] ** (n - 1) - prev[t] ** (n - 1))
            if mass > 0:
                out.append((float(vals[s]), float(vals[t]), float(mass)))
        tie = cum[s] ** n - prev[s] ** n - n * p[s] * prev[s] ** (n - 1)
        if tie > 0:
            out.append((float(vals[s]), float(vals[s]), float(tie)))
    return out


def gap_tail(F: Dist1D, n: int, t: float) -> float:
    """Pr{W_F - V_F >= t} for n iid draws of F."""
    if F.is_discrete:
        return _fsum(m for w, v, m in _w_v_joint(F, n) if w - v >= t - 1e-12 * max(1.0, abs(t)))
    if n == 1:
        return float(F.sf_ge(t))

    def integrand(v):
        dens = _density(F, v)
        return dens * float(F.cdf(v)) ** (n - 2) * float(F.sf_ge(v + t))

    hi = F.upper if math.isfinite(F.upper) else float(F.ppf(1 - 1e-14))
    val, _ = integrate.quad(integrand, F.lower, hi, epsabs=1e-11, limit=500)
    return n * (n - 1) * val


def _density(F: Dist1D, x: float) -> float:
    if F.kind == "uniform":
        lo, hi = F.param("lo"), F.param("hi")
        return 1.0 / (hi - lo) if lo <= x <= hi else 0.0
    if F.kind == "exponential":
        lam = F.param("rate")
        return lam * math.exp(-lam * x) if x >= 0 else 0.0
    if F.kind == "truncated-equal-revenue":
        return 1.0 / (x * x) if 1.0 <= x < F.param("h") else 0.0
    if F.kind == "max-of":
        return F.power * float(F.base.cdf(x)) ** (F.power - 1) * _density(F.base, x)
    raise DiscretizeFirstError("no density for a discrete law")


def second_max_mean(F: Dist1D, n: int) -> float:
    """E(V_F)."""
    if n == 1:
        return 0.0
    if F.is_discrete:
        return second_max_dist(F, n).mean()

    def sf_v(x):
        c = float(F.cdf(x))
        return 1.0 - (c**n + n * c ** (n - 1) * (1 - c))

    hi = F.upper if math.isfinite(F.upper) else math.inf
    val, _ = integrate.quad(sf_v, 0.0, hi, epsabs=1e-11, limit=500)
    return val


@dataclass
class OrderStats:
    """Column order statistics of a prior.

    ``stderr`` is ``None`` for exact enumeration, else the Monte Carlo
    standard error of ``e_second_total``. ``w_dist``/``v_dist``/``q0`` are
    only filled in for iid priors.
    """

    e_second: np.ndarray
    e_second_total: float
    stderr: float | None = None
    w_dist: Dist1D | None = None
    v_dist: Dist1D | None = None
    q0: Callable[[float], float] | None = None


def order_statistics(FJ: JointValuation, *, n_samples: int = 100_000, seed: int = 0) -> OrderStats:
    """E[X^{j[2nd]}] per item and in total, exact on discrete priors."""
    w_dist = v_dist = q0 = None
    if FJ.model == "iid":
        F, n = FJ.dist, FJ.n
        w_dist = hat_of(F, n)
        if F.is_discrete:
            v_dist = second_max_dist(F, n)
        q0 = lambda u: gap_tail(F, n, u / 2.0)  # noqa: E731
    if FJ.is_discrete:
        e2 = np.zeros(FJ.k)
        for j in range(FJ.k):
            if FJ.model == "iid":
                e2[j] = v_dist.mean()
                continue
            pts, probs = FJ.column(j).support()
            e2[j] = _fsum(second_highest(pts, axis=1) * probs)
        return OrderStats(e2, _fsum(e2), None, w_dist, v_dist, q0)
    from .mc import substream  # local import: mc depends on this module

    x = FJ.sample(substream(seed, 0), n_samples)
    sec = second_highest(x, axis=1)
    tot = sec.sum(axis=1)
    return OrderStats(sec.mean(axis=0), float(tot.mean()),
                      float(tot.std(ddof=1) / math.sqrt(n_samples)), w_dist, v_dist, q0)


# -- Fact 7 ----------------------------------------------------------------


def fact7_b_exact(n: int, k: int) -> Fraction:
    """b_{n,k} = Pr{Bin(k, 1/n) >= ceil(k/n)} as an exact rational."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    m = -(-k // n)
    num = sum(math.comb(k, l) * (n - 1) ** (k - l) for l in range(m, k + 1))
    return Fraction(num, n**k)


def fact7_b(n: int, k: int) -> float:
    return float(fact7_b_exact(n, k))
