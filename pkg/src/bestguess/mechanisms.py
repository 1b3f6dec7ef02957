"""n-bidder mechanisms: Vickrey, M_{beta,w}, beta-Bundling, DBGR/BG selection, SPB.

The functional core (``vickrey``, ``m_beta_w``, ``bund_optimize``, ``dbgr``,
``spb`` ...) is wrapped by scikit-learn style estimators: ``fit`` takes the
prior (a :class:`~bestguess.valuedist.JointValuation`, or a one-bidder law for
:class:`BetaBundling`), ``predict`` maps bid matrices to allocations, and
``outcome``/``revenue`` expose payments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_beta, check_bid, check_nonneg, check_tie_rule, check_valuation_matrix
from .valuedist import (
    DiscreteDist,
    Dist1D,
    JointValuation,
    a_c_ell,
    as_support,
    gap_tail,
    hat_of,
    order_statistics,
    r_of,
    second_highest,
    second_max_mean,
)

__all__ = [
    "Outcome",
    "BundlingParams",
    "vickrey",
    "vickrey_expected",
    "m_beta_w",
    "bundling_revenue",
    "bund_optimize",
    "dbgr",
    "dbgr_bidder",
    "bg_select",
    "spb",
    "spb_expected",
    "spb_batch_revenue",
    "spb_w_rule",
    "spb_choose_w",
    "spb_w_grid",
    "expected_revenue",
    "VickreyAuction",
    "BetaBundling",
    "DeterministicBestGuess",
    "BestGuess",
    "SecondPriceBundling",
    "make_mechanism",
]

SURPLUS_TOL = 1e-12


def _accepts(surplus, w):
    """``surplus >= w`` up to float noise in the summation."""
    return surplus >= w - SURPLUS_TOL * np.maximum(1.0, np.abs(w))


@dataclass
class Outcome:
    """Allocation probabilities ``q`` (n x k) and payments ``s`` (n)."""

    q: np.ndarray
    s: np.ndarray

    @property
    def revenue(self) -> float:
        return float(math.fsum(self.s))

    def utilities(self, x) -> np.ndarray:
        return np.sum(np.asarray(x) * self.q, axis=1) - self.s

    def check(self, x=None, tol: float = 1e-9) -> None:
        if np.any(self.q.sum(axis=0) > 1 + 1e-12):
            raise AssertionError("an item is allocated with total probability above 1")
        if x is not None and np.any(self.utilities(x) < -tol):
            raise AssertionError("a truthful bidder ends with negative utility")

    def to_json(self) -> dict:
        return {"q": self.q.tolist(), "s": self.s.tolist(), "revenue": self.revenue}


# -- Vickrey ------------------------------------------------------------------


def _winners(x: np.ndarray, tie_rule: str, rng=None) -> np.ndarray:
    """Index of the selected maximum bidder per item; x has shape (..., n, k)."""
    if tie_rule == "lowest-index":
        return np.argmax(x, axis=-2)
    if rng is None:
        raise ValueError("uniform-random tie rule needs a random generator")
    top = x == x.max(axis=-2, keepdims=True)
    keys = rng.random(x.shape)
    return np.argmax(np.where(top, keys, -1.0), axis=-2)


def vickrey(x, tie_rule: str = "lowest-index", rng: np.random.Generator | None = None) -> Outcome:
    """Separate second-price auctions, one per item."""
    x = check_valuation_matrix(x)
    check_tie_rule(tie_rule)
    n, k = x.shape
    win = _winners(x, tie_rule, rng)
    sec = second_highest(x, axis=0)
    q = np.zeros((n, k))
    q[win, np.arange(k)] = 1.0
    s = np.zeros(n)
    np.add.at(s, win, sec)
    return Outcome(q, s)


def _tie_resolutions(x: np.ndarray):
    """Yield (winner vector, probability) over uniform tie draws."""
    top = x == x.max(axis=0, keepdims=True)
    sets = [np.nonzero(top[:, j])[0] for j in range(x.shape[1])]
    weight = 1.0 / math.prod(len(s) for s in sets)
    for combo in itertools.product(*sets):
        yield np.array(combo), weight


def vickrey_expected(x) -> Outcome:
    """Vickrey outcome averaged exactly over uniform-random tie draws."""
    x = check_valuation_matrix(x)
    n, k = x.shape
    sec = second_highest(x, axis=0)
    q = np.zeros((n, k))
    s = np.zeros(n)
    for win, wt in _tie_resolutions(x):
        q[win, np.arange(k)] += wt
        np.add.at(s, win, wt * sec)
    return Outcome(q, s)


# -- M_{beta, w} and beta-Bundling -------------------------------------------


def _surplus(z: np.ndarray, beta: np.ndarray):
    above = z > beta
    return np.sum(np.where(above, z - beta, 0.0), axis=-1), np.sum(np.where(above, beta, 0.0), axis=-1), above


def m_beta_w(beta, w: float, z) -> tuple[np.ndarray, float]:
    """Take-or-leave offer of every item bid strictly above its threshold.

    Returns the 0/1 allocation vector and the payment ``w + sum beta^j`` over
    the offered items, or nothing when the bundle surplus falls short of ``w``.
    """
    z = check_bid(z)
    beta = check_beta(beta, z.size)
    w = check_nonneg(w, "w")
    surplus, base, above = _surplus(z, beta)
    if _accepts(surplus, w):
        return above.astype(float), float(w + base)
    return np.zeros(z.size), 0.0


def bundling_revenue(L, beta_bar, w_bar: float) -> float:
    """Expected revenue of M_{beta_bar, w_bar} on a discrete one-bidder law."""
    points, probs = as_support(L)
    beta_bar = check_beta(beta_bar, points.shape[1])
    surplus, base, _ = _surplus(points, beta_bar)
    pay = np.where(_accepts(surplus, w_bar), w_bar + base, 0.0)
    return math.fsum(probs * pay)


@dataclass(frozen=True)
class BundlingParams:
    """Optimised (beta_bar, w_bar) in R(beta) for one one-bidder law.

    ``branch`` is ``"w"`` when beta_bar == beta (surcharge branch) and
    ``"beta"`` when w_bar == 0; ``sup_revenue`` is the supremum the realised
    thresholds approach from below.
    """

    beta_bar: tuple
    w_bar: float
    branch: str
    sup_revenue: float = field(default=0.0, compare=False)
    heuristic: bool = False

    def offer(self, z) -> tuple[np.ndarray, float]:
        return m_beta_w(np.array(self.beta_bar), self.w_bar, z)


def bund_optimize(L, beta, epsilon: float = 1e-9) -> tuple[BundlingParams, float]:
    """beta-Bundling: maximise M_{beta_bar, w_bar}(L) over R(beta).

    On the surcharge branch revenue is piecewise constant in w between
    achievable bundle surpluses and jumps up at each of them, so those values
    are exact maximisers. With w = 0 every item is posted separately and the
    revenue splits across items, so each threshold is chosen on its own: a
    threshold just below an atom ``a`` (by at most ``epsilon``) sells at
    ``a`` whenever the bid reaches it.
    """
    points, probs = as_support(L)
    k = points.shape[1]
    beta = check_beta(beta, k)

    surplus, base, _ = _surplus(points, beta)
    cands = np.unique(np.concatenate([[0.0], surplus[surplus > 0]]))
    w_rev = np.array([math.fsum(probs * np.where(_accepts(surplus, w), w + base, 0.0)) for w in cands])
    best_w = int(np.argmax(w_rev))
    w_bar, w_value = float(cands[best_w]), float(w_rev[best_w])

    thresholds, sup_parts, real_parts = [], [], []
    for j in range(k):
        col = points[:, j]
        atoms = np.unique(col[col > beta[j]])
        options = [(beta[j], beta[j] * math.fsum(probs[col > beta[j]]), beta[j] * math.fsum(probs[col > beta[j]]))]
        prev = beta[j]
        for a in atoms:
            eps = min(epsilon, 0.5 * (a - prev))
            mass = math.fsum(probs[col >= a])
            options.append((a - eps, (a - eps) * mass, a * mass))
            prev = a
        t, real, sup = max(options, key=lambda o: (o[1], -o[0]))
        thresholds.append(t)
        real_parts.append(real)
        sup_parts.append(sup)
    beta_value = math.fsum(real_parts)

    if w_value >= beta_value:
        params = BundlingParams(tuple(beta.tolist()), w_bar, "w", max(w_value, math.fsum(sup_parts)))
    else:
        params = BundlingParams(tuple(thresholds), 0.0, "beta", max(w_value, math.fsum(sup_parts)))
    revenue = bundling_revenue(DiscreteDist(points, probs), params.beta_bar, params.w_bar)
    return params, revenue



# -- Deterministic Best-Guess -------------------------------------------------


def _others(x: np.ndarray, i: int) -> np.ndarray:
    return np.delete(x, i, axis=0)


def _bmax(x: np.ndarray, i: int) -> np.ndarray:
    rest = _others(x, i)
    return rest.max(axis=0) if len(rest) else np.zeros(x.shape[1])


def dbgr_bidder(FJ: JointValuation, x, i: int, cache: dict | None = None, epsilon: float = 1e-9):
    """Bidder ``i``'s allocation and payment under DBGR at bid matrix ``x``."""
    x = np.asarray(x, dtype=float)
    beta = _bmax(x, i)
    key = (i, _others(x, i).tobytes() if FJ.grid is None else b"", beta.tobytes())
    if cache is None or key not in cache:
        L = FJ.conditional(i, _others(x, i))
        params, _ = bund_optimize(L, beta, epsilon)
        if cache is not None:
            cache[key] = params
    else:
        params = cache[key]
    return params.offer(x[i])


def _check_in_support(FJ: JointValuation, x: np.ndarray) -> None:
    if FJ.grid is not None:
        for i, row in enumerate(FJ.grid):
            for j, d in enumerate(row):
                if not np.any(np.isclose(d.values, x[i, j], rtol=0, atol=1e-12)):
                    raise ValueError(f"bid {x[i, j]} of bidder {i} on item {j} is outside the support")


def dbgr(FJ: JointValuation, x, cache: dict | None = None, epsilon: float = 1e-9) -> Outcome:
    """Deterministic Best-Guess Reduction: beta-Bundling against B(x_-i) per bidder."""
    x = check_valuation_matrix(x, FJ.n, FJ.k)
    if not FJ.is_discrete:
        raise ValueError("DBGR needs a discrete prior: discretize first")
    _check_in_support(FJ, x)
    q = np.zeros_like(x)
    s = np.zeros(FJ.n)
    for i in range(FJ.n):
        q[i], s[i] = dbgr_bidder(FJ, x, i, cache, epsilon)
    return Outcome(q, s)


def bg_select(FJ: JointValuation, bgr_revenue: float, e_second: float | None = None) -> tuple[str, float]:
    """Pick the reduction when it beats Vickrey's expected revenue, else Vickrey."""
    if e_second is None:
        e_second = order_statistics(FJ).e_second_total
    choice = "best-guess" if bgr_revenue >= e_second else "vickrey"
    return choice, max(bgr_revenue, e_second)


# -- Second-Price Bundling ----------------------------------------------------


def _spb_with_winners(x: np.ndarray, win: np.ndarray, w: float) -> Outcome:
    n, k = x.shape
    sec = second_highest(x, axis=0)
    q = np.zeros((n, k))
    s = np.zeros(n)
    for i in range(n):
        J = win == i
        surplus = math.fsum(x[i, J] - sec[J])
        if _accepts(surplus, w):
            q[i, J] = 1.0
            s[i] = w + math.fsum(sec[J])
    return Outcome(q, s)


def spb(x, w: float, tie_rule: str = "uniform-random", rng: np.random.Generator | None = None) -> Outcome:
    """Second-Price Bundling: each bidder's won items offered as one bundle at
    the summed second prices plus the surcharge ``w``."""
    x = check_valuation_matrix(x)
    check_tie_rule(tie_rule)
    w = check_nonneg(w, "w")
    return _spb_with_winners(x, _winners(x, tie_rule, rng), w)


def spb_expected(x, w: float, tie_rule: str = "uniform-random") -> Outcome:
    """SPB outcome averaged exactly over the tie draws."""
    x = check_valuation_matrix(x)
    w = check_nonneg(w, "w")
    if check_tie_rule(tie_rule) == "lowest-index":
        return spb(x, w, "lowest-index")
    q = np.zeros_like(x)
    s = np.zeros(x.shape[0])
    for win, wt in _tie_resolutions(x):
        o = _spb_with_winners(x, win, w)
        q += wt * o.q
        s += wt * o.s
    return Outcome(q, s)


def spb_batch_revenue(x: np.ndarray, w_grid, winners: np.ndarray) -> np.ndarray:
    """Total SPB revenue per sample (B, n, k) for every w in ``w_grid``.

    ``winners`` (B, k) fixes the tie draws so all surcharges share them.
    """
    B, n, k = x.shape
    sec = second_highest(x, axis=1)  # (B, k)
    onehot = winners[:, None, :] == np.arange(n)[None, :, None]  # (B, n, k)
    surplus = np.sum(np.where(onehot, x - sec[:, None, :], 0.0), axis=2)
    base = np.sum(np.where(onehot, sec[:, None, :], 0.0), axis=2)
    w_grid = np.asarray(w_grid, dtype=float)
    acc = _accepts(surplus[None], w_grid[:, None, None])
    return np.sum(np.where(acc, w_grid[:, None, None] + base[None], 0.0), axis=2).T  # (B, W)


def spb_w_rule(F: Dist1D, n: int, k: int, max_refine: int = 3) -> dict:
    """Surcharge selection by the Case 1 / Case 2 split, with diagnostics."""
    m = -(-k // n)
    Fh = hat_of(F, n)
    r_hat = r_of(Fh)
    _, c_m = a_c_ell(Fh, m)
    ev = second_max_mean(F, n)
    out = {"m": m, "r_hat": r_hat, "c_m": c_m, "e_v": ev}
    if ev >= 0.2 * max(r_hat, c_m / 80.0):
        return {**out, "case": 1, "w": 0.0}
    if c_m >= 80.0 * r_hat:
        return {**out, "case": "2A", "w": 0.25 * m * c_m}
    if Fh.is_discrete:
        vals = Fh.values[Fh.values > 0]
        grid = np.unique(np.concatenate([vals, vals * (1 - 1e-9)]))
    else:
        grid = np.asarray(Fh.ppf((np.arange(10_000) + 0.5) / 10_000), dtype=float)
    for _ in range(max_refine + 1):
        ok = grid * Fh.sf(grid) >= 0.8 * r_hat
        if ok.any():
            u = float(grid[np.argmax(ok)])
            break
        fine = np.linspace(0.0, grid.max(), 10 * len(grid) + 1)
        grid = np.unique(np.concatenate([grid, fine]))
    else:
        raise ValueError("no grid point u with u * H(u) >= 0.8 r after refinement")
    q0 = gap_tail(F, n, u / 2.0)
    w = u / 2.0 if m * q0 <= 1 else math.floor(m * q0) * u / 2.0
    return {**out, "case": "2B", "u": u, "q0": q0, "w": w}


def spb_choose_w(F: Dist1D, n: int, k: int) -> float:
    return float(spb_w_rule(F, n, k)["w"])


def spb_w_grid(F: Dist1D, n: int, k: int, size: int = 64) -> np.ndarray:
    """``size`` surcharges: 0, the rule's choice, and a log-spaced band around it."""
    w0 = spb_choose_w(F, n, k)
    scale = w0 if w0 > 0 else max(r_of(hat_of(F, n)), 1e-12) * (-(-k // n))
    band = np.geomspace(scale / 100.0, scale * 10.0, size - 2)
    return np.unique(np.concatenate([[0.0, w0], band]))


# -- exact expectation over a discrete prior ---------------------------------


def expected_revenue(mechanism, FJ: JointValuation) -> float:
    """E[total payment] by enumerating the support of a discrete prior."""
    mats, probs = FJ.support()
    return math.fsum(p * mechanism.expected_outcome(x).revenue for x, p in zip(mats, probs))


# -- estimators ----------------------------------------------------------------


class _MechanismBase(BaseEstimator):
    """Shared ``predict``/``revenue`` plumbing for n-bidder mechanisms."""

    def _rng(self):
        rs = getattr(self, "random_state", None)
        if isinstance(rs, np.random.Generator):
            return rs
        if not hasattr(self, "_rng_"):
            self._rng_ = np.random.default_rng(rs)
        return self._rng_

    def outcome(self, x, rng=None) -> Outcome:
        raise NotImplementedError

    def expected_outcome(self, x) -> Outcome:
        return self.outcome(x)

    def predict(self, X):
        """Allocation matrices for one (n, k) matrix or a batch (B, n, k)."""
        X = check_valuation_matrix(X, allow_batch=True)
        if X.ndim == 2:
            return self.outcome(X).q
        return np.stack([self.outcome(x).q for x in X])

    def revenue(self, X) -> np.ndarray:
        X = check_valuation_matrix(X, allow_batch=True)
        if X.ndim == 2:
            return np.array(self.outcome(X).revenue)
        return np.array([self.outcome(x).revenue for x in X])

    def score(self, FJ: JointValuation) -> float:
        """Exact expected revenue on a discrete prior."""
        return expected_revenue(self, FJ)


class VickreyAuction(_MechanismBase):
    def __init__(self, tie_rule: str = "lowest-index", random_state=None):
        self.tie_rule = tie_rule
        self.random_state = random_state

    def fit(self, FJ: JointValuation | None = None, y=None):
        check_tie_rule(self.tie_rule)
        if FJ is not None:
            self.n_bidders_, self.n_items_ = FJ.n, FJ.k
        self.fitted_ = True
        return self

    def outcome(self, x, rng=None) -> Outcome:
        return vickrey(x, self.tie_rule, rng or (self._rng() if self.tie_rule == "uniform-random" else None))

    def expected_outcome(self, x) -> Outcome:
        if self.tie_rule == "uniform-random":
            return vickrey_expected(x)
        return vickrey(x)


class BetaBundling(BaseEstimator):
    """beta-Bundling for one bidder: ``fit(L)`` picks (beta_bar, w_bar)."""

    def __init__(self, beta=None, epsilon: float = 1e-9):
        self.beta = beta
        self.epsilon = epsilon

    def fit(self, L, y=None):
        points, _ = as_support(L)
        beta = np.zeros(points.shape[1]) if self.beta is None else self.beta
        self.params_, self.revenue_ = bund_optimize(L, beta, self.epsilon)
        self.beta_bar_ = np.array(self.params_.beta_bar)
        self.w_bar_ = self.params_.w_bar
        return self

    def predict(self, Z):
        check_is_fitted(self, "params_")
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.stack([self.params_.offer(z)[0] for z in Z])

    def payment(self, Z):
        check_is_fitted(self, "params_")
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.array([self.params_.offer(z)[1] for z in Z])

    def score(self, L, y=None) -> float:
        check_is_fitted(self, "params_")
        return bundling_revenue(L, self.beta_bar_, self.w_bar_)


class DeterministicBestGuess(_MechanismBase):
    """Mechanism DBG: DBGR when its exact revenue beats Vickrey, else Vickrey.

    With ``select=False`` the estimator always runs DBGR.
    """

    def __init__(self, select: bool = True, epsilon: float = 1e-9):
        self.select = select
        self.epsilon = epsilon

    def fit(self, FJ: JointValuation, y=None):
        self.prior_ = FJ
        self._cache = {}
        dbgr_only = _DBGR(FJ, self._cache, self.epsilon)
        self.reduction_revenue_ = expected_revenue(dbgr_only, FJ)
        self.e_second_ = order_statistics(FJ).e_second_total
        if self.select:
            self.choice_, self.revenue_ = bg_select(FJ, self.reduction_revenue_, self.e_second_)
        else:
            self.choice_, self.revenue_ = "best-guess", self.reduction_revenue_
        return self

    def outcome(self, x, rng=None) -> Outcome:
        check_is_fitted(self, "choice_")
        if self.choice_ == "vickrey":
            return vickrey(x)
        return dbgr(self.prior_, x, self._cache, self.epsilon)


class _DBGR:
    def __init__(self, FJ, cache, epsilon):
        self.FJ, self.cache, self.epsilon = FJ, cache, epsilon

    def expected_outcome(self, x):
        return dbgr(self.FJ, x, self.cache, self.epsilon)


class BestGuess(_MechanismBase):
    """Mechanism BG built on exact optimal B(x_-i)-exclusive LPs per slice."""

    def __init__(self, select: bool = True):
        self.select = select

    def fit(self, FJ: JointValuation, y=None):
        from .oracles import rev_x

        if not FJ.is_discrete:
            raise ValueError("BestGuess needs a discrete prior: discretize first")
        self.prior_ = FJ
        self._slices = {}
        total = []
        for i in range(FJ.n):
            rest, p = FJ.others(i)
            for xr, pr in zip(rest, p):
                beta = xr.max(axis=0) if len(xr) else np.zeros(FJ.k)
                res = rev_x(FJ.conditional(i, xr), beta)
                self._slices[(i, xr.tobytes())] = res
                total.append(pr * res.value)
        self.reduction_revenue_ = math.fsum(total)
        self.e_second_ = order_statistics(FJ).e_second_total
        if self.select:
            self.choice_, self.revenue_ = bg_select(FJ, self.reduction_revenue_, self.e_second_)
        else:
            self.choice_, self.revenue_ = "best-guess", self.reduction_revenue_
        return self

    def outcome(self, x, rng=None) -> Outcome:
        check_is_fitted(self, "choice_")
        x = check_valuation_matrix(x, self.prior_.n, self.prior_.k)
        if self.choice_ == "vickrey":
            return vickrey(x)
        q = np.zeros_like(x)
        s = np.zeros(x.shape[0])
        for i in range(x.shape[0]):
            res = self._slices.get((i, np.ascontiguousarray(_others(x, i)).tobytes()))
            if res is None:
                raise ValueError(f"zero-probability slice for bidder {i}")
            types = res.solution["types"]
            hit = np.nonzero(np.all(np.isclose(types, x[i], rtol=0, atol=1e-12), axis=1))[0]
            if len(hit) == 0:
                raise ValueError(f"bid of bidder {i} is outside the support")
            q[i] = res.solution["q"][hit[0]]
            s[i] = res.solution["s"][hit[0]]
        return Outcome(q, s)


class SecondPriceBundling(_MechanismBase):
    """SPB with a fixed surcharge, or ``w="auto"`` to apply the case rule on
    an iid prior at ``fit`` time."""

    def __init__(self, w="auto", tie_rule: str = "uniform-random", random_state=None):
        self.w = w
        self.tie_rule = tie_rule
        self.random_state = random_state

    def fit(self, FJ: JointValuation | None = None, y=None):
        check_tie_rule(self.tie_rule)
        if self.w == "auto":
            if FJ is None or FJ.model != "iid":
                raise ValueError('w="auto" needs an iid prior')
            self.w_rule_ = spb_w_rule(FJ.dist, FJ.n, FJ.k)
            self.w_ = float(self.w_rule_["w"])
        else:
            self.w_ = check_nonneg(self.w, "w")
        return self

    def outcome(self, x, rng=None) -> Outcome:
        check_is_fitted(self, "w_")
        if self.tie_rule == "uniform-random":
            rng = rng or self._rng()
        return spb(x, self.w_, self.tie_rule, rng)

    def expected_outcome(self, x) -> Outcome:
        check_is_fitted(self, "w_")
        return spb_expected(x, self.w_, self.tie_rule)


def make_mechanism(desc: dict, FJ: JointValuation | None = None, random_state=None):
    """Build and fit an estimator from a CLI descriptor such as ``{"mech": "spb", "w": 1.5}``."""
    kind = desc.get("mech")
    if kind == "vickrey":
        est = VickreyAuction(desc.get("tie_rule", "lowest-index"), random_state)
    elif kind == "spb":
        est = SecondPriceBundling(desc.get("w", "auto"), desc.get("tie_rule", "uniform-random"), random_state)
    elif kind == "dbgr":
        est = DeterministicBestGuess(select=False)
    elif kind == "dbg":
        est = DeterministicBestGuess(select=True)
    elif kind == "bg":
        est = BestGuess(select=True)
    elif kind == "bgr":
        est = BestGuess(select=False)
    else:
        raise ValueError(f"unknown mechanism descriptor {desc!r}")
    return est.fit(FJ)
