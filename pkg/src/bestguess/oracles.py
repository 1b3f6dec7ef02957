"""Exact optimal revenue on finite type spaces by linear programming.

Every LP is solved with HiGHS through :func:`scipy.optimize.linprog` and the
returned allocation/payment is re-checked by direct substitution; the
reported value is recomputed from the solution, never read off the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .valuedist import (
    DiscreteDist,
    JointValuation,
    ProductDist,
    as_support,
    shift,
    shift_joint,
)

__all__ = [
    "LPResult",
    "LPError",
    "SizeGuardError",
    "rev_1bidder",
    "rev_x",
    "rev_a",
    "rev_dsic",
    "rev_bic",
    "drev_1bidder",
    "BGQuantities",
    "bg_quantities",
    "bgr_exact",
    "bg_adjusted",
    "fx_beta",
    "srev",
    "others_max",
]

VERIFY_TOL = 1e-7
ONE_BIDDER_GUARD = 10_000
JOINT_GUARD = 2_000
DREV_GUARD = 256
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class LPError(RuntimeError):
    """Solver failure or a solution that fails re-verification."""


class SizeGuardError(ValueError):
    pass


@dataclass
class LPResult:
    value: float
    status: str
    solution: dict = field(repr=False)
    tolerance: float = VERIFY_TOL
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "status": self.status,
            "tolerance": self.tolerance,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
        }


def _solve(c, A, b, bounds, integrality=None):
    if integrality is not None:
        res = milp(c, constraints=[LinearConstraint(A, -np.inf, b)],
                   bounds=Bounds(bounds[:, 0], bounds[:, 1]), integrality=integrality,
                   options={"mip_rel_gap": 1e-12})
        status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    else:
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs", options=_HIGHS)
        status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    if status != "optimal":
        raise LPError(f"LP status {status}: {res.message}")
    return res.x


# -- one bidder ---------------------------------------------------------------


def _one_bidder(L, beta=None, mode: str = "rev", deterministic: bool = False) -> LPResult:
    points, probs = as_support(L)
    m, k = points.shape
    guard = DREV_GUARD if deterministic else ONE_BIDDER_GUARD
    if m > guard:
        raise SizeGuardError(f"{m} types exceeds the one-bidder guard {guard}")
    low = np.zeros((m, k), dtype=bool)
    if beta is not None:
        beta = np.asarray(beta, dtype=float).reshape(k)
        if np.any(beta < 0):
            raise ValueError("beta must be componentwise >= 0")
        low = points <= beta[None, :]

    nq = m * k
    nvar = nq + m
    qi = np.arange(nq).reshape(m, k)
    si = nq + np.arange(m)

    # IC rows for ordered pairs (t, u), t != u:  z_t.q_u - s_u - z_t.q_t + s_t <= 0
    t, u = np.nonzero(~np.eye(m, dtype=bool))
    npair = len(t)
    rows_q = np.repeat(np.arange(npair), k)
    cols_u = qi[u].ravel()
    cols_t = qi[t].ravel()
    vals = points[t].ravel()
    r = [rows_q, rows_q, np.arange(npair), np.arange(npair)]
    c = [cols_u, cols_t, si[t], si[u]]
    v = [vals, -vals, np.ones(npair), -np.ones(npair)]
    # IR rows: -z_t.q_t + s_t <= 0
    ir0 = npair
    r += [ir0 + np.repeat(np.arange(m), k), ir0 + np.arange(m)]
    c += [qi.ravel(), si]
    v += [-points.ravel(), np.ones(m)]
    A = sparse.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                          shape=(npair + m, nvar))
    b = np.zeros(npair + m)

    bounds = np.zeros((nvar, 2))
    bounds[:nq, 1] = 1.0
    bounds[nq:, 0] = -np.inf
    bounds[nq:, 1] = np.inf
    if mode == "rex":
        bounds[qi[low], 1] = 0.0

    cost = np.zeros(nvar)
    cost[si] = -probs
    if mode == "adj":
        cost[qi[low]] += (probs[:, None] * points)[low]

    integrality = None
    if deterministic:
        integrality = np.zeros(nvar)
        integrality[:nq] = 1
    x = _solve(cost, A, b, bounds, integrality)
    q = np.clip(x[:nq].reshape(m, k), 0.0, 1.0)
    if deterministic:
        q = np.round(q)
    if mode == "rex":
        q[low] = 0.0
    s = x[nq:]
    value, residuals = _verify_one_bidder(points, probs, q, s, low if mode == "adj" else None)
    if mode == "rex" and low.any():
        residuals["exclusion"] = float(np.max(q[low]))
    status = "optimal"
    if max(residuals.values()) > VERIFY_TOL:
        raise LPError(f"solution fails re-verification: {residuals}")
    return LPResult(value, status, {"types": points, "probs": probs, "q": q, "s": s}, VERIFY_TOL, residuals)


def _verify_one_bidder(points, probs, q, s, adjust_mask=None):
    util = points @ q.T - s[None, :]  # util[t, u]: type t reporting u
    own = np.diag(util)
    ir = max(0.0, float(-own.min()))
    ic = max(0.0, float((util.max(axis=1) - own).max()))
    pay = s.copy()
    if adjust_mask is not None:
        pay = s - np.sum(np.where(adjust_mask, q * points, 0.0), axis=1)
    return math.fsum(probs * pay), {"ir": ir, "ic": ic}


def rev_1bidder(L) -> LPResult:
    """Optimal IR-IC revenue for a single bidder with a finite type space."""
    return _one_bidder(L)


def rev_x(L, beta) -> LPResult:
    """Optimal beta-exclusive revenue: q^j(z) = 0 whenever z^j <= beta^j."""
    return _one_bidder(L, beta, mode="rex")


def rev_a(L, beta) -> LPResult:
    """Optimal beta-adjusted revenue (payment minus value of low items served)."""
    return _one_bidder(L, beta, mode="adj")


def drev_1bidder(L) -> LPResult:
    """Optimal deterministic (0/1 allocation) IR-IC revenue, solved as a MILP."""
    return _one_bidder(L, deterministic=True)


# -- n bidders ----------------------------------------------------------------


def _joint_layout(FJ: JointValuation):
    n, k = FJ.n, FJ.k
    types = [FJ.bidder_types(i) for i in range(n)]
    shape = tuple(len(t) for t in types)
    G = math.prod(shape)
    if G > JOINT_GUARD:
        raise SizeGuardError(f"joint grid of {G} matrices exceeds guard {JOINT_GUARD}")
    multi = np.array(np.unravel_index(np.arange(G), shape)).T  # (G, n)
    mats = np.stack([types[i][multi[:, i]] for i in range(n)], axis=1)  # (G, n, k)
    sup, p = FJ.support()
    probs = np.zeros(G)
    index = {m.tobytes(): g for g, m in enumerate(mats)}
    for mat, pr in zip(sup, p):
        probs[index[np.ascontiguousarray(mat).tobytes()]] += pr
    return types, shape, multi, mats, probs


def _joint_lp(FJ: JointValuation, bayesian: bool) -> LPResult:
    n, k = FJ.n, FJ.k
    types, shape, multi, mats, probs = _joint_layout(FJ)
    G = len(mats)
    nq = G * n * k
    nvar = nq + G * n
    qidx = np.arange(nq).reshape(G, n, k)
    sidx = nq + np.arange(G * n).reshape(G, n)
    rows, cols, vals = [], [], []
    nrow = 0

    def add(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    # supply: sum_i q[g, i, j] <= 1
    r = nrow + np.arange(G * k).reshape(G, k)
    add(np.repeat(r[:, None, :], n, axis=1), qidx, np.ones(qidx.shape))
    nrow += G * k
    b_supply = np.ones(G * k)

    marg = None
    if bayesian:
        if not FJ.bidder_independent:
            raise ValueError("rev_bic requires independent bidders")
        marg = []
        for i in range(n):
            mi = np.zeros(shape[i])
            np.add.at(mi, multi[:, i], probs)
            marg.append(mi)

    for i in range(n):
        ti = len(types[i])
        x_i = types[i]  # (ti, k)
        if not bayesian:
            # DSIR: -x_i.q[g,i] + s[g,i] <= 0
            r = nrow + np.arange(G)
            add(np.repeat(r, k), qidx[:, i, :], -mats[:, i, :])
            add(r, sidx[:, i], np.ones(G))
            nrow += G
            # DSIC: for g and alternative a: x_i.q[g',i] - s[g',i] - x_i.q[g,i] + s[g,i] <= 0
            g_rep = np.repeat(np.arange(G), ti)
            alt = np.tile(np.arange(ti), G)
            keep = alt != multi[g_rep, i]
            g_rep, alt = g_rep[keep], alt[keep]
            m2 = multi[g_rep].copy()
            m2[:, i] = alt
            g2 = np.ravel_multi_index(m2.T, shape)
            R = nrow + np.arange(len(g_rep))
            xv = mats[g_rep, i, :]
            add(np.repeat(R, k), qidx[g2, i, :], xv)
            add(np.repeat(R, k), qidx[g_rep, i, :], -xv)
            add(R, sidx[g2, i], -np.ones(len(R)))
            add(R, sidx[g_rep, i], np.ones(len(R)))
            nrow += len(R)
        else:
            # weight of x_{-i} for each grid cell, by independence
            w = np.ones(G)
            for t in range(n):
                if t != i:
                    w *= marg[t][multi[:, t]]
            # BIR per own type a: sum_{g: t_i = a} w[g] (-x_a.q[g,i] + s[g,i]) <= 0
            own = multi[:, i]
            R = nrow + own
            add(np.repeat(R, k), qidx[:, i, :], -(w[:, None] * x_i[own]))
            add(R, sidx[:, i], w)
            nrow += ti
            # BIC per (a, a'): sum_{x_-i} w [x_a.q(a',.) - s(a',.) - x_a.q(a,.) + s(a,.)] <= 0
            pair_a, pair_b = np.nonzero(~np.eye(ti, dtype=bool))
            for a, bb in zip(pair_a, pair_b):
                ga = np.nonzero(own == a)[0]
                m2 = multi[ga].copy()
                m2[:, i] = bb
                gb = np.ravel_multi_index(m2.T, shape)
                wa = w[ga]
                add(np.full(len(ga) * k, nrow), qidx[gb, i, :], wa[:, None] * x_i[a][None, :])
                add(np.full(len(ga) * k, nrow), qidx[ga, i, :], -wa[:, None] * x_i[a][None, :])
                add(np.full(len(ga), nrow), sidx[gb, i], -wa)
                add(np.full(len(ga), nrow), sidx[ga, i], wa)
                nrow += 1

    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nrow, nvar))
    b = np.zeros(nrow)
    b[: G * k] = b_supply
    bounds = np.zeros((nvar, 2))
    bounds[:nq, 1] = 1.0
    bounds[nq:, 0] = -np.inf
    bounds[nq:, 1] = np.inf
    cost = np.zeros(nvar)
    cost[sidx] = -probs[:, None]
    x = _solve(cost, A, b, bounds)
    q = np.clip(x[:nq].reshape(G, n, k), 0.0, 1.0)
    s = x[nq:].reshape(G, n)
    value = math.fsum((probs[:, None] * s).ravel())
    residuals = _verify_joint(types, shape, multi, mats, probs, q, s, marg)
    if max(residuals.values()) > VERIFY_TOL:
        raise LPError(f"solution fails re-verification: {residuals}")
    sol = {"matrices": mats, "probs": probs, "q": q, "s": s, "shape": shape}
    return LPResult(value, "optimal", sol, VERIFY_TOL, residuals)


def _verify_joint(types, shape, multi, mats, probs, q, s, marg):
    n = len(shape)
    G = len(mats)
    res = {"supply": max(0.0, float((q.sum(axis=1) - 1.0).max()))}
    ir = ic = 0.0
    qr = q.reshape(shape + q.shape[1:])
    sr = s.reshape(shape + (n,))
    for i in range(n):
        x_i = types[i]
        # util[..., a, b]: own type a, report b, over the others' grid
        qi = np.moveaxis(qr[..., i, :], i, -2)  # (..., ti, k)
        si = np.moveaxis(sr[..., i], i, -1)  # (..., ti)
        util = np.einsum("ak,...bk->...ab", x_i, qi) - si[..., None, :]
        if marg is None:
            own = np.diagonal(util, axis1=-2, axis2=-1)
            ir = max(ir, float(-own.min()))
            ic = max(ic, float((util.max(axis=-1) - own).max()))
        else:
            w = np.ones(shape[:i] + shape[i + 1:])
            for t, mt in enumerate(j for j in range(n) if j != i):
                idx = [None] * (n - 1)
                idx[t] = slice(None)
                w = w * marg[mt][tuple(idx)]
            interim = np.tensordot(w, util, axes=(tuple(range(n - 1)), tuple(range(n - 1))))
            own = np.diag(interim)
            ir = max(ir, float(-own.min()))
            ic = max(ic, float((interim.max(axis=1) - own).max()))
    res["ir"] = max(ir, 0.0)
    res["ic"] = max(ic, 0.0)
    return res


def rev_dsic(FJ: JointValuation) -> LPResult:
    """Optimal DSIR-DSIC revenue over the product of the bidders' type grids."""
    return _joint_lp(FJ, bayesian=False)


def rev_bic(FJ: JointValuation) -> LPResult:
    """Optimal BIR-BIC revenue; bidders must be independent."""
    return _joint_lp(FJ, bayesian=True)


# -- Best-Guess quantities ----------------------------------------------------


def others_max(x_minus_i: np.ndarray, k: int) -> np.ndarray:
    """B(x_{-i}): column maxima of the other bidders, 0 when there are none."""
    x_minus_i = np.asarray(x_minus_i, dtype=float).reshape(-1, k)
    if x_minus_i.shape[0] == 0:
        return np.zeros(k)
    return x_minus_i.max(axis=0)


def _slices(FJ: JointValuation, i: int):
    rest, p = FJ.others(i)
    for xr, pr in zip(rest, p):
        if pr <= 0:
            continue
        yield xr, pr, FJ.conditional(i, xr)


def _dist_key(L):
    if isinstance(L, ProductDist):
        return ("prod", L.items)
    return ("tab",) + L.key()


def _sum_over_slices(FJ: JointValuation, per_slice) -> float:
    cache: dict = {}
    total = []
    for i in range(FJ.n):
        for xr, pr, L in _slices(FJ, i):
            beta = others_max(xr, FJ.k)
            key = (_dist_key(L), beta.tobytes())
            if key not in cache:
                cache[key] = per_slice(L, beta)
            total.append(pr * cache[key])
    return math.fsum(total)


def bgr_exact(FJ: JointValuation) -> float:
    """Sum_i E_{x_-i} REV^X(X_i | x_-i, B(x_-i))."""
    return _sum_over_slices(FJ, lambda L, b: rev_x(L, b).value)


def bg_adjusted(FJ: JointValuation) -> float:
    """Sum_i E_{x_-i} REV^A(X_i | x_-i, B(x_-i))."""
    return _sum_over_slices(FJ, lambda L, b: rev_a(L, b).value)


def fx_beta(FJ: JointValuation, beta) -> float:
    """Sum_i E_{x_-i} REV((X_i - beta) | x_-i) for a fixed beta."""
    beta = np.asarray(beta, dtype=float)

    def one(L, _b):
        Ls = shift(L, beta) if isinstance(L, ProductDist) else shift_joint(L, beta)
        return rev_1bidder(Ls).value

    cache: dict = {}
    total = []
    for i in range(FJ.n):
        for xr, pr, L in _slices(FJ, i):
            key = _dist_key(L)
            if key not in cache:
                cache[key] = one(L, None)
            total.append(pr * cache[key])
    return math.fsum(total)


def srev(FJ: JointValuation) -> float:
    """Selling each item separately and optimally to the n bidders."""
    parts = []
    for j in range(FJ.k):
        col = FJ.column(j)
        pts, p = col.support()
        sub = JointValuation.from_table(pts.reshape(-1, FJ.n, 1), p)
        parts.append(rev_dsic(sub).value)
    return math.fsum(parts)


@dataclass
class BGQuantities:
    bgr_exact: float
    bg_a: float
    fx: dict
    srev: float


def bg_quantities(FJ: JointValuation, betas=()) -> BGQuantities:
    fx = {tuple(float(v) for v in b): fx_beta(FJ, b) for b in betas}
    return BGQuantities(bgr_exact(FJ), bg_adjusted(FJ), fx, srev(FJ))
