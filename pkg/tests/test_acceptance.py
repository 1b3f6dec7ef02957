"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES

from bestguess.mc import estimate_revenue
from bestguess.mechanisms import DeterministicBestGuess, SecondPriceBundling, VickreyAuction
from bestguess.verify import SUITES, verify
from bestguess.valuedist import Dist1D, JointValuation

pytestmark = pytest.mark.slow

FULL_BUDGET = 600.0


@pytest.fixture(scope="module")
def full_run():
    t0 = time.perf_counter()
    results = {name: verify(name) for name in sorted(SUITES)}
    return results, time.perf_counter() - t0


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def fails(res, check=None):
    return [c for c in res.checks if c.status == "fail" and (check is None or c.check == check)]


def n_rows(res, check):
    return sum(1 for c in res.checks if c.check == check and not c.skipped)


def test_criterion_01_beta_exclusion(full_run):
    res = full_run[0]["theorem1"]
    ok = res.n_instances >= 500 and not fails(res) and res.seconds < 120
    record("1", ok, f"rev_x >= rev_a/8 on {res.n_instances} product instances, "
                    f"{len(fails(res))} violations, min slack {res.min_slack:.3g}, {res.seconds:.1f}s")


def test_criterion_02_bundling(full_run):
    res, base = full_run[0]["thm61"], full_run[0]["theorem1"]
    ok = res.n_instances >= 500 and res.corpus_hash == base.corpus_hash and not fails(res)
    record("2", ok, f"bund >= rev_x/8.5 on {res.n_instances} instances (same corpus), {len(fails(res))} violations, "
                    f"min slack {res.min_slack:.3g}")


def test_criterion_03_reduction_chain(full_run):
    t2, t3 = full_run[0]["theorem2"], full_run[0]["theorem3"]
    a, b = "max(BGR, E2) >= REV/9", "max(DBGR, E2) >= REV/69"
    bad = fails(t2, a) + fails(t3, b)
    ok = (min(t2.n_instances, t3.n_instances) >= 200 and n_rows(t2, a) >= 200 and n_rows(t3, b) >= 200
          and not bad and t2.seconds + t3.seconds < 300)
    record("3", ok, f"{a} and {b} on {t2.n_instances} item-independent instances, {len(bad)} violations, "
                    f"{t2.seconds + t3.seconds:.1f}s")


def test_criterion_04_bic_gap(full_run):
    res = full_run[0]["theorem4"]
    bad = fails(res, "BIC >= DSIC") + fails(res, "9 DSIC >= BIC")
    ok = res.n_instances >= 200 and n_rows(res, "9 DSIC >= BIC") >= 200 and not bad
    record("4", ok, f"DSIC <= BIC <= 9 DSIC on {res.n_instances} independent-cell instances, {len(bad)} violations")


def test_criterion_05_upper_bounds(full_run):
    t51, t91 = full_run[0]["thm51"], full_run[0]["thm91"]
    bad = fails(t51, "BG_A + E2 >= REV") + fails(t91)
    per = n_rows(t91, "FX_beta + |beta| >= REV") / max(t91.n_instances, 1)
    ok = not bad and per >= 5 and t51.n_instances >= 200
    record("5", ok, f"REV <= BG_A + E2 and REV <= FX_beta + |beta| ({per:.0f} betas per instance), "
                    f"{len(bad)} violations")


def test_criterion_06_second_price_bundling(full_run):
    res = full_run[0]["theorem5"]
    spb_rows = [c for c in res.checks if c.check == "SPB / (k A_m(F^))"]
    rev_rows = [c for c in res.checks if c.check == "REV / (k A_m(F^))" and not c.skipped]
    grid = {(r["n"], r["k"], r["name"]) for r in SUITES["theorem5"].corpus({})}
    env = res.ratio_envelope
    ok = (len(spb_rows) == len(grid) == 36 and rev_rows and not fails(res)
          and all(0 < c.ratio <= 100 for c in spb_rows + rev_rows))
    detail = ", ".join(f"{k} in [{v['min']:.3f}, {v['max']:.3f}]" for k, v in sorted(env.items()))
    record("6", ok, f"{len(spb_rows)} grid points, REV solved on {len(rev_rows)}; {detail}; "
                    f"SPB <= REV + 4 se and exact SPB <= REV hold")


def test_criterion_07_truthfulness(full_run):
    res = full_run[0]["ic"]
    mechs = sorted({c.check.split(":")[0].split("(")[0] for c in res.checks})
    ok = res.n_instances >= 200 and not fails(res) and {"vickrey", "dbgr", "spb"} <= set(mechs)
    record("7", ok, f"exhaustive deviations for {', '.join(mechs)} on {res.n_instances} instances, "
                    f"{len(fails(res))} violations, worst slack {res.min_slack:.3g}")


def test_criterion_08_appendix(full_run):
    r = full_run[0]
    names = ("p2", "fact7", "lemma61", "lemma92")
    bad = {n: len(fails(r[n])) for n in names}
    n_p2 = r["p2"].n_instances
    ok = not any(bad.values()) and n_p2 >= 1000 and r["fact7"].n_instances == 99 * 99
    record("8", ok, f"P2 on {n_p2} laws x l<=20, Fact 7 on {r['fact7'].n_instances} (n,k), lemma61, lemma92; "
                    f"violations {bad}")


def test_criterion_09_transforms(full_run):
    r44, r71 = full_run[0]["lemma44"], full_run[0]["thm71"]
    bad = len(fails(r44)) + len(fails(r71))
    a, b = r44.config.get("a", 4.0), r44.config.get("b", 0.75)
    ok = min(r44.n_instances, r71.n_instances) >= 200 and not bad and (a, b) == (4.0, 0.75)
    record("9", ok, f"transform bound with (a,b,c)=({a},{b},0.5) on {r44.n_instances} instances and "
                    f"phi_beta >= rev_x/2 on {r71.n_instances}; {bad} violations")


def test_criterion_10_infrastructure(full_run):
    results, seconds = full_run
    two_point = Dist1D.discrete([(1.0, 0.5), (2.0, 0.5)])
    FJ = JointValuation.from_grid([[two_point, Dist1D.discrete([(0.0, 0.3), (3.0, 0.7)])],
                                   [two_point, two_point]])
    cases = [({"mech": "vickrey"}, VickreyAuction()), ({"mech": "spb", "w": 1.0}, SecondPriceBundling(w=1.0)),
             ({"mech": "dbg"}, DeterministicBestGuess())]
    worst = 0.0
    for desc, est in cases:
        exact = est.fit(FJ).score(FJ)
        for seed in (0, 1, 2):
            e = estimate_revenue(desc, FJ, 20_000 if desc["mech"] == "dbg" else 100_000, seed=seed)
            worst = max(worst, abs(e.mean - exact) / max(e.stderr, 1e-300))
    t0 = time.perf_counter()
    again = {name: verify(name) for name in sorted(SUITES)}
    rerun = time.perf_counter() - t0

    def strip(res):
        # JSON text, since NaN fields never compare equal as floats
        s = res.summary()
        s.pop("seconds")
        return json.dumps([s, [c.row(res.suite) for c in res.checks]], sort_keys=True)

    same = all(strip(results[n]) == strip(again[n]) for n in results)
    failed = [n for n, r in results.items() if not r.passed]
    ok = worst <= 4 and same and seconds < FULL_BUDGET and rerun < FULL_BUDGET and not failed
    record("10", ok, f"MC within {worst:.2f} se of exact over 3 seeds; full verify of {len(results)} suites "
                     f"{seconds:.0f}s (rerun {rerun:.0f}s, identical: {same}); failed suites {failed}")
