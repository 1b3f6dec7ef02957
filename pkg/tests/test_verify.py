import csv
import json
import math

import pytest

from bestguess.io import instance_to_json
from bestguess.valuedist import Dist1D, JointValuation
from bestguess.verify import CSV_COLUMNS, Check, geq, ratio, report_emit, verify


def test_geq_and_ratio():
    assert geq("a", 1.0, 1.0 + 1e-10).ok
    assert not geq("a", 1.0, 1.1).ok
    assert ratio("r", 1.0, 2.0).ratio == 0.5
    assert not ratio("r", 1.0, 0.0).ok
    assert not ratio("r", 300.0, 1.0).ok


def test_unknown_suite():
    with pytest.raises(ValueError, match="unknown suite"):
        verify("nope")


def test_size_guard_becomes_skip():
    F = Dist1D.discrete([(float(v), 1 / 6) for v in range(6)])
    big = [instance_to_json(joint=JointValuation.iid(F, 3, 2), meta={"index": 0})]
    res = verify("theorem4", big)
    assert res.skips >= 1 and not res.passed
    assert verify("theorem4", big, {"skip_budget": 5}).passed


def test_report_files(tmp_path):
    res = verify("lemma61", config={"count": 3})
    csv_path, json_path, rc = report_emit(res, tmp_path)
    assert rc == 0
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 3
    summary = json.loads(json_path.read_text())
    assert summary["n_instances"] == 3 and summary["passed"] and summary["corpus_hash"] == res.corpus_hash


def test_ratio_envelope():
    res = verify("lemma91", config={"count": 20})
    env = res.ratio_envelope["REV(L^k) / (k A_k(L))"]
    assert 0 < env["min"] <= env["max"] <= 100


def test_default_corpus_is_reproducible():
    a, b = verify("thm61", config={"count": 5}), verify("thm61", config={"count": 5})
    assert a.corpus_hash == b.corpus_hash
    assert [c.lhs for c in a.checks] == [c.lhs for c in b.checks]


def test_skipped_check_status():
    assert Check("x", skipped=True).status == "skipped"
    assert math.isnan(Check("x").slack)
