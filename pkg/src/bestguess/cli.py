"""Command line: ``bestguess <command> ...``.

Default output directory: ``--out``, else ``$BESTGUESS_OUTPUT_DIR``, else
``./bestguess-out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import mc
from .corpus import CorpusConfig, corpus_hash, gen_corpus, write_corpus
from .io import OUTPUT_DIR_ENV, dist_from_spec, dump_json, load_file, load_instance, output_dir
from .mechanisms import expected_revenue, make_mechanism, spb_w_grid
from .menus import Menu, TransformParams, profitable_transform
from .oracles import drev_1bidder, rev_1bidder, rev_a, rev_bic, rev_dsic, rev_x
from .valuedist import JointValuation, closed_form_revenue
from .verify import SUITES, report_emit, verify


def _json_arg(text: str):
    """Inline JSON, or a path to a JSON/TOML file."""
    path = Path(text)
    if path.suffix in (".json", ".toml") and path.exists():
        return load_file(path)
    return json.loads(text)


def _floats(text: str) -> list[float]:
    text = text.strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(v) for v in text.split(",") if v.strip()]


def _config(args) -> dict:
    cfg = load_file(args.config) if getattr(args, "config", None) else {}
    for key in ("seed", "count", "n_jobs", "family", "mc_samples"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _emit(obj, path=None) -> None:
    text = dump_json(obj, indent=2)
    print(text)
    if path:
        Path(path).write_text(text + "\n")


# -- commands --------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _config(args)
    corpus_cfg = CorpusConfig.from_dict({k: v for k, v in cfg.items() if k != "n_jobs"})
    instances = gen_corpus(corpus_cfg)
    out = output_dir(args.out) / (args.name or f"corpus-{corpus_cfg.family}-{corpus_cfg.seed}")
    write_corpus(instances, out, corpus_cfg.to_dict())
    print(json.dumps({"directory": str(out), "count": len(instances), "hash": corpus_hash(instances)}))
    return 0


def _one_bidder_law(inst):
    if "product" in inst:
        return inst["product"]
    FJ = inst["joint"]
    if FJ.n != 1:
        raise SystemExit("this oracle needs a one-bidder instance")
    return FJ.bidder_marginal(0)


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    beta = _floats(args.beta) if args.beta else inst.get("beta")
    kind = args.kind
    if kind in ("dsic", "bic"):
        res = (rev_dsic if kind == "dsic" else rev_bic)(inst["joint"])
    else:
        L = _one_bidder_law(inst)
        if kind == "rev":
            res = rev_1bidder(L)
        elif kind == "drev":
            res = drev_1bidder(L)
        else:
            if beta is None:
                raise SystemExit(f"oracle {kind} needs --beta")
            res = (rev_x if kind == "revx" else rev_a)(L, beta)
    out = res.to_json()
    if not args.full:
        out.pop("solution", None)
    _emit(out, args.output)
    return 0


def _joint_of(inst) -> JointValuation | None:
    return inst.get("joint")


def cmd_mech_run(args) -> int:
    inst = load_instance(args.instance) if args.instance else {}
    FJ = _joint_of(inst)
    est = make_mechanism(_json_arg(args.mech), FJ, random_state=args.seed)
    result = {}
    if args.x:
        x = np.asarray(_json_arg(args.x), dtype=float)
        result["outcome"] = est.expected_outcome(x).to_json() if args.expected else \
            est.outcome(x, rng=np.random.default_rng(args.seed)).to_json()
    if args.revenue:
        if FJ is None:
            raise SystemExit("--revenue needs --instance")
        result["expected_revenue"] = expected_revenue(est, FJ)
    for attr in ("choice_", "w_", "reduction_revenue_", "e_second_", "revenue_"):
        if hasattr(est, attr):
            result[attr.rstrip("_")] = getattr(est, attr)
    _emit(result, args.output)
    return 0


def cmd_mc_estimate(args) -> int:
    desc = _json_arg(args.mech)
    FJ = load_instance(args.instance)["joint"]
    est = mc.estimate_revenue(desc, FJ, args.samples, args.seed, n_jobs=args.n_jobs)
    row = {"mech": desc.get("mech"), "w": desc.get("w", ""), "mean": est.mean, "stderr": est.stderr,
           "n": est.n_samples, "seed": est.seed}
    path = Path(args.csv) if args.csv else output_dir(args.out) / "mc_estimate.csv"
    mc.write_estimates_csv([row], path)
    print(json.dumps(row))
    return 0


def _iid_arg(args):
    """(F, n, k) from --dist/--n/--k or an iid instance file."""
    if args.dist:
        return dist_from_spec(_json_arg(args.dist)), args.n, args.k
    FJ = load_instance(args.instance)["joint"]
    if FJ.model != "iid":
        raise SystemExit("sweeps need an iid prior")
    return FJ.dist, FJ.n, FJ.k


def cmd_sweep_spb(args) -> int:
    F, n, k = _iid_arg(args)
    grid = _floats(args.grid) if args.grid else spb_w_grid(F, n, k)
    res = mc.spb_sweep(F, n, k, grid, args.samples, args.seed, n_jobs=args.n_jobs)
    path = Path(args.csv) if args.csv else output_dir(args.out) / "sweep_spb.csv"
    mc.write_estimates_csv(res.rows(), path)
    w, e = res.best
    print(json.dumps({"csv": str(path), "best_w": w, "best": e.to_json(), "benchmark": closed_form_revenue(F, n, k)}))
    return 0


def cmd_sweep_closed_form(args) -> int:
    F = dist_from_spec(_json_arg(args.dist))
    rows = [{"n": n, "k": k, "k_A_m": closed_form_revenue(F, n, k)}
            for n in (int(v) for v in _floats(args.n_values)) for k in (int(v) for v in _floats(args.k_values))]
    path = Path(args.csv) if args.csv else output_dir(args.out) / "sweep_closed_form.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("n", "k", "k_A_m"))
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"csv": str(path), "rows": len(rows)}))
    return 0


def _load_corpus(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        if (path / "corpus.json").exists():
            return load_file(path / "corpus.json")["instances"]
        return [load_file(p) for p in sorted(path.glob("instance_*.json"))]
    obj = load_file(path)
    return obj["instances"] if isinstance(obj, dict) else obj


def cmd_verify(args) -> int:
    cfg = _config(args)
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    corpus = _load_corpus(args.corpus) if args.corpus else None
    out = output_dir(args.out)
    code = 0
    for name in names:
        res = verify(name, corpus, cfg)
        _, json_path, rc = report_emit(res, out)
        s = res.summary()
        print(f"{name}: {'PASS' if rc == 0 else 'FAIL'} instances={s['n_instances']} checks={s['n_checks']} "
              f"violations={len(s['violations'])} skips={s['skips']} min_slack={s['min_slack']} "
              f"time={s['seconds']}s -> {json_path}")
        code = max(code, rc)
    return code


def cmd_report(args) -> int:
    directory = output_dir(args.out)
    summaries = [load_file(p) for p in sorted(directory.glob("*_summary.json"))]
    if not summaries:
        print(f"no suite summaries under {directory}", file=sys.stderr)
        return 1
    bad = [s["suite"] for s in summaries if not s.get("passed", not s["violations"])]
    table = [{"suite": s["suite"], "passed": s["suite"] not in bad, "violations": len(s["violations"]),
              "min_slack": s["min_slack"], "ratio_envelope": s["ratio_envelope"], "corpus_hash": s["corpus_hash"]}
             for s in summaries]
    _emit({"suites": table, "failed": bad}, directory / "report.json")
    return 1 if bad else 0


def cmd_menus_transform(args) -> int:
    menu = Menu.from_json(_json_arg(args.menu))
    out = profitable_transform(menu, _floats(args.beta), TransformParams(args.a, args.b))
    _emit(out.to_json(), args.output)
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bestguess", description="Best-Guess auction toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./bestguess-out)")
        if seed:
            sp.add_argument("--seed", type=int)

    g = sub.add_parser("gen", help="generate a seeded instance corpus")
    common(g)
    g.add_argument("--config")
    g.add_argument("--family", choices=("product", "item-independent", "cells", "iid"))
    g.add_argument("--count", type=int)
    g.add_argument("--name")
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("oracle", help="exact optimal revenue by LP")
    o.add_argument("kind", choices=("rev", "revx", "reva", "dsic", "bic", "drev"))
    o.add_argument("--instance", required=True)
    o.add_argument("--beta")
    o.add_argument("--full", action="store_true", help="include the LP solution")
    o.add_argument("--output")
    o.set_defaults(func=cmd_oracle)

    m = sub.add_parser("mech", help="run a mechanism")
    msub = m.add_subparsers(dest="mech_command", required=True)
    mr = msub.add_parser("run")
    mr.add_argument("--mech", required=True, help='descriptor, e.g. {"mech": "spb", "w": 1.5}')
    mr.add_argument("--instance")
    mr.add_argument("--x", help="bid matrix as JSON")
    mr.add_argument("--expected", action="store_true", help="average over tie draws")
    mr.add_argument("--revenue", action="store_true", help="exact expected revenue on the instance")
    mr.add_argument("--seed", type=int, default=0)
    mr.add_argument("--output")
    mr.set_defaults(func=cmd_mech_run)

    c = sub.add_parser("mc", help="Monte Carlo estimation")
    csub = c.add_subparsers(dest="mc_command", required=True)
    ce = csub.add_parser("estimate")
    common(ce, seed=False)
    ce.add_argument("--mech", required=True)
    ce.add_argument("--instance", required=True)
    ce.add_argument("--samples", type=int, default=100_000)
    ce.add_argument("--seed", type=int, default=0)
    ce.add_argument("--n-jobs", type=int, default=1)
    ce.add_argument("--csv")
    ce.set_defaults(func=cmd_mc_estimate)

    s = sub.add_parser("sweep", help="parameter sweeps")
    ssub = s.add_subparsers(dest="sweep_command", required=True)
    sp = ssub.add_parser("spb")
    common(sp, seed=False)
    sp.add_argument("--dist")
    sp.add_argument("--instance")
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--grid")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-jobs", type=int, default=1)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_sweep_spb)
    sc = ssub.add_parser("closed-form")
    common(sc, seed=False)
    sc.add_argument("--dist", required=True)
    sc.add_argument("--n-values", default="1,2,3")
    sc.add_argument("--k-values", default="1,2,3,6")
    sc.add_argument("--csv")
    sc.set_defaults(func=cmd_sweep_closed_form)

    v = sub.add_parser("verify", help="run an inequality suite")
    common(v)
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    v.add_argument("--config")
    v.add_argument("--corpus", help="corpus directory or corpus.json")
    v.add_argument("--count", type=int)
    v.add_argument("--n-jobs", type=int, dest="n_jobs")
    v.add_argument("--mc-samples", type=int, dest="mc_samples")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="summarise suite reports in the output directory")
    common(r, seed=False)
    r.set_defaults(func=cmd_report)

    mn = sub.add_parser("menus", help="menu transforms")
    mnsub = mn.add_subparsers(dest="menus_command", required=True)
    mt = mnsub.add_parser("transform")
    mt.add_argument("--menu", required=True)
    mt.add_argument("--beta", required=True)
    mt.add_argument("--a", type=float, default=4.0)
    mt.add_argument("--b", type=float, default=0.75)
    mt.add_argument("--output")
    mt.set_defaults(func=cmd_menus_transform)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return int(args.func(args) or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
