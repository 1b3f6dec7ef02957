"""Config and instance files (JSON or TOML)."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .valuedist import Dist1D, JointValuation, ProductDist

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

__all__ = [
    "OUTPUT_DIR_ENV",
    "output_dir",
    "load_file",
    "dist_from_spec",
    "joint_from_spec",
    "product_from_spec",
    "load_instance",
    "instance_to_json",
    "canonical_hash",
    "dump_json",
]

OUTPUT_DIR_ENV = "BESTGUESS_OUTPUT_DIR"


def output_dir(override=None) -> Path:
    """``override``, else ``$BESTGUESS_OUTPUT_DIR``, else ``./bestguess-out``."""
    path = Path(override or os.environ.get(OUTPUT_DIR_ENV) or "bestguess-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_file(path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def dist_from_spec(spec, named: dict | None = None) -> Dist1D:
    """A ``Dist1D`` from its JSON form, or a name looked up in ``named``."""
    if isinstance(spec, str):
        if not named or spec not in named:
            raise ValueError(f"unknown distribution name {spec!r}")
        return dist_from_spec(named[spec], named)
    if isinstance(spec, Dist1D):
        return spec
    return Dist1D.from_json(spec)


def _named(obj: dict) -> dict:
    return obj.get("dists", {})


def joint_from_spec(spec: dict, named: dict | None = None) -> JointValuation:
    """iid, grid or table joint model."""
    named = named or {}
    if "iid" in spec:
        body = spec["iid"]
        return JointValuation.iid(dist_from_spec(body["dist"], named), int(body["n"]), int(body["k"]))
    if "grid" in spec:
        return JointValuation.from_grid([[dist_from_spec(d, named) for d in row] for row in spec["grid"]])
    if "table" in spec:
        table = spec["table"]
        if isinstance(table, dict):
            mats, probs = table["matrices"], table["probs"]
        else:
            mats, probs = [t[0] for t in table], [t[1] for t in table]
        return JointValuation.from_table(np.asarray(mats, dtype=float), np.asarray(probs, dtype=float),
                                         spec.get("item_independent"))
    raise ValueError("joint model needs one of 'iid', 'grid' or 'table'")


def product_from_spec(spec, named: dict | None = None) -> ProductDist:
    items = spec["items"] if isinstance(spec, dict) else spec
    return ProductDist(tuple(dist_from_spec(d, named) for d in items))


def load_instance(source) -> dict:
    """Parse an instance file or dict.

    Returns a dict with ``joint`` (a JointValuation) or ``product`` (a one
    bidder law), plus optional ``beta`` and ``meta``.
    """
    obj = load_file(source) if isinstance(source, (str, Path)) else source
    named = _named(obj)
    out = {"meta": obj.get("meta", {}), "beta": obj.get("beta")}
    if "joint" in obj:
        out["joint"] = joint_from_spec(obj["joint"], named)
    elif any(key in obj for key in ("iid", "grid", "table")):
        out["joint"] = joint_from_spec(obj, named)
    if "product" in obj:
        out["product"] = product_from_spec(obj["product"], named)
    if "joint" not in out and "product" not in out:
        raise ValueError("instance has neither a joint model nor a one-bidder product law")
    return out


def instance_to_json(joint: JointValuation | None = None, product: ProductDist | None = None,
                     beta=None, meta: dict | None = None) -> dict:
    obj = {}
    if joint is not None:
        obj["joint"] = joint.to_json()
    if product is not None:
        obj["product"] = product.to_json()
    if beta is not None:
        obj["beta"] = [float(b) for b in beta]
    if meta:
        obj["meta"] = meta
    return obj


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dump_json(obj, path=None, **kw) -> str:
    text = json.dumps(obj, default=_default, **kw)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def canonical_hash(obj) -> str:
    """sha256 of sorted-key compact JSON."""
    text = json.dumps(obj, default=_default, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
