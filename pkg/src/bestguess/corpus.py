"""Seeded random corpora of small discrete instances."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import canonical_hash, dump_json, instance_to_json
from .valuedist import DiscreteDist, Dist1D, JointValuation, ProductDist

__all__ = ["CorpusConfig", "gen_corpus", "write_corpus", "random_dist", "corpus_hash", "FAMILIES"]

FAMILIES = ("product", "item-independent", "cells", "iid")


@dataclass(frozen=True)
class CorpusConfig:
    """Instance-corpus parameters.

    ``family`` picks the shape: one-bidder ``product`` laws with a threshold
    vector, ``item-independent`` joints (independent grids mixed with
    correlated-column tables), ``cells`` (every cell independent) or ``iid``.
    """

    family: str = "product"
    count: int = 100
    n_range: tuple = (1, 2)
    k_range: tuple = (1, 2)
    max_atoms: int = 3
    values: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
    seed: int = 0
    column_share: float = 0.5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        for name in ("n_range", "k_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if self.max_atoms < 1 or self.max_atoms > len(self.values):
            raise ValueError("max_atoms must lie in [1, number of values]")
        if any(v < 0 for v in self.values):
            raise ValueError("values must be nonnegative")
        if not 0 <= self.column_share <= 1:
            raise ValueError("column_share must lie in [0, 1]")

    @classmethod
    def from_dict(cls, obj: dict) -> "CorpusConfig":
        obj = dict(obj)
        for key in ("n_range", "k_range", "values"):
            if key in obj:
                obj[key] = tuple(obj[key])
        known = {f for f in cls.__dataclass_fields__}
        extra = {k: v for k, v in obj.items() if k not in known}
        obj = {k: v for k, v in obj.items() if k in known}
        obj.setdefault("extra", {}).update(extra)
        return cls(**obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_range"], out["k_range"], out["values"] = list(self.n_range), list(self.k_range), list(self.values)
        return out


def _probs(rng, size: int) -> np.ndarray:
    w = rng.integers(1, 5, size=size).astype(float)
    return w / w.sum()


def random_dist(rng: np.random.Generator, values, max_atoms: int) -> Dist1D:
    m = int(rng.integers(1, max_atoms + 1))
    atoms = np.sort(rng.choice(np.asarray(values, dtype=float), size=m, replace=False))
    return Dist1D.discrete(list(zip(atoms.tolist(), _probs(rng, m).tolist())))


def _beta(rng, values, k: int) -> list[float]:
    pool = np.unique(np.concatenate([[0.0], values, np.asarray(values) + 0.5]))
    return rng.choice(pool, size=k).tolist()


def _column(rng, values, n: int, max_atoms: int) -> DiscreteDist:
    m = int(rng.integers(1, max_atoms + 1))
    pts = rng.choice(np.asarray(values, dtype=float), size=(m, n))
    return DiscreteDist(pts, _probs(rng, m))


def _instance(cfg: CorpusConfig, rng: np.random.Generator, index: int) -> dict:
    k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
    meta = {"index": index, "family": cfg.family}
    if cfg.family == "product":
        L = ProductDist(tuple(random_dist(rng, cfg.values, cfg.max_atoms) for _ in range(k)))
        return instance_to_json(product=L, beta=_beta(rng, cfg.values, k), meta=meta)
    n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
    if cfg.family == "iid":
        FJ = JointValuation.iid(random_dist(rng, cfg.values, cfg.max_atoms), n, k)
        meta.update(item_independent=True, cells_independent=True)
    elif cfg.family == "item-independent" and rng.random() < cfg.column_share:
        FJ = JointValuation.from_columns([_column(rng, cfg.values, n, cfg.max_atoms) for _ in range(k)])
        meta.update(item_independent=True, cells_independent=False)
    else:
        FJ = JointValuation.from_grid([[random_dist(rng, cfg.values, cfg.max_atoms) for _ in range(k)]
                                       for _ in range(n)])
        meta.update(item_independent=True, cells_independent=True)
    return instance_to_json(joint=FJ, meta=meta)


def gen_corpus(cfg: CorpusConfig | dict) -> list[dict]:
    """``cfg.count`` instance objects, a pure function of the config."""
    if isinstance(cfg, dict):
        cfg = CorpusConfig.from_dict(cfg)
    root = np.random.SeedSequence([int(cfg.seed), FAMILIES.index(cfg.family)])
    return [_instance(cfg, np.random.default_rng(child), i) for i, child in enumerate(root.spawn(cfg.count))]


def corpus_hash(instances: list[dict]) -> str:
    return canonical_hash(instances)


def write_corpus(instances: list[dict], directory, config: dict | None = None) -> list[Path]:
    """One JSON file per instance plus ``corpus.json`` with all of them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for inst in instances:
        path = directory / f"instance_{inst['meta']['index']:05d}.json"
        dump_json(inst, path, sort_keys=True)
        paths.append(path)
    dump_json({"config": config or {}, "hash": corpus_hash(instances), "instances": instances},
              directory / "corpus.json", sort_keys=True)
    return paths
