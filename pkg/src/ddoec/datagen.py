"""COP grid sweeps and the paired ideal / erroneous / residual databases.

CSV schema v1 (one file per database)::

    lambda_dbs,r_sz_m,p_tx_dbm,ase,ee,flavor,n_cycles,seed

Floats are written with 17 significant digits so a save/load round trip is
exact. Every CSV has a JSON sidecar with the same basename and a ``.meta``
suffix holding ``schema_version``, ``flavor``, ``bounds``, ``bins``,
``master_seed``, ``n_cycles`` and the radio / power / network parameters.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .netsim import (Bounds, CopPoint, NetworkParams, PowerModelParams, RadioParams,
                     paired_average_kpis)
from .seeding import derive_seed

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = ("lambda_dbs", "r_sz_m", "p_tx_dbm", "ase", "ee", "flavor", "n_cycles", "seed")
DB_FLAVORS = ("ideal", "erroneous", "residual")


class DatabaseFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRow:
    cop: CopPoint
    ase: float
    ee: float
    flavor: str
    n_cycles: int
    seed: int


@dataclass
class Database:
    rows: list[DatasetRow]
    bounds: Bounds | None = None
    bins: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def flavor(self) -> str | None:
        return self.meta.get("flavor") or (self.rows[0].flavor if self.rows else None)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.cop.as_array() for r in self.rows]).reshape(-1, 3)

    def target(self, name: str) -> np.ndarray:
        if name not in ("ase", "ee"):
            raise ValueError(f"unknown target {name!r}")
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def subset(self, idx) -> "Database":
        return Database([self.rows[i] for i in idx], self.bounds, self.bins, dict(self.meta))


def cop_grid(bounds: Bounds, bins: int) -> list[CopPoint]:
    """Inclusive ``bins``-point linspace per dimension, lambda_dbs outermost."""
    if int(bins) != bins or bins < 2:
        raise ValueError(f"bins must be an integer >= 2, got {bins!r}")
    axes = [np.linspace(lo, hi, int(bins)) for lo, hi in zip(bounds.lower, bounds.upper)]
    return [CopPoint(float(a), float(b), float(c)) for a, b, c in itertools.product(*axes)]


def _row_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, "datagen", index)


def _simulate_point(args):
    index, cop, rp, pm, net, n_cycles, seed = args
    try:
        return paired_average_kpis(cop, rp, pm, n_cycles, seed, net)
    except Exception as exc:
        raise RuntimeError(f"simulation failed at grid index {index}, COP {cop}: {exc}") from exc


def generate_paired_databases(grid: list[CopPoint], rp: RadioParams, pm: PowerModelParams,
                              n_cycles: int, master_seed: int, net: NetworkParams | None = None,
                              bounds: Bounds | None = None, bins: int | None = None,
                              jobs: int = 1) -> tuple[Database, Database]:
    """Ideal and erroneous databases over ``grid`` with common random numbers per row."""
    if not grid:
        raise ValueError("grid is empty")
    net = net or NetworkParams()
    seeds = [_row_seed(master_seed, i) for i in range(len(grid))]
    work = [(i, cop, rp, pm, net, n_cycles, s) for i, (cop, s) in enumerate(zip(grid, seeds))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_point, work, chunksize=8))
    else:
        results = []
        for i, item in enumerate(work):
            results.append(_simulate_point(item))
            if (i + 1) % 100 == 0:
                log.info("simulated %d/%d grid points", i + 1, len(work))
    meta = {
        "schema_version": SCHEMA_VERSION,
        "master_seed": int(master_seed),
        "n_cycles": int(n_cycles),
        "radio": asdict(rp),
        "power": asdict(pm),
        "network": asdict(net),
    }
    dbs = []
    for flavor in ("ideal", "erroneous"):
        rows = [DatasetRow(cop, res[flavor].ase, res[flavor].ee, flavor, n_cycles, s)
                for cop, res, s in zip(grid, results, seeds)]
        dbs.append(Database(rows, bounds, bins, {**meta, "flavor": flavor}))
    return dbs[0], dbs[1]


def check_aligned(a: Database, b: Database) -> None:
    if len(a) != len(b):
        raise ValueError(f"databases differ in length ({len(a)} vs {len(b)})")
    for i, (ra, rb) in enumerate(zip(a.rows, b.rows)):
        if ra.cop != rb.cop:
            raise ValueError(f"COP grids differ at row {i}: {ra.cop} vs {rb.cop}")


def residualize(ideal: Database, erroneous: Database) -> Database:
    """Row-wise ideal minus erroneous KPIs."""
    check_aligned(ideal, erroneous)
    rows = [DatasetRow(ri.cop, ri.ase - re.ase, ri.ee - re.ee, "residual", re.n_cycles, re.seed)
            for ri, re in zip(ideal.rows, erroneous.rows)]
    meta = {**erroneous.meta, "flavor": "residual"}
    return Database(rows, erroneous.bounds or ideal.bounds, erroneous.bins or ideal.bins, meta)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta")


def persist_database(db: Database, path) -> None:
    path = Path(path)
    meta = dict(db.meta)
    meta["schema_version"] = SCHEMA_VERSION
    meta["bounds"] = db.bounds.to_dict() if db.bounds else None
    meta["bins"] = db.bins
    meta.setdefault("flavor", db.flavor)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in db.rows:
            writer.writerow([_fmt(r.cop.lambda_dbs), _fmt(r.cop.r_sz), _fmt(r.cop.p_tx_dbm),
                             _fmt(r.ase), _fmt(r.ee), r.flavor, r.n_cycles, r.seed])
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _parse_float(text: str, line: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatabaseFormatError(f"line {line}, column {col!r}: not a number: {text!r}") from None


def _parse_int(text: str, line: int, col: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DatabaseFormatError(f"line {line}, column {col!r}: not an integer: {text!r}") from None


def load_database(path) -> Database:
    path = Path(path)
    mpath = meta_path(path)
    try:
        meta = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatabaseFormatError(f"missing metadata sidecar {mpath}") from None
    except json.JSONDecodeError as exc:
        raise DatabaseFormatError(f"{mpath}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    version = meta.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatabaseFormatError(f"schema version {version!r} not supported (expected {SCHEMA_VERSION})")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatabaseFormatError(f"{path}: line 1: missing header")
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise DatabaseFormatError(f"{path}: line 1: missing column {missing[0]!r}")
        pos = {c: header.index(c) for c in COLUMNS}
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DatabaseFormatError(
                    f"{path}: line {line_no}, column {len(rec) + 1}: expected {len(header)} fields, got {len(rec)}")
            get = {c: rec[i] for c, i in pos.items()}
            flavor = get["flavor"]
            if flavor not in DB_FLAVORS:
                raise DatabaseFormatError(f"{path}: line {line_no}, column 'flavor': unknown flavor {flavor!r}")
            cop = CopPoint(_parse_float(get["lambda_dbs"], line_no, "lambda_dbs"),
                           _parse_float(get["r_sz_m"], line_no, "r_sz_m"),
                           _parse_float(get["p_tx_dbm"], line_no, "p_tx_dbm"))
            rows.append(DatasetRow(cop, _parse_float(get["ase"], line_no, "ase"),
                                   _parse_float(get["ee"], line_no, "ee"), flavor,
                                   _parse_int(get["n_cycles"], line_no, "n_cycles"),
                                   _parse_int(get["seed"], line_no, "seed")))
    bounds = Bounds.from_dict(meta["bounds"]) if meta.get("bounds") else None
    bins = meta.get("bins")
    extra = {k: v for k, v in meta.items() if k not in ("bounds", "bins")}
    return Database(rows, bounds, bins, extra)
