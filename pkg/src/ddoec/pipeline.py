"""End-to-end experiment: data, surrogates, optimisation trials, simulator validation.

Seed derivation from ``cfg.master_seed`` (see :mod:`ddoec.seeding`):

* database rows: ``derive_seed(derive_seed(master, "datagen"), "datagen", row)``
* model selection (fold shuffle, forest bootstraps): ``derive_seed(master, "train")``
* optimiser trial: ``derive_seed(master, "trial", algorithm, alpha, index)``; the
  baseline and DD-OEC runs of one trial share it
* simulator validation: ``derive_seed(master, "validate")`` for every COP
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .config import ExperimentConfig
from .datagen import (Database, cop_grid, generate_paired_databases, load_database,
                      persist_database, residualize)
from .netsim import CopPoint, average_kpis
from .optimizer import (ObjectiveSpec, OptResult, ga_optimize, make_fitness, objective_components,
                        sa_optimize)
from .seeding import derive_seed, stream
from .surrogate import (DEFAULT_MENU, TARGETS, ModelSet, load_model, save_model, train_kpi_models)

log = logging.getLogger(__name__)

RECORDS_VERSION = 1


@dataclass
class Databases:
    ideal: Database
    erroneous: Database
    residual: Database


def generate_data(cfg: ExperimentConfig) -> Databases:
    grid = cop_grid(cfg.bounds, cfg.bins)
    ideal, erroneous = generate_paired_databases(
        grid, cfg.radio, cfg.power, cfg.n_cycles, derive_seed(cfg.master_seed, "datagen"),
        cfg.network, cfg.bounds, cfg.bins, jobs=cfg.jobs)
    return Databases(ideal, erroneous, residualize(ideal, erroneous))


def save_data(dbs: Databases, data_dir) -> None:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for name in ("ideal", "erroneous", "residual"):
        persist_database(getattr(dbs, name), data_dir / f"{name}.csv")


def load_data(data_dir) -> Databases:
    data_dir = Path(data_dir)
    return Databases(*(load_database(data_dir / f"{n}.csv") for n in ("ideal", "erroneous", "residual")))


def normalizers(ideal: Database) -> tuple[float, float]:
    """KPI maxima of the ideal database, shared by every objective evaluation."""
    return float(ideal.target("ase").max()), float(ideal.target("ee").max())


@dataclass
class Surrogates:
    models: ModelSet
    theta_max: float
    eta_max: float

    def spec(self, alpha_se: float) -> ObjectiveSpec:
        return ObjectiveSpec(alpha_se, self.theta_max, self.eta_max)


def train(cfg: ExperimentConfig, dbs: Databases, menu=DEFAULT_MENU) -> Surrogates:
    models = train_kpi_models(dbs.erroneous, dbs.residual, cfg.kfold, menu,
                              seed=derive_seed(cfg.master_seed, "train"), ideal=dbs.ideal)
    return Surrogates(models, *normalizers(dbs.ideal))


MODEL_ROLES = ("model_e", "model_r", "model_i")


def save_surrogates(s: Surrogates, model_dir) -> None:
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    for (role, target), model in sorted(s.models.models.items()):
        save_model(model, model_dir / f"{role}_{target}.json")
    (model_dir / "normalizers.json").write_text(
        json.dumps({"theta_max": s.theta_max, "eta_max": s.eta_max}, sort_keys=True) + "\n")
    lines = ["role,target,candidate,mean_rmse,std_rmse,k,chosen\n"]
    for (role, target), rep in sorted(s.models.reports.items()):
        for e in rep.entries:
            lines.append(f"{role},{target},{e.name},{e.mean:.17g},{e.std:.17g},{rep.k},"
                         f"{int(e.name == rep.chosen)}\n")
    (model_dir / "cv_report.csv").write_text("".join(lines))


class MissingModelsError(FileNotFoundError):
    pass


def load_surrogates(model_dir, roles=MODEL_ROLES) -> Surrogates:
    model_dir = Path(model_dir)
    norm_path = model_dir / "normalizers.json"
    if not norm_path.exists():
        raise MissingModelsError(f"no trained models in {model_dir}; run `train` first")
    models = ModelSet()
    for role in roles:
        for target in TARGETS:
            path = model_dir / f"{role}_{target}.json"
            if not path.exists():
                raise MissingModelsError(f"missing {path}; run `train` first")
            models.add(load_model(path, role=role, target_name=target))
    norm = json.loads(norm_path.read_text())
    return Surrogates(models, float(norm["theta_max"]), float(norm["eta_max"]))


# ---------------------------------------------------------------- validation ---

def validation_seed(cfg: ExperimentConfig) -> int:
    return derive_seed(cfg.master_seed, "validate")


def validate_on_simulator(cop: CopPoint, cfg: ExperimentConfig, spec: ObjectiveSpec,
                          seed: int | None = None) -> tuple[float, float, float]:
    """Objective and its two weighted terms from the ideal-position simulator."""
    if not cfg.bounds.contains(cop):
        raise ValueError(f"COP {cop} outside the configured bounds")
    seed = validation_seed(cfg) if seed is None else seed
    k = average_kpis(cop, cfg.radio, cfg.power, cfg.val_cycles, "ideal", seed, cfg.network)
    a, e = objective_components(k.ase, k.ee, spec)
    return float(a + e), float(a), float(e)


# -------------------------------------------------------------------- trials ---

@dataclass
class TrialRecord:
    algorithm: str
    scheme: str
    alpha_se: float
    trial: int
    seed: int
    best_cop: list | None = None
    reported_objective: float = math.nan
    reported_components: list = field(default_factory=lambda: [math.nan, math.nan])
    iterations_to_converge: int = -1
    trace: list = field(default_factory=list)
    oracle_trace: list = field(default_factory=list)
    validated_objective: float = math.nan
    validated_components: list = field(default_factory=lambda: [math.nan, math.nan])
    wall_time_s: float = field(default=0.0, compare=False)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def cell(self) -> tuple[str, float]:
        return self.algorithm, self.alpha_se


def trial_seed(cfg: ExperimentConfig, algorithm: str, alpha_se: float, index: int) -> int:
    return derive_seed(cfg.master_seed, "trial", algorithm, repr(float(alpha_se)), index)


def optimize_trial(cfg: ExperimentConfig, sur: Surrogates, algorithm: str, scheme: str,
                   alpha_se: float, index: int) -> TrialRecord:
    """Run one optimiser on one surrogate fitness (no simulator validation)."""
    seed = trial_seed(cfg, algorithm, alpha_se, index)
    rec = TrialRecord(algorithm, scheme, float(alpha_se), index, seed)
    start = time.perf_counter()
    try:
        spec = sur.spec(alpha_se)
        fitness = make_fitness(scheme, sur.models, spec)
        rng = stream(seed)
        if algorithm == "sa":
            res: OptResult = sa_optimize(fitness, cfg.bounds, cfg.sa, rng)
        elif algorithm == "ga":
            res = ga_optimize(fitness, cfg.bounds, cfg.ga, rng)
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        x = res.best_cop.as_array()[None, :]
        a, e = objective_components(*fitness.kpis(x), spec)
        rec.best_cop = [float(v) for v in res.best_cop.as_array()]
        rec.reported_objective = float(res.best_value)
        rec.reported_components = [float(a[0]), float(e[0])]
        rec.iterations_to_converge = int(res.iterations_to_converge)
        rec.trace = [float(v) for v in res.trace]
        if sur.models.has("model_i"):
            oracle = make_fitness("oracle", sur.models, spec)
            rec.oracle_trace = [float(v) for v in oracle(res.trace_cops)]
    except Exception as exc:  # recorded per trial, the experiment carries on
        log.exception("trial %s/%s/%s/%d failed", algorithm, scheme, alpha_se, index)
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time_s = time.perf_counter() - start
    return rec


class _Validator:
    """Fills validated objectives; simulator KPIs are cached per COP."""

    def __init__(self, cfg: ExperimentConfig, sur: Surrogates):
        self.cfg, self.sur = cfg, sur
        self.seed = validation_seed(cfg)
        self.cache: dict[tuple, tuple[float, float]] = {}

    def kpis(self, cop_row) -> tuple[float, float]:
        key = tuple(float(v) for v in cop_row)
        if key not in self.cache:
            cop = CopPoint.from_array(np.array(key))
            if not self.cfg.bounds.contains(cop):
                raise ValueError(f"COP {cop} outside the configured bounds")
            k = average_kpis(cop, self.cfg.radio, self.cfg.power, self.cfg.val_cycles, "ideal",
                             self.seed, self.cfg.network)
            self.cache[key] = (k.ase, k.ee)
        return self.cache[key]

    def __call__(self, rec: TrialRecord) -> TrialRecord:
        if not rec.ok or rec.best_cop is None:
            return rec
        start = time.perf_counter()
        try:
            a, e = objective_components(*self.kpis(rec.best_cop), self.sur.spec(rec.alpha_se))
            rec.validated_objective = float(a + e)
            rec.validated_components = [float(a), float(e)]
        except Exception as exc:
            rec.error = f"validation: {type(exc).__name__}: {exc}"
        rec.wall_time_s += time.perf_counter() - start
        return rec


def validate_records(cfg: ExperimentConfig, sur: Surrogates, records: list[TrialRecord]) -> list[TrialRecord]:
    check = _Validator(cfg, sur)
    return [check(r) for r in records]


def run_trial(cfg: ExperimentConfig, sur: Surrogates, algorithm: str, scheme: str,
              alpha_se: float, index: int) -> TrialRecord:
    rec = optimize_trial(cfg, sur, algorithm, scheme, alpha_se, index)
    return _Validator(cfg, sur)(rec)


def optimize_all(cfg: ExperimentConfig, sur: Surrogates, algorithms=None, schemes=None,
                 alphas=None) -> list[TrialRecord]:
    records = []
    for algo in algorithms or cfg.algorithms:
        for alpha in alphas or cfg.alpha_se:
            for scheme in schemes or cfg.schemes:
                for t in range(cfg.trials):
                    records.append(optimize_trial(cfg, sur, algo, scheme, alpha, t))
    return records


@dataclass
class ExperimentResult:
    records: list[TrialRecord]
    summary: list[dict]
    databases: Databases | None = None
    surrogates: Surrogates | None = None


def run_experiment(cfg: ExperimentConfig, dbs: Databases | None = None,
                   sur: Surrogates | None = None) -> ExperimentResult:
    """Full {algorithm x scheme x weight x trial} cross product, validated on the simulator."""
    dbs = dbs or generate_data(cfg)
    sur = sur or train(cfg, dbs)
    records = validate_records(cfg, sur, optimize_all(cfg, sur))
    return ExperimentResult(records, summarize(records), dbs, sur)


# ------------------------------------------------------------------- summary ---

def sign_test(diffs, alternative: str = "greater") -> float:
    """Sign test p-value on paired differences; exact zeros are dropped."""
    diffs = np.asarray(diffs, dtype=float)
    pos, neg = int(np.sum(diffs > 0)), int(np.sum(diffs < 0))
    if pos + neg == 0:
        return 1.0
    return float(binomtest(pos, pos + neg, 0.5, alternative=alternative).pvalue)


def _paired(records, algo, alpha):
    by = {}
    for r in records:
        if r.algorithm == algo and r.alpha_se == alpha:
            by.setdefault(r.trial, {})[r.scheme] = r
    return [(v["baseline"], v["ddoec"]) for _, v in sorted(by.items())
            if "baseline" in v and "ddoec" in v and v["baseline"].ok and v["ddoec"].ok]


def summarize(records: list[TrialRecord]) -> list[dict]:
    cells = sorted({r.cell for r in records})
    out = []
    for algo, alpha in cells:
        row = {"algorithm": algo, "alpha_se": alpha}
        complete = True
        for scheme in ("baseline", "ddoec"):
            recs = [r for r in records if r.cell == (algo, alpha) and r.scheme == scheme]
            ok = [r for r in recs if r.ok]
            complete &= bool(recs) and len(ok) == len(recs)
            row[f"{scheme}_n"] = len(ok)
            if not ok:
                continue
            best = max(ok, key=lambda r: (r.validated_objective, -r.trial))
            row[f"{scheme}_reported"] = float(np.mean([r.reported_objective for r in ok]))
            row[f"{scheme}_reported_ase"] = float(np.mean([r.reported_components[0] for r in ok]))
            row[f"{scheme}_reported_ee"] = float(np.mean([r.reported_components[1] for r in ok]))
            row[f"{scheme}_validated"] = float(np.mean([r.validated_objective for r in ok]))
            row[f"{scheme}_validated_ase"] = float(np.mean([r.validated_components[0] for r in ok]))
            row[f"{scheme}_validated_ee"] = float(np.mean([r.validated_components[1] for r in ok]))
            row[f"{scheme}_best_cop"] = list(best.best_cop)
            iters = [r.iterations_to_converge for r in ok]
            row[f"{scheme}_iters_median"] = float(np.median(iters))
            row[f"{scheme}_iters_q1"] = float(np.percentile(iters, 25))
            row[f"{scheme}_iters_q3"] = float(np.percentile(iters, 75))
        pairs = _paired(records, algo, alpha)
        if pairs:
            base = np.array([b.validated_objective for b, _ in pairs])
            dd = np.array([d.validated_objective for _, d in pairs])
            row["relative_gain"] = float((dd.mean() - base.mean()) / base.mean())
            row["median_relative_gain"] = float(np.median((dd - base) / base))
            row["sign_test_p"] = sign_test(dd - base, "greater")
        row["complete"] = complete
        out.append(row)
    return out


# ------------------------------------------------------------ records on disk ---

def _nan_to_none(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, list):
        return [_nan_to_none(x) for x in v]
    return v


_FLOAT_FIELDS = ("reported_objective", "validated_objective")
_FLOAT_LISTS = ("reported_components", "validated_components")


def records_to_json(records: list[TrialRecord]) -> str:
    """Strict JSON (NaN written as null); wall times are left out so reruns compare equal."""
    items = []
    for r in records:
        d = {k: _nan_to_none(v) for k, v in asdict(r).items()}
        d.pop("wall_time_s")
        items.append(d)
    return json.dumps({"version": RECORDS_VERSION, "records": items}, sort_keys=True, indent=1,
                      allow_nan=False) + "\n"


def records_from_json(text: str) -> list[TrialRecord]:
    d = json.loads(text)
    if d.get("version") != RECORDS_VERSION:
        raise ValueError(f"records version {d.get('version')!r} not supported")
    out = []
    for item in d["records"]:
        for k in _FLOAT_FIELDS:
            if item.get(k) is None:
                item[k] = math.nan
        for k in _FLOAT_LISTS:
            item[k] = [math.nan if v is None else v for v in item[k]]
        out.append(TrialRecord(**item))
    return out


def save_records(records: list[TrialRecord], path) -> None:
    Path(path).write_text(records_to_json(records))


def load_records(path) -> list[TrialRecord]:
    return records_from_json(Path(path).read_text())


def with_validation(records: list[TrialRecord], cfg: ExperimentConfig, sur: Surrogates) -> list[TrialRecord]:
    """Fresh copies of ``records`` with simulator-validated objectives filled in."""
    return validate_records(cfg, sur, [replace(r) for r in records])
