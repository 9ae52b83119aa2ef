"""Tree-ensemble regressors mapping COP triples to KPI values.

Everything here is plain numpy: CART regression trees with exhaustive
threshold search, least-squares gradient boosting on top of them, and a
bagged forest used as a non-boosting control.

Model file format (JSON, ``schema_version`` 1)::

    {"schema_version": 1, "kind": "gbt"|"rf"|"tree", "role": ..., "target_name": ...,
     "base_prediction": float, "learning_rate": float, "hparams": {...},
     "scaler": {"min": [3 floats], "max": [3 floats]},
     "target_range": [min, max],
     "trees": [{"feature": [...], "threshold": [...], "left": [...],
                "right": [...], "value": [...], "max_depth": int, "min_leaf": int}, ...]}

Node 0 is the root; ``feature == -1`` marks a leaf. Leaf values are in the
target's original units, so ``predict = base_prediction + learning_rate *
sum(tree outputs)``. JSON floats are written as shortest round-trip
decimals, so a reload predicts bit-identically.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .netsim import CopPoint
from .seeding import stream

MODEL_SCHEMA_VERSION = 1
ROLES = ("model_e", "model_r", "model_i")
TARGETS = ("ase", "ee")


class ModelFormatError(ValueError):
    pass


@dataclass(eq=False)
class MinMaxScaler:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.max - self.min
        safe = np.where(span > 0, span, 1.0)
        Z = np.where(span > 0, (X - self.min) / safe, 0.0)
        return np.clip(Z, 0.0, 1.0)


@dataclass(eq=False)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int
    min_leaf: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``Z``."""
        Z = np.atleast_2d(Z)
        node = np.zeros(len(Z), dtype=np.int64)
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            x = Z[np.arange(len(Z)), np.where(inner, f, 0)]
            nxt = np.where(x <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(inner, nxt, node)
        return node

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return self.value[self.apply(Z)]

    def scaled(self, factor: float) -> "RegressionTree":
        return RegressionTree(self.feature, self.threshold, self.left, self.right,
                              self.value * factor, self.max_depth, self.min_leaf)


def _best_split(Z: np.ndarray, y: np.ndarray, idx: np.ndarray, min_leaf: int):
    """Best (gain, feature, threshold, left_mask) for the samples ``idx``, or None."""
    n = len(idx)
    if n < 2 * min_leaf:
        return None
    yy = y[idx]
    total = yy.sum()
    base = total * total / n
    best = None
    best_gain = 1e-12 * max(1.0, float(np.dot(yy, yy)))
    counts = np.arange(1, n, dtype=float)
    for f in range(Z.shape[1]):
        x = Z[idx, f]
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], yy[order]
        csum = np.cumsum(ys)[:-1]
        sse_gain = csum * csum / counts + (total - csum) ** 2 / (n - counts) - base
        ok = xs[:-1] < xs[1:]
        ok[: min_leaf - 1] = False
        ok[n - min_leaf:] = False
        if not ok.any():
            continue
        gains = np.where(ok, sse_gain, -np.inf)
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = gains[i]
            thr = 0.5 * (xs[i] + xs[i + 1])
            best = (f, thr)
    if best is None:
        return None
    f, thr = best
    return f, thr, Z[idx, f] <= thr


def fit_tree(Z: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> RegressionTree:
    """CART least-squares tree on already-scaled features ``Z``."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth:
            continue
        split = _best_split(Z, y, idx, min_leaf)
        if split is None:
            continue
        f, thr, mask = split
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value, dtype=float), int(max_depth), int(min_leaf))


@dataclass(frozen=True)
class ModelSpec:
    """One candidate of the model menu."""

    name: str
    kind: str = "gbt"  # gbt | rf | tree
    n_trees: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gbt", "rf", "tree"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("n_trees >= 1, max_depth >= 0 and min_leaf >= 1 required")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")


DEFAULT_MENU = (
    ModelSpec("gbt_200_0.1_d3", "gbt", 200, 0.1, 3),
    ModelSpec("gbt_400_0.05_d3", "gbt", 400, 0.05, 3),
    ModelSpec("gbt_200_0.1_d4", "gbt", 200, 0.1, 4),
    ModelSpec("rf_200_d6", "rf", 200, 1.0, 6),
)

SINGLE_TREE = ModelSpec("tree_d6", "tree", 1, 1.0, 6)


@dataclass(eq=False)
class GbtModel:
    base_prediction: float
    trees: list[RegressionTree]
    learning_rate: float
    scaler: MinMaxScaler
    target_name: str = "ase"
    role: str = "model_e"
    kind: str = "gbt"
    hparams: dict = field(default_factory=dict)
    target_range: tuple[float, float] = (0.0, 0.0)
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def _pack(self):
        if self._packed is None:
            size = max((t.n_nodes for t in self.trees), default=1)
            n = len(self.trees)
            F = np.full((n, size), -1, dtype=np.int64)
            T = np.zeros((n, size))
            L = np.zeros((n, size), dtype=np.int64)
            R = np.zeros((n, size), dtype=np.int64)
            V = np.zeros((n, size))
            for i, t in enumerate(self.trees):
                k = t.n_nodes
                F[i, :k], T[i, :k], L[i, :k], R[i, :k], V[i, :k] = (
                    t.feature, t.threshold, t.left, t.right, t.value)
            depth = max((t.max_depth for t in self.trees), default=0)
            self._packed = (F, T, L, R, V, depth)
        return self._packed

    def predict_array(self, X: np.ndarray) -> np.ndarray:
        """Predictions for an (m, 3) array of raw COP rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = self.scaler.transform(X)
        if not self.trees:
            return np.full(len(Z), self.base_prediction)
        F, T, L, R, V, depth = self._pack()
        m, n = len(Z), F.shape[0]
        rows = np.arange(n)[None, :]
        node = np.zeros((m, n), dtype=np.int64)
        for _ in range(depth + 1):
            f = F[rows, node]
            inner = f >= 0
            if not inner.any():
                break
            x = np.take_along_axis(Z, np.where(inner, f, 0), axis=1)
            nxt = np.where(x <= T[rows, node], L[rows, node], R[rows, node])
            node = np.where(inner, nxt, node)
        return self.base_prediction + self.learning_rate * V[rows, node].sum(axis=1)

    def __call__(self, X) -> np.ndarray:
        return self.predict_array(X)


def predict(model: GbtModel, cop: CopPoint | Sequence[float]) -> float:
    x = cop.as_array() if isinstance(cop, CopPoint) else np.asarray(cop, dtype=float)
    return float(model.predict_array(x[None, :])[0])


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if len(X) != len(y):
        raise ValueError(f"X and y lengths differ ({len(X)} vs {len(y)})")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y


def fit_model(X, y, spec: ModelSpec, target_name: str = "ase", role: str = "model_e") -> GbtModel:
    """Fit one candidate; targets are min-max normalised internally."""
    X, y = _check_xy(X, y)
    if len(y) < 2 * spec.min_leaf and spec.kind != "tree":
        raise ValueError(f"need at least {2 * spec.min_leaf} rows, got {len(y)}")
    scaler = MinMaxScaler.fit(X)
    Z = scaler.transform(X)
    y_min, y_max = float(y.min()), float(y.max())
    scale = y_max - y_min
    yn = (y - y_min) / scale if scale > 0 else np.zeros_like(y)

    trees: list[RegressionTree] = []
    if spec.kind == "gbt":
        base_n = float(np.mean(yn))
        pred = np.full(len(yn), base_n)
        for _ in range(spec.n_trees):
            tree = fit_tree(Z, yn - pred, spec.max_depth, spec.min_leaf)
            pred = pred + spec.learning_rate * tree.predict(Z)
            trees.append(tree)
        lr = spec.learning_rate
    elif spec.kind == "rf":
        base_n = 0.0
        rng = stream(spec.seed, "forest")
        for _ in range(spec.n_trees):
            boot = rng.integers(0, len(yn), len(yn))
            trees.append(fit_tree(Z[boot], yn[boot], spec.max_depth, spec.min_leaf))
        lr = 1.0 / spec.n_trees
    else:
        base_n = 0.0
        trees.append(fit_tree(Z, yn, spec.max_depth, spec.min_leaf))
        lr = 1.0
    return GbtModel(
        base_prediction=y_min + scale * base_n,
        trees=[t.scaled(scale) for t in trees],
        learning_rate=lr,
        scaler=scaler,
        target_name=target_name,
        role=role,
        kind=spec.kind,
        hparams=asdict(spec),
        target_range=(y_min, y_max),
    )


def fit_gbt(X, y, n_trees: int = 200, learning_rate: float = 0.1, max_depth: int = 3,
            min_leaf: int = 3, target_name: str = "ase", role: str = "model_e") -> GbtModel:
    spec = ModelSpec("gbt", "gbt", n_trees, learning_rate, max_depth, min_leaf)
    return fit_model(X, y, spec, target_name, role)


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return math.sqrt(float(np.mean(d * d)))


@dataclass
class CvEntry:
    name: str
    fold_rmse: np.ndarray  # original target units

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_rmse))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_rmse))


@dataclass
class CvReport:
    target_name: str
    role: str
    k: int
    entries: list[CvEntry]
    chosen: str
    target_range: float

    def entry(self, name: str) -> CvEntry:
        return next(e for e in self.entries if e.name == name)

    @property
    def chosen_rmse(self) -> float:
        return self.entry(self.chosen).mean


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    perm = stream(seed, "kfold").permutation(n)
    return np.array_split(perm, k)


def kfold_rmse(X, y, k: int, spec: ModelSpec, seed: int = 0) -> CvEntry:
    """Held-out RMSE per fold of a shuffled contiguous k-fold split."""
    X, y = _check_xy(X, y)
    folds = kfold_indices(len(y), k, seed)
    errs = []
    for test in folds:
        train = np.setdiff1d(np.arange(len(y)), test)
        model = fit_model(X[train], y[train], spec)
        errs.append(rmse(model.predict_array(X[test]), y[test]))
    return CvEntry(spec.name, np.array(errs))


def select_model(X, y, k: int, menu: Sequence[ModelSpec], target_name: str, role: str,
                 seed: int = 0) -> tuple[GbtModel, CvReport]:
    """Cross-validate every candidate, refit the lowest-mean-RMSE one on all rows."""
    entries = [kfold_rmse(X, y, k, spec, seed) for spec in menu]
    best = min(range(len(menu)), key=lambda i: entries[i].mean)  # first wins ties
    model = fit_model(X, y, menu[best], target_name, role)
    y = np.asarray(y, dtype=float)
    report = CvReport(target_name, role, k, entries, menu[best].name, float(y.max() - y.min()))
    return model, report


@dataclass
class ModelSet:
    """The surrogate models one optimisation run may use, keyed by (role, target)."""

    models: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def add(self, model: GbtModel, report: CvReport | None = None) -> None:
        self.models[(model.role, model.target_name)] = model
        if report is not None:
            self.reports[(model.role, model.target_name)] = report

    def get(self, role: str, target: str) -> GbtModel:
        try:
            return self.models[(role, target)]
        except KeyError:
            raise KeyError(f"no {role} model for target {target!r}") from None

    def has(self, role: str) -> bool:
        return all((role, t) in self.models for t in TARGETS)


def train_kpi_models(erroneous, residual, k: int = 5, menu: Sequence[ModelSpec] = DEFAULT_MENU,
                     seed: int = 0, ideal=None) -> ModelSet:
    """Model-E on the erroneous KPIs and Model-R on the residuals, per target.

    With ``ideal`` given, ideal-trained models (role ``model_i``) are added
    too; those only serve as a reference surface for evaluation.
    """
    from .datagen import check_aligned

    check_aligned(erroneous, residual)
    out = ModelSet()
    sources = [("model_e", erroneous), ("model_r", residual)]
    if ideal is not None:
        check_aligned(erroneous, ideal)
        sources.append(("model_i", ideal))
    for role, db in sources:
        X = db.X
        for target in TARGETS:
            model, report = select_model(X, db.target(target), k, menu, target, role, seed)
            out.add(model, report)
    return out


def _tree_to_dict(t: RegressionTree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "max_depth": t.max_depth,
        "min_leaf": t.min_leaf,
    }


def model_to_dict(model: GbtModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": model.kind,
        "role": model.role,
        "target_name": model.target_name,
        "base_prediction": model.base_prediction,
        "learning_rate": model.learning_rate,
        "hparams": model.hparams,
        "scaler": {"min": model.scaler.min.tolist(), "max": model.scaler.max.tolist()},
        "target_range": list(model.target_range),
        "trees": [_tree_to_dict(t) for t in model.trees],
    }


def save_model(model: GbtModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), separators=(",", ":")) + "\n")


def model_from_dict(d: dict) -> GbtModel:
    version = d.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(f"model schema version {version!r} not supported")
    try:
        trees = []
        for td in d["trees"]:
            arrays = [np.asarray(td[key], dtype=dt) for key, dt in
                      (("feature", np.int64), ("threshold", float), ("left", np.int64),
                       ("right", np.int64), ("value", float))]
            if len({len(a) for a in arrays}) != 1 or len(arrays[0]) == 0:
                raise ModelFormatError("tree arrays have inconsistent lengths")
            trees.append(RegressionTree(*arrays, int(td["max_depth"]), int(td["min_leaf"])))
        model = GbtModel(
            base_prediction=float(d["base_prediction"]),
            trees=trees,
            learning_rate=float(d["learning_rate"]),
            scaler=MinMaxScaler(np.asarray(d["scaler"]["min"], dtype=float),
                                np.asarray(d["scaler"]["max"], dtype=float)),
            target_name=d["target_name"],
            role=d["role"],
            kind=d["kind"],
            hparams=dict(d["hparams"]),
            target_range=tuple(float(v) for v in d["target_range"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc!r}") from None
    if model.role not in ROLES or model.target_name not in TARGETS:
        raise ModelFormatError(f"unknown role/target {model.role!r}/{model.target_name!r}")
    return model


def load_model(path, role: str | None = None, target_name: str | None = None) -> GbtModel:
    """Load a model file; ``role``/``target_name`` if given must match the file's tags."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ModelFormatError(f"{path}: not a model object")
    model = model_from_dict(d)
    if role is not None and model.role != role:
        raise ModelFormatError(f"{path}: expected a {role} model, file holds {model.role}")
    if target_name is not None and model.target_name != target_name:
        raise ModelFormatError(f"{path}: expected target {target_name}, file holds {model.target_name}")
    return model
