"""Weighted ASE/EE objective and the two box-constrained metaheuristics.

Fitness functions are vectorised: they take an (m, 3) array of COP rows
``[lambda_dbs, r_sz, p_tx_dbm]`` and return m values, larger is better.
Both optimisers draw the same random numbers whatever the fitness values
are, so two fitness variants run with the same generator see identical
proposals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .netsim import Bounds, CopPoint
from .surrogate import ModelSet, TARGETS

Fitness = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ObjectiveSpec:
    alpha_se: float
    theta_max: float
    eta_max: float

    def __post_init__(self):
        if not 0.0 <= self.alpha_se <= 1.0:
            raise ValueError(f"alpha_se must lie in [0, 1], got {self.alpha_se}")
        if not (self.theta_max > 0 and self.eta_max > 0):
            raise ValueError("theta_max and eta_max must be > 0")


def objective_components(ase, ee, spec: ObjectiveSpec):
    """Weighted normalised (ASE, EE) terms; negative KPIs count as 0."""
    ase = np.maximum(np.asarray(ase, dtype=float), 0.0)
    ee = np.maximum(np.asarray(ee, dtype=float), 0.0)
    return spec.alpha_se * ase / spec.theta_max, (1.0 - spec.alpha_se) * ee / spec.eta_max


def objective_value(ase, ee, spec: ObjectiveSpec):
    a, e = objective_components(ase, ee, spec)
    out = a + e
    return float(out) if np.ndim(out) == 0 else out


FITNESS_ROLES = {
    "baseline": ("model_e",),
    "ddoec": ("model_e", "model_r"),
    "oracle": ("model_i",),
}


class SurrogateFitness:
    """Objective evaluated on summed surrogate predictions.

    ``kind`` picks the models: ``baseline`` uses Model-E, ``ddoec`` adds
    Model-R's residual to Model-E, ``oracle`` uses models trained on ideal
    data.
    """

    def __init__(self, kind: str, models: ModelSet, spec: ObjectiveSpec):
        if kind not in FITNESS_ROLES:
            raise ValueError(f"unknown fitness kind {kind!r}")
        self.kind = kind
        self.spec = spec
        self.parts: dict[str, list] = {t: [] for t in TARGETS}
        for role in FITNESS_ROLES[kind]:
            for target in TARGETS:
                model = models.get(role, target)
                if model.role != role or model.target_name != target:
                    raise ValueError(f"model registered as {role}/{target} is tagged "
                                     f"{model.role}/{model.target_name}")
                self.parts[target].append(model)

    def kpis(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _as_rows(X)
        ase = sum(m.predict_array(X) for m in self.parts["ase"])
        ee = sum(m.predict_array(X) for m in self.parts["ee"])
        return ase, ee

    def __call__(self, X) -> np.ndarray:
        return objective_value(*self.kpis(X), self.spec)


def _as_rows(X) -> np.ndarray:
    if isinstance(X, CopPoint):
        return X.as_array()[None, :]
    return np.atleast_2d(np.asarray(X, dtype=float))


def make_fitness(kind: str, models: ModelSet, spec: ObjectiveSpec) -> SurrogateFitness:
    return SurrogateFitness(kind, models, spec)


@dataclass(frozen=True)
class SaParams:
    t0: float = 250.0
    delta: float = 1e-4
    sigma: float = 0.01
    max_iters: int = 2000
    patience: int = 50
    step_frac: float = 0.1
    schedule_variant: Literal["literal", "aarts"] = "literal"
    tol: float = 1e-4
    sigma_adaptive: bool = False
    sigma_window: int = 50

    def __post_init__(self):
        if not (self.t0 > 0 and self.delta > 0 and self.sigma > 0):
            raise ValueError("t0, delta and sigma must be > 0")
        if not 0 < self.step_frac <= 1:
            raise ValueError("step_frac must lie in (0, 1]")
        if self.schedule_variant not in ("literal", "aarts"):
            raise ValueError(f"unknown schedule_variant {self.schedule_variant!r}")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be >= 1")


@dataclass(frozen=True)
class GaParams:
    pop_size: int = 24
    generations: int = 200
    tournament: int = 2
    blend_alpha: float = 0.5
    mutation_prob: float = 0.1
    mutation_scale: float = 0.1
    elite: int = 1
    patience: int = 10
    tol: float = 1e-4

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if not 0 <= self.elite < self.pop_size:
            raise ValueError("elite must satisfy 0 <= elite < pop_size")
        if self.tournament < 1 or self.generations < 1 or self.patience < 1:
            raise ValueError("tournament, generations and patience must be >= 1")


@dataclass
class OptResult:
    best_cop: CopPoint
    best_value: float
    trace: np.ndarray  # best-so-far after each iteration, index 0 = initialisation
    iterations_to_converge: int
    trace_cops: np.ndarray = field(repr=False, default=None)  # best-so-far COP rows
    temperatures: np.ndarray | None = field(repr=False, default=None)
    n_evals: int = 0


def sa_temp_update(t: float, p: SaParams, sigma: float | None = None) -> float:
    """One step of the adaptive cooling schedule.

    ``literal``: t / (1 + ln(1+delta) * 3 sigma * t)
    ``aarts``:   t / (1 + t * ln(1+delta) / (3 sigma))
    """
    s = p.sigma if sigma is None else sigma
    if p.schedule_variant == "literal":
        nxt = t / (1.0 + math.log1p(p.delta) * 3.0 * s * t)
    else:
        nxt = t / (1.0 + t * math.log1p(p.delta) / (3.0 * s))
    # 1 + tiny rounds to 1; keep the sequence strictly decreasing
    return nxt if nxt < t else math.nextafter(t, 0.0)


class _Convergence:
    """Tracks the last iteration at which best-so-far rose by at least ``tol``."""

    def __init__(self, value: float, tol: float):
        self.ref = value
        self.tol = tol
        self.last = 0

    def update(self, k: int, best: float) -> None:
        if best - self.ref >= self.tol:
            self.ref = best
            self.last = k


def sa_optimize(fitness: Fitness, bounds: Bounds, p: SaParams, rng: np.random.Generator) -> OptResult:
    lo, hi, span = bounds.lower, bounds.upper, bounds.span
    x = lo + rng.random(3) * span
    fx = float(fitness(x[None, :])[0])
    best_x, best_f = x.copy(), fx
    trace, cops, temps = [best_f], [best_x.copy()], []
    conv = _Convergence(best_f, p.tol)
    window: list[float] = [fx]
    sigma = p.sigma
    t = p.t0
    for k in range(1, p.max_iters + 1):
        cand = np.clip(x + rng.normal(0.0, p.step_frac * span), lo, hi)
        u = rng.random()
        fc = float(fitness(cand[None, :])[0])
        diff = fc - fx
        if diff >= 0 or u < math.exp(diff / t):
            x, fx = cand, fc
        if fx > best_f:
            best_x, best_f = x.copy(), fx
        trace.append(best_f)
        cops.append(best_x.copy())
        temps.append(t)
        if p.sigma_adaptive:
            window.append(fc)
            del window[:-p.sigma_window]
            s = float(np.std(window))
            if s > 0:
                sigma = s
        t = sa_temp_update(t, p, sigma)
        conv.update(k, best_f)
        if k - conv.last >= p.patience:
            break
    return OptResult(CopPoint.from_array(best_x), best_f, np.array(trace), conv.last,
                     np.array(cops), np.array(temps), n_evals=len(trace))


def _tournament(fit: np.ndarray, size: int, rng: np.random.Generator) -> int:
    picks = rng.integers(0, len(fit), size)
    best = picks[0]
    for i in picks[1:]:
        if fit[i] > fit[best]:
            best = i
    return int(best)


def ga_optimize(fitness: Fitness, bounds: Bounds, p: GaParams, rng: np.random.Generator) -> OptResult:
    """Real-coded GA: tournament selection, BLX-alpha crossover, Gaussian mutation, elitism."""
    lo, hi, span = bounds.lower, bounds.upper, bounds.span
    pop = lo + rng.random((p.pop_size, 3)) * span
    fit = np.asarray(fitness(pop), dtype=float)
    n_evals = p.pop_size
    i = int(np.argmax(fit))
    trace, cops = [float(fit[i])], [pop[i].copy()]
    conv = _Convergence(trace[0], p.tol)
    n_children = p.pop_size - p.elite
    for g in range(1, p.generations + 1):
        order = np.argsort(-fit, kind="stable")
        elites, elite_fit = pop[order[:p.elite]], fit[order[:p.elite]]
        children = np.empty((n_children, 3))
        for c in range(n_children):
            a = pop[_tournament(fit, p.tournament, rng)]
            b = pop[_tournament(fit, p.tournament, rng)]
            gap = np.abs(a - b)
            low = np.minimum(a, b) - p.blend_alpha * gap
            child = low + rng.random(3) * (gap * (1 + 2 * p.blend_alpha))
            mutate = rng.random(3) < p.mutation_prob
            child = child + mutate * rng.normal(0.0, p.mutation_scale * span)
            children[c] = np.clip(child, lo, hi)
        child_fit = np.asarray(fitness(children), dtype=float)
        n_evals += n_children
        pop = np.vstack((elites, children))
        fit = np.concatenate((elite_fit, child_fit))
        i = int(np.argmax(fit))
        best = max(float(fit[i]), trace[-1])
        trace.append(best)
        cops.append(pop[i].copy() if fit[i] >= trace[-2] else cops[-1].copy())
        conv.update(g, best)
        if g - conv.last >= p.patience:
            break
    best_row = cops[-1]
    return OptResult(CopPoint.from_array(best_row), trace[-1], np.array(trace), conv.last,
                     np.array(cops), None, n_evals=n_evals)
