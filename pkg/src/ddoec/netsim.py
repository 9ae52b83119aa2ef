"""Snapshot simulator for a user-centric ultra-dense downlink.

Nodes carry two positions: the *perceived* one reported to the central
controller and the *actual* physical one. Scheduling and DBS association
only ever look at perceived positions; link budgets only ever look at actual
positions. All randomness comes from explicit ``numpy.random.Generator``
streams, so every function here is pure given its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtri
from scipy.stats import poisson

from .seeding import derive_seed, hashed_uniform, stream

SPEED_OF_LIGHT = 299_792_458.0

Flavor = Literal["ideal", "erroneous"]
FLAVORS: tuple[str, ...] = ("ideal", "erroneous")


@dataclass(frozen=True)
class RadioParams:
    carrier_hz: float = 3.5e9
    pl_exp_near: float = 2.1
    pl_exp_far: float = 4.0
    breakpoint_m: float = 10.0
    shadow_sigma_db: float = 4.0
    noise_dbm: float = -104.0
    tx_gain_dbi: float = 0.0
    error_radius_m: float = 15.0

    def __post_init__(self):
        _require_finite(self)
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be > 0")
        if self.breakpoint_m <= 0:
            raise ValueError("breakpoint_m must be > 0")
        if self.pl_exp_near < 0 or self.pl_exp_far < 0:
            raise ValueError("path-loss exponents must be >= 0")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")
        if self.error_radius_m < 0:
            raise ValueError("error_radius_m must be >= 0")


@dataclass(frozen=True)
class PowerModelParams:
    """Affine per-DBS power model plus a fixed macro controller budget (watts)."""

    dbs_p0_w: float = 6.8
    dbs_slope: float = 4.0
    dbs_sleep_w: float = 4.3
    cbs_fixed_w: float = 130.0

    def __post_init__(self):
        _require_finite(self)
        if min(self.dbs_p0_w, self.dbs_slope, self.dbs_sleep_w, self.cbs_fixed_w) < 0:
            raise ValueError("power model parameters must be >= 0")
        if self.dbs_p0_w < self.dbs_sleep_w:
            raise ValueError("dbs_p0_w must be >= dbs_sleep_w")


@dataclass(frozen=True)
class NetworkParams:
    """Scenario constants that are not optimisation variables.

    ``rsz_expansion`` > 1 lets a scheduled UE without an in-zone DBS fall
    back to the nearest idle DBS within ``rsz_expansion * r_sz``. Off (1.0)
    by default.
    """

    ue_density: float = 0.0005
    area_m2: float = 1.0e6
    min_distance_m: float = 1.0
    rsz_expansion: float = 1.0

    def __post_init__(self):
        _require_finite(self)
        if self.ue_density < 0:
            raise ValueError("ue_density must be >= 0")
        if self.area_m2 <= 0:
            raise ValueError("area_m2 must be > 0")
        if self.min_distance_m <= 0:
            raise ValueError("min_distance_m must be > 0")
        if self.rsz_expansion < 1:
            raise ValueError("rsz_expansion must be >= 1")

    @property
    def side_m(self) -> float:
        return math.sqrt(self.area_m2)


@dataclass(frozen=True)
class CopPoint:
    lambda_dbs: float
    r_sz: float
    p_tx_dbm: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_dbs, self.r_sz, self.p_tx_dbm], dtype=float)

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "CopPoint":
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass
class Deployment:
    """Perceived and actual (n, 2) coordinate arrays for DBSs and UEs."""

    dbs_perceived: np.ndarray
    dbs_actual: np.ndarray
    ue_perceived: np.ndarray
    ue_actual: np.ndarray
    area_m2: float

    def __post_init__(self):
        if self.area_m2 <= 0:
            raise ValueError("area_m2 must be > 0")
        for name in ("dbs_perceived", "dbs_actual", "ue_perceived", "ue_actual"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, 2)
            setattr(self, name, arr)
        if self.dbs_perceived.shape != self.dbs_actual.shape:
            raise ValueError("DBS perceived/actual shapes differ")
        if self.ue_perceived.shape != self.ue_actual.shape:
            raise ValueError("UE perceived/actual shapes differ")

    @property
    def n_dbs(self) -> int:
        return len(self.dbs_perceived)

    @property
    def n_ue(self) -> int:
        return len(self.ue_perceived)

    @classmethod
    def exact(cls, dbs, ues, area_m2: float) -> "Deployment":
        """Deployment whose actual positions equal the perceived ones."""
        dbs = np.asarray(dbs, dtype=float).reshape(-1, 2)
        ues = np.asarray(ues, dtype=float).reshape(-1, 2)
        return cls(dbs, dbs.copy(), ues, ues.copy(), area_m2)


@dataclass
class ScheduleResult:
    served: np.ndarray  # (k, 2) int rows of (ue_index, dbs_index)
    scheduled: np.ndarray  # UE indices in priority order
    unserved_scheduled: int
    deferred: int
    order: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class KpiSample:
    ase: float  # bit/s/Hz/m^2
    ee: float  # bit/s/Hz/W
    total_power_w: float


def _require_finite(obj) -> None:
    for name, value in vars(obj).items():
        if isinstance(value, (int, float)) and not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def sample_ppp(density: float, area_m2: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous PPP over the square ``[0, sqrt(area)]^2``.

    The count is drawn by inverting the Poisson CDF at a single uniform, then
    coordinates are drawn as one (n, 2) block. For a fixed stream the point
    sets are therefore nested in ``density``.
    """
    if not (math.isfinite(density) and math.isfinite(area_m2)):
        raise ValueError("density and area must be finite")
    if density < 0:
        raise ValueError("density must be >= 0")
    if area_m2 <= 0:
        raise ValueError("area must be > 0")
    u = rng.random()
    mean = density * area_m2
    n = int(poisson.ppf(u, mean)) if mean > 0 else 0
    n = max(n, 0)
    return rng.random((n, 2)) * math.sqrt(area_m2)


def disk_offsets(n: int, r_er: float, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((n, 2))
    radius = r_er * np.sqrt(u[:, 0])
    angle = 2.0 * np.pi * u[:, 1]
    return np.column_stack((radius * np.cos(angle), radius * np.sin(angle)))


def inject_position_error(points: np.ndarray, r_er: float, rng: np.random.Generator) -> np.ndarray:
    """Actual positions for reported ``points``: uniform over a disk of radius ``r_er``.

    The reported input is the perceived position; the return value has the
    same shape and holds the actual positions.
    """
    if not math.isfinite(r_er) or r_er < 0:
        raise ValueError(f"error radius must be a finite value >= 0, got {r_er!r}")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    offsets = disk_offsets(len(points), r_er, rng)
    if r_er == 0:
        return points.copy()
    return points + offsets


def free_space_1m_db(carrier_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * carrier_hz / SPEED_OF_LIGHT)


def path_loss_db(d, rp: RadioParams):
    """Close-in two-slope path gain in dB (negative); vectorised over ``d``."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(~(d_arr > 0)):
        raise ValueError("distance must be > 0")
    ratio = d_arr / rp.breakpoint_m
    far = np.where(d_arr > rp.breakpoint_m, 10.0 * rp.pl_exp_far * np.log10(ratio), 0.0)
    out = -free_space_1m_db(rp.carrier_hz) - 10.0 * rp.pl_exp_near * np.log10(d_arr) - far
    return float(out) if np.ndim(out) == 0 else out


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def draw_deployment(
    cop: CopPoint,
    rp: RadioParams,
    net: NetworkParams,
    seed: int,
    flavor: Flavor = "erroneous",
) -> Deployment:
    """One snapshot's nodes, drawn from named sub-streams of ``seed``.

    The ideal flavour draws exactly the same perceived positions and simply
    skips the error offsets, so paired flavours share every other draw.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    dbs = sample_ppp(cop.lambda_dbs, net.area_m2, stream(seed, "dbs"))
    ues = sample_ppp(net.ue_density, net.area_m2, stream(seed, "ue"))
    if flavor == "ideal" or rp.error_radius_m == 0:
        return Deployment(dbs, dbs.copy(), ues, ues.copy(), net.area_m2)
    dbs_act = inject_position_error(dbs, rp.error_radius_m, stream(seed, "dbs_err"))
    ue_act = inject_position_error(ues, rp.error_radius_m, stream(seed, "ue_err"))
    return Deployment(dbs, dbs_act, ues, ue_act, net.area_m2)


def _neighbour_lists(points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency of pairs at distance <= radius."""
    n = len(points)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    src = np.concatenate((pairs[:, 0], pairs[:, 1]))
    dst = np.concatenate((pairs[:, 1], pairs[:, 0]))
    idx = np.argsort(src, kind="stable")
    src, dst = src[idx], dst[idx]
    start = np.searchsorted(src, np.arange(n + 1))
    return start, dst


def greedy_schedule(points: np.ndarray, r_sz: float, order: np.ndarray) -> np.ndarray:
    """UEs accepted in ``order`` while staying > 2*r_sz from all accepted ones."""
    if len(points) == 0:
        return np.empty(0, dtype=np.int64)
    start, nbr = _neighbour_lists(points, 2.0 * r_sz)
    blocked = np.zeros(len(points), dtype=bool)
    accepted = []
    for u in order:
        if blocked[u]:
            continue
        accepted.append(u)
        blocked[nbr[start[u]:start[u + 1]]] = True
    return np.asarray(accepted, dtype=np.int64)


def _nearest_within(tree: cKDTree, pts: np.ndarray, query: np.ndarray, radius: float) -> np.ndarray:
    """Index of the nearest point of ``pts`` within ``radius`` (inclusive), -1 if none.

    Exact ties go to the lowest index.
    """
    out = np.full(len(query), -1, dtype=np.int64)
    if len(query) == 0 or len(pts) == 0:
        return out
    k = min(2, len(pts))
    _, idx = tree.query(query, k=k, distance_upper_bound=radius * (1 + 1e-9) + 1e-9)
    idx = np.asarray(idx).reshape(len(query), k)
    valid = idx < len(pts)
    safe = np.where(valid, idx, 0)
    diff = pts[safe] - query[:, None, :]
    d = np.where(valid, np.hypot(diff[..., 0], diff[..., 1]), np.inf)
    # lexicographic (distance, index) minimum over the k candidates
    key_idx = np.where(valid, idx, np.iinfo(np.int64).max)
    best_col = np.lexsort((key_idx, d), axis=-1)[:, 0] if k > 1 else np.zeros(len(query), dtype=np.int64)
    rows = np.arange(len(query))
    best_d = d[rows, best_col]
    hit = best_d <= radius
    out[hit] = idx[rows, best_col][hit]
    if k == 2:
        # more than two equidistant candidates: resolve over the full ball
        for row in np.flatnonzero(hit & (d[:, 0] == d[:, 1])):
            ball = np.asarray(tree.query_ball_point(query[row], best_d[row] * (1 + 1e-12)), dtype=np.int64)
            db = np.hypot(*(pts[ball] - query[row]).T)
            out[row] = ball[db == db.min()].min()
    return out


def schedule_and_associate(
    dep: Deployment,
    r_sz: float,
    rng: np.random.Generator,
    rsz_expansion: float = 1.0,
) -> ScheduleResult:
    """Greedy Szone scheduling and nearest-DBS association on perceived positions."""
    if not r_sz > 0:
        raise ValueError("r_sz must be > 0")
    order = rng.permutation(dep.n_ue)
    scheduled = greedy_schedule(dep.ue_perceived, r_sz, order)
    deferred = dep.n_ue - len(scheduled)
    if len(scheduled) == 0 or dep.n_dbs == 0:
        return ScheduleResult(np.empty((0, 2), dtype=np.int64), scheduled, len(scheduled), deferred, order)
    tree = cKDTree(dep.dbs_perceived)
    assoc = _nearest_within(tree, dep.dbs_perceived, dep.ue_perceived[scheduled], r_sz)
    if rsz_expansion > 1.0:
        assoc = _expand_unserved(tree, dep, scheduled, assoc, r_sz * rsz_expansion)
    ok = assoc >= 0
    served = np.column_stack((scheduled[ok], assoc[ok])).astype(np.int64)
    return ScheduleResult(served, scheduled, int((~ok).sum()), deferred, order)


def _expand_unserved(tree, dep, scheduled, assoc, radius):
    used = set(int(b) for b in assoc[assoc >= 0])
    assoc = assoc.copy()
    for row in np.flatnonzero(assoc < 0):
        q = dep.ue_perceived[scheduled[row]]
        ball = np.array(sorted(tree.query_ball_point(q, radius)), dtype=np.int64)
        ball = np.array([b for b in ball if b not in used], dtype=np.int64)
        if len(ball) == 0:
            continue
        d = np.hypot(*(dep.dbs_perceived[ball] - q).T)
        pick = int(ball[np.argmin(d)])
        assoc[row] = pick
        used.add(pick)
    return assoc


def link_shadowing_db(key: int, ue_idx: np.ndarray, dbs_idx: np.ndarray, sigma_db: float) -> np.ndarray:
    """Log-normal shadowing (dB) for every (ue, dbs) combination of the two index vectors.

    Each link's value is a pure function of ``(key, ue, dbs)``, so two
    simulations sharing ``key`` see identical shadowing on common links.
    """
    if sigma_db == 0:
        return np.zeros((len(ue_idx), len(dbs_idx)))
    u = hashed_uniform(key, np.asarray(ue_idx)[:, None], np.asarray(dbs_idx)[None, :])
    return sigma_db * ndtri(u)


def _log_link_gain(d2: np.ndarray, rp: RadioParams) -> np.ndarray:
    # path_loss_db from squared distances, in natural-log power units
    ln_d2 = np.log(d2)
    far = np.maximum(ln_d2 - 2.0 * math.log(rp.breakpoint_m), 0.0)
    out = ln_d2 * (-0.5 * rp.pl_exp_near)
    out -= (0.5 * rp.pl_exp_far) * far
    out -= free_space_1m_db(rp.carrier_hz) * (math.log(10.0) / 10.0)
    return out


def _sinr_with_shadowing(dep: Deployment, served: np.ndarray, p_tx_dbm: float, rp: RadioParams,
                         shadow_ln: np.ndarray, min_distance_m: float) -> np.ndarray:
    ue_pos = dep.ue_actual[served[:, 0]]
    dbs_pos = dep.dbs_actual[served[:, 1]]
    dx = ue_pos[:, 0:1] - dbs_pos[None, :, 0]
    dy = ue_pos[:, 1:2] - dbs_pos[None, :, 1]
    d2 = np.maximum(dx * dx + dy * dy, min_distance_m * min_distance_m)
    ln_rx = _log_link_gain(d2, rp)
    ln_rx += shadow_ln
    ln_rx += (p_tx_dbm + rp.tx_gain_dbi) * (math.log(10.0) / 10.0)
    rx_mw = np.exp(ln_rx, out=ln_rx)
    signal = np.diagonal(rx_mw).copy()
    interference = rx_mw.sum(axis=1) - signal
    noise_mw = 10.0 ** (rp.noise_dbm / 10.0)
    return signal / (noise_mw + interference)


def _shadow_ln(key: int, served: np.ndarray, rp: RadioParams) -> np.ndarray:
    chi = link_shadowing_db(key, served[:, 0], served[:, 1], rp.shadow_sigma_db)
    return chi * (math.log(10.0) / 10.0)


def sinr(dep: Deployment, served: np.ndarray, p_tx_dbm: float, rp: RadioParams,
         shadow_key: int, min_distance_m: float = 1.0) -> np.ndarray:
    """Per-served-UE SINR (linear) using actual distances.

    Interferers are the DBSs serving the other UEs in ``served``. Distances
    below ``min_distance_m`` are clamped to it.
    """
    served = np.asarray(served, dtype=np.int64).reshape(-1, 2)
    if len(served) == 0:
        return np.empty(0)
    shadow = _shadow_ln(shadow_key, served, rp)
    return _sinr_with_shadowing(dep, served, p_tx_dbm, rp, shadow, min_distance_m)


def total_power_w(n_dbs: int, n_active: int, p_tx_dbm: float, pm: PowerModelParams) -> float:
    active = pm.dbs_p0_w + pm.dbs_slope * dbm_to_watts(p_tx_dbm)
    return pm.cbs_fixed_w + n_active * active + (n_dbs - n_active) * pm.dbs_sleep_w


def _kpis(dep: Deployment, served: np.ndarray, cop: CopPoint, rp: RadioParams, pm: PowerModelParams,
          shadow_ln: np.ndarray, min_distance_m: float) -> KpiSample:
    if len(served):
        gamma = _sinr_with_shadowing(dep, served, cop.p_tx_dbm, rp, shadow_ln, min_distance_m)
        rate = float(np.sum(np.log2(1.0 + gamma)))
    else:
        rate = 0.0
    power = total_power_w(dep.n_dbs, len(served), cop.p_tx_dbm, pm)
    return KpiSample(ase=rate / dep.area_m2, ee=rate / power, total_power_w=power)


def kpis_from_schedule(dep: Deployment, sched: ScheduleResult, cop: CopPoint, rp: RadioParams,
                       pm: PowerModelParams, shadow_key: int, min_distance_m: float = 1.0) -> KpiSample:
    shadow = _shadow_ln(shadow_key, sched.served, rp)
    return _kpis(dep, sched.served, cop, rp, pm, shadow, min_distance_m)


def snapshot_kpis(dep: Deployment, cop: CopPoint, rp: RadioParams, pm: PowerModelParams,
                  rng: np.random.Generator, net: NetworkParams | None = None) -> KpiSample:
    """ASE/EE of one snapshot.

    ``rng`` supplies the shadowing key (first draw) and then the scheduling
    priority order.
    """
    net = net or NetworkParams(area_m2=dep.area_m2)
    shadow_key = int(rng.integers(0, 2**63))
    sched = schedule_and_associate(dep, cop.r_sz, rng, net.rsz_expansion)
    return kpis_from_schedule(dep, sched, cop, rp, pm, shadow_key, net.min_distance_m)


def cycle_seed(seed: int, cycle: int) -> int:
    return derive_seed(seed, "cycle", cycle)


def paired_snapshot(cop: CopPoint, rp: RadioParams, pm: PowerModelParams, net: NetworkParams,
                    seed: int, flavors: Sequence[str] = FLAVORS) -> dict[str, KpiSample]:
    """KPIs of one snapshot for each requested flavour under common random numbers.

    Scheduling and association depend only on perceived positions, which the
    flavours share, so they are computed once.
    """
    perceived = draw_deployment(cop, rp, net, seed, "ideal")
    rng = stream(seed, "sched")
    shadow_key = int(rng.integers(0, 2**63))
    sched = schedule_and_associate(perceived, cop.r_sz, rng, net.rsz_expansion)
    shadow = _shadow_ln(shadow_key, sched.served, rp)
    out = {}
    for flavor in flavors:
        dep = perceived if flavor == "ideal" else draw_deployment(cop, rp, net, seed, flavor)
        out[flavor] = _kpis(dep, sched.served, cop, rp, pm, shadow, net.min_distance_m)
    return out


def _mean(samples: list[KpiSample]) -> KpiSample:
    n = len(samples)
    return KpiSample(
        ase=math.fsum(s.ase for s in samples) / n,
        ee=math.fsum(s.ee for s in samples) / n,
        total_power_w=math.fsum(s.total_power_w for s in samples) / n,
    )


def paired_average_kpis(cop: CopPoint, rp: RadioParams, pm: PowerModelParams, n_cycles: int,
                        seed: int, net: NetworkParams | None = None,
                        flavors: Sequence[str] = FLAVORS) -> dict[str, KpiSample]:
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    net = net or NetworkParams()
    per_flavor: dict[str, list[KpiSample]] = {f: [] for f in flavors}
    for c in range(n_cycles):
        snap = paired_snapshot(cop, rp, pm, net, cycle_seed(seed, c), flavors)
        for f in flavors:
            per_flavor[f].append(snap[f])
    return {f: _mean(v) for f, v in per_flavor.items()}


def average_kpis(cop: CopPoint, rp: RadioParams, pm: PowerModelParams, n_cycles: int,
                 flavor: Flavor, seed: int, net: NetworkParams | None = None) -> KpiSample:
    """Mean KPIs over ``n_cycles`` independent snapshots.

    Note the mean of per-snapshot EE values is reported, so the EE identity
    holds per snapshot but only approximately for the averages.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    return paired_average_kpis(cop, rp, pm, n_cycles, seed, net, (flavor,))[flavor]


@dataclass(frozen=True)
class Bounds:
    """Box constraints on the three COP dimensions, (min, max) each."""

    lambda_dbs: tuple[float, float] = (0.0005, 0.0125)
    r_sz: tuple[float, float] = (10.0, 50.0)
    p_tx_dbm: tuple[float, float] = (15.0, 30.0)

    NAMES = ("lambda_dbs", "r_sz", "p_tx_dbm")

    def __post_init__(self):
        for name in self.NAMES:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"{name}: bounds must be finite")
            if lo < 0:
                raise ValueError(f"{name}: lower bound must be >= 0")
            if not lo < hi:
                raise ValueError(f"{name}: need min < max, got ({lo}, {hi})")

    @property
    def lower(self) -> np.ndarray:
        return np.array([getattr(self, n)[0] for n in self.NAMES], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([getattr(self, n)[1] for n in self.NAMES], dtype=float)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = x.as_array() if isinstance(x, CopPoint) else np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {n: list(getattr(self, n)) for n in self.NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        return cls(**{n: tuple(float(v) for v in d[n]) for n in cls.NAMES})
