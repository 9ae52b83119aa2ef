"""Acceptance criteria, each at its stated tolerance.

Every test appends one PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run. Criteria 5, 6, 8, 9
and 10 share one default-configuration experiment run through the CLI.
"""
import csv
import hashlib
import io
import json
import math
import shlex

import numpy as np
import pytest
from scipy import stats

from ddoec.cli import main
from ddoec.config import ExperimentConfig, load_config
from ddoec.datagen import load_database
from ddoec.netsim import (Bounds, CopPoint, NetworkParams, PowerModelParams, RadioParams,
                          draw_deployment, inject_position_error, path_loss_db, snapshot_kpis)
from ddoec.optimizer import (GaParams, ObjectiveSpec, SaParams, ga_optimize, make_fitness,
                             objective_value, sa_optimize)
from ddoec.pipeline import (generate_data, load_records, load_surrogates, optimize_all, save_data,
                            sign_test, summarize, train, validate_records)
from ddoec.seeding import derive_seed, stream
from ddoec.surrogate import DEFAULT_MENU, TARGETS, rmse, select_model

from conftest import ACCEPTANCE_LINES

C = 299_792_458.0


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def note(text: str) -> None:
    ACCEPTANCE_LINES.append(f"NOTE  {text}")
    print(text)


# ---------------------------------------------------------------- shared run ---

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """The default desk-scale experiment, run end to end through the CLI."""
    out = tmp_path_factory.mktemp("desk")
    assert main(["experiment", "--out", str(out)]) == 0
    cfg = load_config(out / "config.txt")
    assert cfg == ExperimentConfig()
    recs = load_records(out / "records.json")
    return out, cfg, recs, summarize(recs)


# ----------------------------------------------------------------- criterion 1 ---

def _pl_hand(d, f=3.5e9, n1=2.1, n2=4.0, dt=10.0):
    fs = 20 * math.log10(4 * math.pi * f / C)
    return -fs - 10 * n1 * math.log10(d) - (10 * n2 * math.log10(d / dt) if d > dt else 0.0)


def test_c1_formula_units():
    rp = RadioParams()
    errs = [abs(path_loss_db(d, rp) - _pl_hand(d)) for d in (1.0, 5.0, 37.0)]
    dt = rp.breakpoint_m
    jump = abs(path_loss_db(dt * (1 + 1e-12), rp) - path_loss_db(dt, rp))
    left = abs(path_loss_db(dt * (1 - 1e-12), rp) - path_loss_db(dt, rp))
    th, et = 3.7e-5, 2.9
    exact = (objective_value(th, et, ObjectiveSpec(0.3, th, et)) == 1.0
             and objective_value(th, 1.0, ObjectiveSpec(1.0, th, et)) == 1.0
             and objective_value(0.0, et, ObjectiveSpec(0.0, th, et)) == 1.0
             and objective_value(th / 2, 0.0, ObjectiveSpec(1.0, th, et)) == 0.5)
    ok = max(errs) <= 1e-9 and jump <= 1e-9 and left <= 1e-9 and exact
    verdict(1, ok, f"path-loss max |err| {max(errs):.1e} dB, breakpoint jump {max(jump, left):.1e} dB, "
                   f"objective identities exact={exact}")


# ----------------------------------------------------------------- criterion 2 ---

def test_c2_kpi_identity():
    rng = np.random.default_rng(derive_seed(2, "acceptance"))
    b, rp, pm, net = Bounds(), RadioParams(), PowerModelParams(), NetworkParams()
    worst, served = 0.0, 0
    for i in range(1000):
        cop = CopPoint.from_array(b.lower + rng.random(3) * b.span)
        dep = draw_deployment(cop, rp, net, int(rng.integers(2**63)))
        k = snapshot_kpis(dep, cop, rp, pm, stream(i), net)
        lhs, rhs = k.ee * k.total_power_w, net.area_m2 * k.ase
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs else abs(lhs))
        served += k.ase > 0
    verdict(2, worst <= 1e-12 and served > 900,
            f"1000 snapshots, max rel |ee*P_T - A*ase| = {worst:.1e} ({served} with traffic)")


# ----------------------------------------------------------------- criterion 3 ---

def test_c3_error_model_statistics():
    act = inject_position_error(np.zeros((100_000, 2)), 15.0, stream(3, "acceptance"))
    r = np.hypot(act[:, 0], act[:, 1])
    counts, _ = np.histogram(np.arctan2(act[:, 1], act[:, 0]), bins=36, range=(-np.pi, np.pi))
    p = stats.chisquare(counts).pvalue
    ok = abs(r.mean() - 10.0) <= 0.2 and p > 0.01 and r.max() <= 15.0
    verdict(3, ok, f"mean radius {r.mean():.4f} (10 +/- 0.2), angle chi-square p = {p:.3f}")


# ----------------------------------------------------------------- criterion 4 ---

def _strip_flavor(path):
    rows = list(csv.reader(io.StringIO(path.read_text())))
    col = rows[0].index("flavor")
    return [r[:col] + r[col + 1:] for r in rows]


def test_c4_zero_error_collapse(tmp_path):
    cfg = ExperimentConfig(bins=6, n_cycles=10, r_er=0.0, trials=20, master_seed=404)
    dbs = generate_data(cfg)
    save_data(dbs, tmp_path)
    # files carry a flavor label column; everything else must match byte for byte
    same_files = _strip_flavor(tmp_path / "ideal.csv") == _strip_flavor(tmp_path / "erroneous.csv")
    meta = [json.loads((tmp_path / f"{n}.meta").read_text()) for n in ("ideal", "erroneous")]
    for m in meta:
        m.pop("flavor")
    same_files &= meta[0] == meta[1]
    sur = train(cfg, dbs)
    probe = np.vstack([dbs.ideal.X, cfg.bounds.lower + stream(4).random((1000, 3)) * cfg.bounds.span])
    max_r = max(float(np.max(np.abs(sur.models.get("model_r", t).predict_array(probe)))) for t in TARGETS)
    recs = validate_records(cfg, sur, optimize_all(cfg, sur))
    by = {(r.algorithm, r.alpha_se, r.trial, r.scheme): r for r in recs}
    pvals = {}
    for algo in cfg.algorithms:
        for alpha in cfg.alpha_se:
            diffs = [by[(algo, alpha, t, "ddoec")].validated_objective
                     - by[(algo, alpha, t, "baseline")].validated_objective for t in range(cfg.trials)]
            pvals[(algo, alpha)] = sign_test(diffs, "two-sided")
    ok = same_files and max_r <= 1e-12 and min(pvals.values()) > 0.05
    verdict(4, ok, f"databases identical={same_files}, max |residual pred| = {max_r:.1e}, "
                   f"min two-sided sign-test p over 6 cells x 20 seeds = {min(pvals.values()):.3f}")


# ----------------------------------------------------------------- criterion 5 ---

def test_c5_compensation(desk):
    out, cfg, _, _ = desk
    ideal, err = (load_database(out / "data" / f"{n}.csv") for n in ("ideal", "erroneous"))
    res = load_database(out / "data" / "residual.csv")
    n = len(ideal)
    assert (n, cfg.bins, cfg.n_cycles, cfg.r_er) == (1000, 10, 20, 15.0)
    lines, ok = [], True
    for run in range(5):
        seed = derive_seed(cfg.master_seed, "holdout", run)
        perm = stream(seed).permutation(n)
        test, fit = perm[: n // 5], perm[n // 5:]
        X = ideal.X
        for target in TARGETS:
            e, _ = select_model(X[fit], err.target(target)[fit], cfg.kfold, DEFAULT_MENU, target,
                                "model_e", seed)
            r, _ = select_model(X[fit], res.target(target)[fit], cfg.kfold, DEFAULT_MENU, target,
                                "model_r", seed)
            truth = ideal.target(target)[test]
            pe = e.predict_array(X[test])
            rm_e, rm_er = rmse(pe, truth), rmse(pe + r.predict_array(X[test]), truth)
            ok &= rm_er < rm_e
            lines.append(f"{target} {rm_er / rm_e:.3f}")
    verdict(5, ok, "held-out RMSE(E+R)/RMSE(E) per run: " + ", ".join(lines))


# ----------------------------------------------------------------- criterion 6 ---

def test_c6_end_to_end_gain(desk):
    _, cfg, _, summary = desk
    assert cfg.trials >= 20 and len(summary) == 6 and all(r["complete"] for r in summary)
    parts, ok = [], True
    for row in summary:
        ge = row["ddoec_validated"] >= row["baseline_validated"]
        ok &= ge
        if row["alpha_se"] in (0.25, 0.75):
            ok &= row["sign_test_p"] < 0.05
        parts.append(f"{row['algorithm']}@{row['alpha_se']}: gain {100 * row['relative_gain']:+.1f}% "
                     f"median {100 * row['median_relative_gain']:+.1f}% p={row['sign_test_p']:.2g}")
    verdict(6, ok, "; ".join(parts))


# ----------------------------------------------------------------- criterion 7 ---

def test_c7_optimizer_oracles():
    b = Bounds()
    target = b.lower + np.array([0.3, 0.6, 0.45]) * b.span
    evaluated = []

    def quadratic(amplitude):
        def f(X):
            X = np.atleast_2d(X)
            evaluated.append(X.copy())
            return -amplitude * np.sum(((X - target) / b.span) ** 2, axis=1)
        return f

    sa_err, ga_err, temps_ok, trace_ok = [], [], True, True
    sa_p = SaParams(max_iters=5000, patience=1000)
    for s in range(20):
        r = sa_optimize(quadratic(1e5), b, sa_p, stream(s, "sa"))
        sa_err.append(np.max(np.abs(r.best_cop.as_array() - target) / b.span))
        temps_ok &= bool(np.all(np.diff(r.temperatures) < 0) and np.all(r.temperatures > 0))
        g = ga_optimize(quadratic(1.0), b, GaParams(), stream(s, "ga"))
        ga_err.append(np.max(np.abs(g.best_cop.as_array() - target) / b.span))
        trace_ok &= bool(np.all(np.diff(g.trace) >= 0))
    X = np.vstack(evaluated)
    feasible = bool(np.all(X >= b.lower) and np.all(X <= b.upper))
    ok = np.median(sa_err) <= 0.02 and np.median(ga_err) <= 0.02 and temps_ok and trace_ok and feasible
    verdict(7, ok, f"median max-dimension error SA {100 * np.median(sa_err):.2f}%, "
                   f"GA {100 * np.median(ga_err):.2f}% (limit 2%); temperatures decreasing={temps_ok}, "
                   f"GA trace monotone={trace_ok}, {len(X)} iterates feasible={feasible}")


# ----------------------------------------------------------------- criterion 8 ---

def test_c8_convergence_speed(desk):
    _, _, recs, _ = desk
    med = {(a, s): float(np.median([r.iterations_to_converge for r in recs
                                    if r.algorithm == a and r.scheme == s and r.ok]))
           for a in ("sa", "ga") for s in ("baseline", "ddoec")}
    ga_all = np.median([r.iterations_to_converge for r in recs if r.algorithm == "ga"])
    sa_all = np.median([r.iterations_to_converge for r in recs if r.algorithm == "sa"])
    ok = ga_all < sa_all and all(med[(a, "ddoec")] >= med[(a, "baseline")] for a in ("sa", "ga"))
    verdict(8, ok, f"median iterations GA {ga_all:g} < SA {sa_all:g}; baseline/DD-OEC "
                   f"SA {med[('sa', 'baseline')]:g}/{med[('sa', 'ddoec')]:g}, "
                   f"GA {med[('ga', 'baseline')]:g}/{med[('ga', 'ddoec')]:g}")


# ----------------------------------------------------------------- criterion 9 ---

def test_c9_cop_trend(desk):
    _, cfg, _, summary = desk
    lam_lo, lam_hi = cfg.lambda_dbs
    rsz_lo, rsz_hi = cfg.r_sz
    hits, parts = 0, []
    for row in summary:
        lam, rsz, ptx = row["ddoec_best_cop"]
        hit = rsz <= rsz_lo + (rsz_hi - rsz_lo) / 3 and lam < (lam_lo + lam_hi) / 2
        hits += hit
        parts.append(f"{row['algorithm']}@{row['alpha_se']} [{lam:.2e}, {rsz:.1f}, {ptx:.1f}]"
                     f"{'' if hit else ' (out)'}")
    verdict(9, hits >= 4, f"{hits}/6 cells in trend region: " + "; ".join(parts))


# ---------------------------------------------------------------- criterion 10 ---

def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_c10_reproducibility(desk):
    out = desk[0]
    manifest = json.loads((out / "manifest.json").read_text())
    before = {str(p.relative_to(out)): _sha(p) for p in out.rglob("*")
              if p.is_file() and p.name != "manifest.json"}
    mismatched = []
    for stage in ("gen-data", "train", "optimize", "validate", "report"):
        entry = manifest["stages"][stage]
        argv = shlex.split(entry["replay"])
        assert argv[0] == "ddoec" and argv[1] == stage
        assert main(argv[1:]) == 0
        mismatched += [rel for rel, digest in entry["outputs"].items() if _sha(out / rel) != digest]
    after = {str(p.relative_to(out)): _sha(p) for p in out.rglob("*")
             if p.is_file() and p.name != "manifest.json"}
    ok = not mismatched and after == before
    verdict(10, ok, f"replayed 5 stages from manifest, {len(after)} files, "
                    f"{len(mismatched)} digest mismatches (manifest timestamps excluded)")


# ------------------------------------------------- related trends and invariants ---

def test_best_weight_case_is_not_interior(desk):
    """The best reachable objective is convex in the weight, so (0.5, 0.5) cannot beat both ends.

    g(a) = max_x [a*u(x) + (1-a)*v(x)] is a maximum of affine functions of a.
    """
    out, cfg, _, summary = desk
    ideal = load_database(out / "data" / "ideal.csv")
    u = ideal.target("ase") / ideal.target("ase").max()
    v = ideal.target("ee") / ideal.target("ee").max()
    g = {a: float(np.max(a * u + (1 - a) * v)) for a in cfg.alpha_se}
    assert g[0.5] <= (g[0.25] + g[0.75]) / 2 + 1e-15
    dd = {r["algorithm"]: {} for r in summary}
    for r in summary:
        dd[r["algorithm"]][r["alpha_se"]] = r["ddoec_validated"]
    note("best objective over the ideal grid by weight: "
         + ", ".join(f"{a}: {g[a]:.3f}" for a in cfg.alpha_se)
         + "; DD-OEC validated means " + "; ".join(
             f"{k}: " + ", ".join(f"{a}: {x:.3f}" for a, x in sorted(v.items())) for k, v in dd.items()))


def test_validation_gap_magnitude(desk):
    _, _, recs, _ = desk
    gaps = {s: float(np.median([abs(r.reported_objective - r.validated_objective)
                                for r in recs if r.scheme == s])) for s in ("baseline", "ddoec")}
    signed = {s: float(np.median([r.reported_objective - r.validated_objective
                                  for r in recs if r.scheme == s])) for s in ("baseline", "ddoec")}
    note(f"median validation gap (reported - validated): baseline {signed['baseline']:+.4f}, "
         f"DD-OEC {signed['ddoec']:+.4f}")
    assert gaps["baseline"] >= gaps["ddoec"]


def test_ddoec_reported_within_compensation_error(desk):
    out, cfg, recs, _ = desk
    cv = {}
    with open(out / "models" / "cv_report.csv") as fh:
        for row in csv.DictReader(fh):
            if row["chosen"] == "1":
                cv[(row["role"], row["target"])] = float(row["mean_rmse"])
    sur = load_surrogates(out / "models")
    for alpha in cfg.alpha_se:
        tol = (alpha * cv[("model_r", "ase")] / sur.theta_max
               + (1 - alpha) * cv[("model_r", "ee")] / sur.eta_max)
        slack = [r.reported_objective - (r.validated_objective - tol)
                 for r in recs if r.scheme == "ddoec" and r.alpha_se == alpha]
        assert np.median(slack) >= 0, alpha


def test_baseline_suboptimal_under_oracle(desk):
    out, cfg, recs, _ = desk
    sur = load_surrogates(out / "models")
    for alpha in cfg.alpha_se:
        oracle = make_fitness("oracle", sur.models, sur.spec(alpha))
        best = ga_optimize(oracle, cfg.bounds, cfg.ga, stream(derive_seed(cfg.master_seed, "oracle"))).best_value
        gaps = [best - oracle(np.array(r.best_cop))[0]
                for r in recs if r.scheme == "baseline" and r.alpha_se == alpha]
        assert np.median(gaps) > 0, alpha
