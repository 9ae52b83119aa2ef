"""CSV tables and SVG figures for a finished set of trial records.

Outputs are deterministic: floats are written with ``repr`` precision and
SVGs carry a fixed hash salt and no timestamp.
"""
from __future__ import annotations

import csv
import io
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import TrialRecord, summarize  # noqa: E402

SCHEMES = ("baseline", "ddoec")


class ReportError(OSError):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def check_writable(out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out_dir):
            pass
    except OSError as exc:
        raise ReportError(f"output directory {out_dir} is not writable: {exc.strerror or exc}") from None
    return out_dir


SUMMARY_COLUMNS = (
    "algorithm", "alpha_se",
    "baseline_n", "baseline_reported", "baseline_validated", "baseline_validated_ase",
    "baseline_validated_ee", "baseline_best_cop", "baseline_iters_median",
    "ddoec_n", "ddoec_reported", "ddoec_validated", "ddoec_validated_ase",
    "ddoec_validated_ee", "ddoec_best_cop", "ddoec_iters_median",
    "relative_gain", "median_relative_gain", "sign_test_p", "complete",
)


def summary_csv(summary: list[dict]) -> str:
    rows = [[row.get(c, "") for c in SUMMARY_COLUMNS] for row in summary]
    return _csv_text(SUMMARY_COLUMNS, rows)


def _cell_records(records, algo, scheme, alpha):
    return sorted((r for r in records if r.ok and r.algorithm == algo and r.scheme == scheme
                   and r.alpha_se == alpha), key=lambda r: r.trial)


def _padded(traces) -> np.ndarray:
    """Stack traces, extending each with its final value to the longest length."""
    n = max(len(t) for t in traces)
    return np.array([list(t) + [t[-1]] * (n - len(t)) for t in traces], dtype=float)


def trace_csv(recs: list[TrialRecord]) -> str:
    surr = _padded([r.trace for r in recs])
    has_oracle = all(r.oracle_trace for r in recs)
    header = ["iteration"] + [f"trial_{r.trial}" for r in recs] + ["mean"]
    if has_oracle:
        orc = _padded([r.oracle_trace for r in recs])
        header += [f"oracle_trial_{r.trial}" for r in recs] + ["oracle_mean"]
    rows = []
    for k in range(surr.shape[1]):
        row = [k] + [float(v) for v in surr[:, k]] + [float(surr[:, k].mean())]
        if has_oracle:
            row += [float(v) for v in orc[:, k]] + [float(orc[:, k].mean())]
        rows.append(row)
    return _csv_text(header, rows)


def iterations_csv(records: list[TrialRecord]) -> str:
    rows = [[r.algorithm, r.scheme, r.alpha_se, r.trial, r.iterations_to_converge,
             r.reported_objective, r.validated_objective, r.error]
            for r in sorted(records, key=lambda r: (r.algorithm, r.alpha_se, r.scheme, r.trial))]
    return _csv_text(["algorithm", "scheme", "alpha_se", "trial", "iterations_to_converge",
                      "reported_objective", "validated_objective", "error"], rows)


def _save_svg(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "ddoec", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_traces(records, algo, alpha, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, color in zip(SCHEMES, ("tab:blue", "tab:red")):
        recs = _cell_records(records, algo, scheme, alpha)
        if not recs:
            continue
        ax.plot(_padded([r.trace for r in recs]).mean(axis=0), color=color,
                label=f"{scheme} (surrogate)")
        if all(r.oracle_trace for r in recs):
            ax.plot(_padded([r.oracle_trace for r in recs]).mean(axis=0), color=color,
                    linestyle="--", label=f"{scheme} (ideal model)")
    ax.set_xlabel("iteration" if algo == "sa" else "generation")
    ax.set_ylabel("objective (best so far)")
    ax.set_title(f"{algo.upper()}, alpha_se = {alpha:g}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save_svg(fig, path)


def _plot_objectives(summary, algo, path):
    rows = [r for r in summary if r["algorithm"] == algo]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(rows))
    width = 0.38
    for j, scheme in enumerate(SCHEMES):
        ase = [r.get(f"{scheme}_validated_ase", np.nan) for r in rows]
        ee = [r.get(f"{scheme}_validated_ee", np.nan) for r in rows]
        pos = x + (j - 0.5) * width
        ax.bar(pos, ase, width, label=f"{scheme}: ASE term", color=("tab:blue", "tab:red")[j])
        ax.bar(pos, ee, width, bottom=ase, label=f"{scheme}: EE term",
               color=("lightsteelblue", "lightsalmon")[j])
    ax.set_xticks(x, [f"{r['alpha_se']:g}" for r in rows])
    ax.set_xlabel("alpha_se")
    ax.set_ylabel("validated objective")
    ax.set_title(f"{algo.upper()}: simulator-validated objective")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)


def _plot_iterations(records, algo, path):
    alphas = sorted({r.alpha_se for r in records if r.algorithm == algo})
    data, labels = [], []
    for alpha in alphas:
        for scheme in SCHEMES:
            recs = _cell_records(records, algo, scheme, alpha)
            if recs:
                data.append([r.iterations_to_converge for r in recs])
                labels.append(f"{scheme}\n{alpha:g}")
    fig, ax = plt.subplots(figsize=(6, 4))
    if data:
        ax.boxplot(data)
        ax.set_xticks(np.arange(1, len(labels) + 1), labels, fontsize="small")
    ax.set_ylabel("iterations to converge")
    ax.set_title(f"{algo.upper()}: convergence")
    fig.tight_layout()
    _save_svg(fig, path)


def emit_report(records: list[TrialRecord], out_dir) -> list[Path]:
    """Write summary.csv, iterations.csv, traces/*.csv and plots/*.svg; returns the paths."""
    out_dir = check_writable(out_dir)
    summary = summarize(records)
    written = []

    def put(rel, text):
        path = out_dir / rel
        _write(path, text)
        written.append(path)

    put("summary.csv", summary_csv(summary))
    put("iterations.csv", iterations_csv(records))
    cells = sorted({(r.algorithm, r.scheme, r.alpha_se) for r in records})
    for algo, scheme, alpha in cells:
        recs = _cell_records(records, algo, scheme, alpha)
        if recs:
            put(f"traces/{algo}_{scheme}_{alpha:g}.csv", trace_csv(recs))
    for algo in sorted({r.algorithm for r in records}):
        for alpha in sorted({r.alpha_se for r in records if r.algorithm == algo}):
            path = out_dir / "plots" / f"trace_{algo}_{alpha:g}.svg"
            _plot_traces(records, algo, alpha, path)
            written.append(path)
        for name, fn, arg in (("objective", _plot_objectives, summary),
                              ("iterations", _plot_iterations, records)):
            path = out_dir / "plots" / f"{name}_{algo}.svg"
            fn(arg, algo, path)
            written.append(path)
    return written

