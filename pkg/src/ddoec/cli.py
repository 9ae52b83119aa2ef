"""Command-line entry point: ``ddoec <stage> [--config FILE] [--out DIR] [--jobs N]``.

Stages and the files they read/write under the output directory::

    gen-data    -> config.txt, data/{ideal,erroneous,residual}.csv (+ .meta)
    train       data/ -> models/*.json, models/normalizers.json, models/cv_report.csv
    optimize    models/ -> records.json (surrogate optima, not yet validated)
    validate    records.json -> records.json (simulator-validated objectives filled in)
    report      records.json -> summary.csv, iterations.csv, traces/*.csv, plots/*.svg
    experiment  all of the above in order

The output directory is ``--out``, else ``$DDOEC_OUT``, else ``output_dir``
from the config. Without ``--config`` a stage reuses ``config.txt`` from the
output directory (written by the first stage), else the defaults.

Every stage updates ``manifest.json`` with the config, the derived seeds, the
tool version and SHA-256 digests of its inputs and outputs. Exit status is 0
on success, 1 on a runtime failure (one JSON line on stderr), 2 on usage
errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config, load_config
from .pipeline import (generate_data, load_data, load_records, load_surrogates, optimize_all,
                       save_data, save_records, save_surrogates, train, validate_records,
                       validation_seed)
from .report import check_writable, emit_report
from .seeding import derive_seed

STAGES = ("gen-data", "train", "optimize", "validate", "report", "experiment")
ENV_OUT = "DDOEC_OUT"

log = logging.getLogger("ddoec")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(out: Path, rels) -> dict:
    return {str(r): _sha256(out / r) for r in sorted(rels) if (out / r).is_file()}


def _tree(out: Path, sub: str) -> list[str]:
    base = out / sub
    if not base.exists():
        return []
    return sorted(str(p.relative_to(out)) for p in base.rglob("*") if p.is_file())


def seed_table(cfg: ExperimentConfig) -> dict:
    return {
        "master_seed": cfg.master_seed,
        "datagen": derive_seed(cfg.master_seed, "datagen"),
        "train": derive_seed(cfg.master_seed, "train"),
        "validate": validation_seed(cfg),
        "trial": "derive_seed(master_seed, 'trial', algorithm, repr(alpha_se), index)",
        "derivation": "uint64 from the first 8 bytes (big-endian) of SHA-256 of "
                      "'master/tag1/tag2/...'; generator numpy PCG64",
    }


def write_manifest(out: Path, cfg: ExperimentConfig, stage: str, inputs: dict, outputs: dict,
                   started: str) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except ValueError:
            manifest = {}
    manifest.update({
        "tool": "ddoec",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": dump_config(cfg),
        "seeds": seed_table(cfg),
    })
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        "started": started,
        "finished": _now(),
        "replay": f"ddoec {stage} --config {out / 'config.txt'} --out {out}",
        "inputs": inputs,
        "outputs": outputs,
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------- stages ---

def stage_gen_data(cfg, out, args):
    save_data(generate_data(cfg), out / "data")
    return _tree(out, "data")


def stage_train(cfg, out, args):
    save_surrogates(train(cfg, load_data(out / "data")), out / "models")
    return _tree(out, "models")


def stage_optimize(cfg, out, args):
    sur = load_surrogates(out / "models")
    records = optimize_all(cfg, sur, algorithms=getattr(args, "algo", None),
                           schemes=getattr(args, "scheme", None), alphas=getattr(args, "alpha", None))
    save_records(records, out / "records.json")
    return ["records.json"]


def _need_records(out: Path, hint: str) -> Path:
    path = out / "records.json"
    if not path.exists():
        raise FileNotFoundError(f"no {path}; run {hint} first")
    return path


def stage_validate(cfg, out, args):
    sur = load_surrogates(out / "models")
    path = _need_records(out, "`optimize`")
    save_records(validate_records(cfg, sur, load_records(path)), path)
    return ["records.json"]


def stage_report(cfg, out, args):
    records = load_records(_need_records(out, "`optimize` and `validate`"))
    if not records:
        raise ValueError("records.json holds no trials")
    return [str(p.relative_to(out)) for p in emit_report(records, out)]


# stage -> (inputs under the output directory, runner returning its outputs)
_STAGES = {
    "gen-data": (lambda out: ["config.txt"], stage_gen_data),
    "train": (lambda out: _tree(out, "data"), stage_train),
    "optimize": (lambda out: _tree(out, "models"), stage_optimize),
    "validate": (lambda out: _tree(out, "models") + ["records.json"], stage_validate),
    "report": (lambda out: ["records.json"], stage_report),
}


def run_stage(stage: str, cfg: ExperimentConfig, out: Path, args=None) -> None:
    started = _now()
    list_inputs, runner = _STAGES[stage]
    inputs = _digests(out, list_inputs(out))
    outputs = runner(cfg, out, args)
    write_manifest(out, cfg, stage, inputs, _digests(out, outputs), started)


# ------------------------------------------------------------------------ CLI ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddoec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ddoec {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file (key = value lines)")
    common.add_argument("--out", type=Path, help=f"output directory (else ${ENV_OUT}, else config)")
    common.add_argument("--jobs", type=int, help="worker processes for data generation")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE")
    helps = {
        "gen-data": "simulate the paired ideal/erroneous databases",
        "train": "cross-validate and fit the KPI surrogates",
        "optimize": "run SA/GA on the surrogate objectives",
        "validate": "evaluate optimised COPs on the ideal simulator",
        "report": "write summary tables, traces and plots",
        "experiment": "run every stage in order",
    }
    for stage in STAGES:
        p = sub.add_parser(stage, parents=[common], help=helps[stage])
        if stage == "optimize":
            p.add_argument("--algo", action="append", choices=("sa", "ga"))
            p.add_argument("--scheme", action="append", choices=("baseline", "ddoec"))
            p.add_argument("--alpha", action="append", type=float)
    return parser


def resolve(args) -> tuple[ExperimentConfig, Path]:
    out_hint = args.out or (Path(os.environ[ENV_OUT]) if os.environ.get(ENV_OUT) else None)
    if args.config is not None:
        cfg = load_config(args.config)
    elif out_hint is not None and (out_hint / "config.txt").exists():
        cfg = load_config(out_hint / "config.txt")
    else:
        cfg = ExperimentConfig()
    if args.jobs is not None:
        if args.jobs < 1:
            raise ValueError("--jobs must be >= 1")
        cfg = cfg.replace(jobs=args.jobs)
    out = out_hint or Path(cfg.output_dir)
    return cfg, out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg, out = resolve(args)
        check_writable(out)
        snapshot = out / "config.txt"
        text = dump_config(cfg)
        if not snapshot.exists() or snapshot.read_text() != text:
            snapshot.write_text(text)
        stages = STAGES[:-1] if args.stage == "experiment" else (args.stage,)
        for stage in stages:
            log.info("stage %s -> %s", stage, out)
            run_stage(stage, cfg, out, args)
    except Exception as exc:
        if args.verbose:
            log.exception("stage %s failed", args.stage)
        msg = " ".join(str(exc).split())
        print(json.dumps({"status": "error", "stage": args.stage, "kind": type(exc).__name__,
                          "message": msg}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
