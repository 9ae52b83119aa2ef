"""Experiment configuration files.

Grammar (one assignment per line)::

    line    := blank | comment | key "=" value [comment]
    comment := "#" ...
    key     := [a-z_][a-z0-9_]*
    value   := number | string | bool | list
    number  := Python int/float literal (1e-4, 250, -104.0)
    string  := double- or single-quoted Python string literal
    bool    := true | false
    list    := "[" value ("," value)* "]"

Keys are flat and map 1:1 onto :class:`ExperimentConfig` fields; omitted
keys keep their defaults, unknown keys are rejected, and a repeated key is
an error.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .netsim import Bounds, NetworkParams, PowerModelParams, RadioParams
from .optimizer import GaParams, SaParams


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # COP box
    lambda_dbs: list = field(default_factory=lambda: [0.0005, 0.0125])
    r_sz: list = field(default_factory=lambda: [10.0, 50.0])
    p_tx_dbm: list = field(default_factory=lambda: [15.0, 30.0])
    # data generation
    bins: int = 10
    n_cycles: int = 20
    r_er: float = 15.0
    lambda_ue: float = 0.0005
    area_m2: float = 1.0e6
    min_distance_m: float = 1.0
    rsz_expansion: float = 1.0
    # radio
    carrier_hz: float = 3.5e9
    pl_exp_near: float = 2.1
    pl_exp_far: float = 4.0
    breakpoint_m: float = 10.0
    shadow_sigma_db: float = 4.0
    noise_dbm: float = -104.0
    tx_gain_dbi: float = 0.0
    # power model
    dbs_p0_w: float = 6.8
    dbs_slope: float = 4.0
    dbs_sleep_w: float = 4.3
    cbs_fixed_w: float = 130.0
    # surrogates
    kfold: int = 5
    # optimisation
    alpha_se: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    algorithms: list = field(default_factory=lambda: ["sa", "ga"])
    schemes: list = field(default_factory=lambda: ["baseline", "ddoec"])
    trials: int = 20
    sa_t0: float = 250.0
    sa_delta: float = 1e-4
    sa_sigma: float = 0.01
    sa_max_iters: int = 2000
    sa_patience: int = 50
    sa_step_frac: float = 0.1
    sa_schedule: str = "literal"
    sa_sigma_adaptive: bool = False
    sa_tol: float = 1e-4
    ga_pop_size: int = 24
    ga_generations: int = 200
    ga_tournament: int = 2
    ga_blend_alpha: float = 0.5
    ga_mutation_prob: float = 0.1
    ga_mutation_scale: float = 0.1
    ga_elite: int = 1
    ga_patience: int = 10
    ga_tol: float = 1e-4
    # validation; 0 means "same as n_cycles"
    validation_cycles: int = 0
    # run
    master_seed: int = 20230601
    output_dir: str = "runs/experiment"
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    # ---- derived parameter objects -------------------------------------------------
    @property
    def bounds(self) -> Bounds:
        return Bounds(tuple(self.lambda_dbs), tuple(self.r_sz), tuple(self.p_tx_dbm))

    @property
    def radio(self) -> RadioParams:
        return RadioParams(self.carrier_hz, self.pl_exp_near, self.pl_exp_far, self.breakpoint_m,
                           self.shadow_sigma_db, self.noise_dbm, self.tx_gain_dbi, self.r_er)

    @property
    def power(self) -> PowerModelParams:
        return PowerModelParams(self.dbs_p0_w, self.dbs_slope, self.dbs_sleep_w, self.cbs_fixed_w)

    @property
    def network(self) -> NetworkParams:
        return NetworkParams(self.lambda_ue, self.area_m2, self.min_distance_m, self.rsz_expansion)

    @property
    def sa(self) -> SaParams:
        return SaParams(self.sa_t0, self.sa_delta, self.sa_sigma, self.sa_max_iters, self.sa_patience,
                        self.sa_step_frac, self.sa_schedule, self.sa_tol, self.sa_sigma_adaptive)

    @property
    def ga(self) -> GaParams:
        return GaParams(self.ga_pop_size, self.ga_generations, self.ga_tournament, self.ga_blend_alpha,
                        self.ga_mutation_prob, self.ga_mutation_scale, self.ga_elite, self.ga_patience,
                        self.ga_tol)

    @property
    def val_cycles(self) -> int:
        return self.validation_cycles or self.n_cycles

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})

    # ---- checks ------------------------------------------------------------------
    def validate(self) -> None:
        for name in ("lambda_dbs", "r_sz", "p_tx_dbm"):
            rng = getattr(self, name)
            if len(rng) != 2:
                raise ConfigError(f"{name}: expected [min, max]")
            lo, hi = rng
            if lo < 0 or not lo < hi:
                raise ConfigError(f"{name}: invalid range ({lo}, {hi}); need 0 <= min < max")
        for a in self.alpha_se:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"alpha_se: weight {a} outside [0, 1]")
        if not self.alpha_se:
            raise ConfigError("alpha_se: at least one weight case required")
        for algo in self.algorithms:
            if algo not in ("sa", "ga"):
                raise ConfigError(f"algorithms: unknown algorithm {algo!r}")
        for scheme in self.schemes:
            if scheme not in ("baseline", "ddoec"):
                raise ConfigError(f"schemes: unknown scheme {scheme!r}")
        positive_ints = ("bins", "n_cycles", "trials", "kfold", "jobs", "sa_max_iters",
                         "sa_patience", "ga_pop_size", "ga_generations", "ga_tournament", "ga_patience")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.bins < 2:
            raise ConfigError("bins: must be >= 2")
        if self.kfold < 2:
            raise ConfigError("kfold: must be >= 2")
        if self.validation_cycles < 0:
            raise ConfigError("validation_cycles: must be >= 0")
        if self.r_er < 0:
            raise ConfigError("r_er: must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed: must be a 64-bit unsigned integer")
        try:
            self.radio, self.power, self.network, self.sa, self.ga
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_KEY = re.compile(r"^[a-z_][a-z0-9_]*$")
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _field_default(name):
    f = _FIELDS[name]
    return f.default_factory() if f.default is MISSING else f.default


def _parse_value(text: str, where: str):
    text = text.strip()
    swapped = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", text))
    try:
        return ast.literal_eval(swapped)
    except (ValueError, SyntaxError):
        raise ConfigError(f"{where}: cannot parse value {text!r}") from None


def _coerce(name: str, value, where: str):
    default = _field_default(name)
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {name} must be true/false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: {name} must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {name} must be a number")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: {name} must be finite")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: {name} must be a quoted string")
        return value
    if kind is list:
        if not isinstance(value, (list, tuple)):
            value = [value]
        element = type(default[0])
        out = []
        for v in value:
            if element is float:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{where}: {name} entries must be numbers")
                out.append(float(v))
            elif not isinstance(v, element):
                raise ConfigError(f"{where}: {name} entries must be {element.__name__}")
            else:
                out.append(v)
        return out
    raise ConfigError(f"{where}: unsupported key {name}")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"{source}:{line_no}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, _, rest = line.partition("=")
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"{where}: malformed key {key!r}")
        if key not in _FIELDS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = _coerce(key, _parse_value(rest, where), f"{where}")
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in asdict(cfg).items())
