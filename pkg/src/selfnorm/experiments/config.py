"""Experiment configuration: a flat TOML file with a fixed schema.

Every key is optional and unknown keys are rejected, so a config file is
always a complete and auditable description of a run.  Example::

    statistic = "studentized-u"
    dist = "normal"
    dist_params = { sigma = 1.0 }
    kernel = "t"
    n_list = [50, 200, 800]
    x_grid = [0.5, 1.0, 1.5]
    reps = 200000
    seed = 20240601
    estimator = "plain"
"""

from __future__ import annotations

import dataclasses
import importlib
import os
import re
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from ..distributions import FAMILIES, make_distribution
from ..errors import ConfigError, SelfNormError
from ..kernels import builtin_kernel

STATISTICS = ("self-normalized-sum", "studentized-u", "generic")
ESTIMATORS = ("plain", "tilted", "both")
SEED_ENV = "SELFNORM_SEED"
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExperimentConfig:
    statistic: str = "self-normalized-sum"
    dist: str = "normal"
    dist_params: tuple = ()  # sorted (name, value) pairs, hashable
    kernel: str = "t"
    generic: str = ""  # "module:function" for statistic = "generic"
    n_list: tuple = (10,)
    x_grid: tuple = (0.5, 1.0, 1.5, 2.0)
    reps: int = 100_000
    seed: int = 0
    workers: int = 1
    estimator: str = "plain"
    block_size: int = 10_000
    envelope_p: float = 3.0
    envelope_fit: bool = True
    c1: float = 1.0
    grid_size: int = 4096
    output_dir: str = "selfnorm-out"
    concentration_reps: int = 100_000
    kc_trials: int = 1_000_000
    R_reps: int = 0
    decompose_n: int = 20

    # -- resolved objects -------------------------------------------------
    def distribution(self):
        return make_distribution(self.dist, **dict(self.dist_params))

    def kernel_spec(self):
        return builtin_kernel(self.kernel) if self.statistic == "studentized-u" else None

    def statistic_callable(self):
        if self.statistic != "generic":
            return self.statistic
        mod, _, fn = self.generic.partition(":")
        return getattr(importlib.import_module(mod), fn)

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out["n_list"] = list(self.n_list)
        out["x_grid"] = list(self.x_grid)
        out["dist_params"] = dict(self.dist_params)
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


def _coerce(key, value, text):
    line = _line_of(text, key)

    def fail(msg):
        raise ConfigError(msg, field=key, line=line)

    default = _FIELDS[key].default
    if key in ("n_list", "x_grid"):
        if not isinstance(value, (list, tuple)) or not value:
            fail("expected a non-empty array")
        if key == "n_list":
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                fail("expected an array of integers")
            return tuple(int(v) for v in value)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            fail("expected an array of numbers")
        return tuple(float(v) for v in value)
    if key == "dist_params":
        if not isinstance(value, dict):
            fail("expected a table such as { sigma = 1.0 }")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value.values()):
            fail("parameter values must be numbers")
        return tuple(sorted((k, float(v)) for k, v in value.items()))
    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail("expected true or false")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            fail("expected an integer")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            fail("expected a number")
        return float(value)
    if not isinstance(value, str):
        fail("expected a string")
    return value


def validate(cfg: ExperimentConfig, text: str | None = None) -> ExperimentConfig:
    def fail(key, msg):
        raise ConfigError(msg, field=key, line=_line_of(text, key))

    if cfg.statistic not in STATISTICS:
        fail("statistic", f"must be one of {', '.join(STATISTICS)}")
    if cfg.statistic == "generic" and ":" not in cfg.generic:
        fail("generic", "statistic 'generic' needs generic = \"module:function\"")
    if cfg.estimator not in ESTIMATORS:
        fail("estimator", f"must be one of {', '.join(ESTIMATORS)}")
    if cfg.dist not in FAMILIES:
        fail("dist", f"unknown family; choose from {', '.join(FAMILIES)}")
    try:
        cfg.distribution()
    except (SelfNormError, ValueError, TypeError) as exc:
        fail("dist_params", str(exc))
    m = 0
    if cfg.statistic == "studentized-u":
        try:
            m = builtin_kernel(cfg.kernel).degree
        except KeyError as exc:
            fail("kernel", str(exc.args[0]) if exc.args else "unknown kernel")
    if any(n < 2 for n in cfg.n_list):
        fail("n_list", "every n must be >= 2")
    if m and any(n <= 2 * m for n in cfg.n_list):
        fail("n_list", f"every n must exceed 2m = {2 * m} for this kernel")
    if list(cfg.x_grid) != sorted(cfg.x_grid):
        fail("x_grid", "must be sorted ascending")
    if any(x < 0 for x in cfg.x_grid):
        fail("x_grid", "values must be >= 0")
    if cfg.reps < 1000:
        fail("reps", "must be >= 1000")
    if not 0 <= cfg.seed <= _U64:
        fail("seed", "must fit in an unsigned 64-bit integer")
    if cfg.workers < 1:
        fail("workers", "must be >= 1")
    if cfg.block_size < 100:
        fail("block_size", "must be >= 100")
    if not 2 < cfg.envelope_p <= 3:
        fail("envelope_p", "must lie in (2, 3]")
    if cfg.c1 <= 0:
        fail("c1", "must be > 0")
    if cfg.grid_size < 256:
        fail("grid_size", "must be >= 256")
    if cfg.concentration_reps < 1000:
        fail("concentration_reps", "must be >= 1000")
    if cfg.kc_trials < 1:
        fail("kc_trials", "must be >= 1")
    if cfg.R_reps < 0:
        fail("R_reps", "must be >= 0")
    if cfg.decompose_n <= 2 * max(m, 2):
        fail("decompose_n", "must exceed twice the kernel degree")
    return cfg


def config_from_mapping(data: dict, text: str | None = None) -> ExperimentConfig:
    for key in data:
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", field=key, line=_line_of(text, key))
    values = {k: _coerce(k, v, text) for k, v in data.items()}
    return validate(ExperimentConfig(**values), text)


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return validate(ExperimentConfig())
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", line=int(m.group(1)) if m else None) from exc
    return config_from_mapping(data, text)


def resolve_seed(cfg: ExperimentConfig, cli_seed: int | None = None,
                 environ: dict | None = None) -> ExperimentConfig:
    """Apply seed precedence: command line, then SELFNORM_SEED, then the file."""
    env = os.environ if environ is None else environ
    seed = cfg.seed
    if cli_seed is not None:
        seed = cli_seed
    elif env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV], 0)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} is not an integer", field="seed") from exc
    if not 0 <= seed <= _U64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer", field="seed")
    return dataclasses.replace(cfg, seed=seed)
