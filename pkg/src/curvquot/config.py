"""Sweep and solve configuration files.

The format is a TOML subset: ``#`` comments, ``[section]`` headers and
``key = value`` lines whose values are integers, floats, quoted strings or
arrays. ``[solver]`` and ``[sweep]`` are reserved; every other section is a
problem, kept in file order.

    [solver]
    tol_residual = 1e-9
    linear_solver = "auto"

    [sweep]
    alpha = 1.0
    beta = 1.0
    c_candidate = 0.25

    [cap]
    n = 3
    m = [17, 25, 33]        # one row per grid size
    boundary = "sphere"
    boundary_params = [3.0]
    rhs = "manufactured"
"""

from __future__ import annotations

import sys
from dataclasses import fields as dc_fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from curvquot.harness import ProblemConfig, SweepConfig, expand_problem
from curvquot.solver import SolverConfig

RESERVED = ("solver", "sweep")
SWEEP_KEYS = ("alpha", "beta", "c_candidate", "threads")


class ConfigError(ValueError):
    pass


def _solver_config(table: dict) -> SolverConfig:
    known = {f.name for f in dc_fields(SolverConfig)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"[solver]: unknown keys {sorted(unknown)}")
    try:
        return SolverConfig(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver]: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> SweepConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    loose = [k for k, v in doc.items() if not isinstance(v, dict)]
    if loose:
        raise ConfigError(f"{source}: keys outside any section: {loose}")
    solver = _solver_config(doc.get("solver", {}))
    sweep = doc.get("sweep", {})
    unknown = set(sweep) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"{source}: [sweep]: unknown keys {sorted(unknown)}")
    problems: list[ProblemConfig] = []
    for name, table in doc.items():
        if name in RESERVED:
            continue
        nested = [k for k, v in table.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{source}: [{name}]: nested tables are not supported ({nested})")
        try:
            problems.extend(expand_problem(name, table))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}]: {exc}") from exc
    try:
        return SweepConfig(problems=problems, solver=solver,
                           alpha=float(sweep.get("alpha", 1.0)), beta=float(sweep.get("beta", 1.0)),
                           c_candidate=(None if "c_candidate" not in sweep else float(sweep["c_candidate"])),
                           threads=(None if "threads" not in sweep else int(sweep["threads"])))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: [sweep]: {exc}") from exc


def load_config(path) -> SweepConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
