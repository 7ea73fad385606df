"""Experiment configuration read from sectioned key-value (INI) files.

Example::

    [experiment]
    name = field
    seed = 2024
    replications = 200
    out = runs/field

    [domain]
    lower = 0 0
    upper = 10 10

    [covariance]
    mu = 0
    sigma2 = 1
    nu = 1.9
    phi_nu = 4

    [reference]
    r = 500
    m = 10
    rule = nearest
    ordering = sorted

    [pcgp]
    m_region = 10
    cells = 16
    G = 4

    [grids]
    sizes = 25 50 100

Lists are whitespace separated.  Unknown sections or keys are errors, so
typos fail loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

EXPERIMENTS = ("bb", "field", "mle", "mpcgp-compare", "theorem-probe")
RULES = ("nearest", "radius", "full")
ORDERINGS = ("sorted", "random", "as-given")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    replications: int = 100
    out: str = "runs"
    # domain
    lower: tuple = (0.0, 0.0)
    upper: tuple = (10.0, 10.0)
    # covariance
    mu: float = 0.0
    sigma2: float = 1.0
    nu: float = 1.9
    phi: float | None = None
    phi_nu: float | None = 4.0
    # reference set
    r: int = 1000
    m: int = 15
    rule: str = "nearest"
    radius: float | None = None
    ordering: str = "sorted"
    # pcgp
    m_region: int | None = None
    cells: tuple = (16, 16)
    G: int = 4
    cell_cap: int = 2000
    # grids
    sizes: tuple = (25, 50, 100)
    style: str = "cell"
    levels: tuple = (3, 9, 14)
    base: int = 24
    # mle
    n: tuple = (2000, 5000, 10000)
    generator_m: int = 200
    pcgp_r: int = 1000
    cell_target: int = 500
    # bookkeeping
    grid_cap: int = 200_000

    @property
    def dim(self) -> int:
        return len(self.lower)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if len(self.upper) != len(self.lower) or any(a >= b for a, b in zip(self.lower, self.upper)):
            raise ConfigError("domain needs lower < upper on every axis")
        for name in ("replications", "r", "m", "G", "cell_cap", "generator_m", "pcgp_r",
                     "cell_target", "base", "grid_cap"):
            if getattr(self, name) < (0 if name == "m" else 1):
                raise ConfigError(f"{name} must be positive")
        if self.m_region is not None and self.m_region < 1:
            raise ConfigError("m_region must be positive")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if not 0 < self.nu <= 2:
            raise ConfigError("nu must lie in (0, 2]")
        if self.phi is None and self.phi_nu is None:
            raise ConfigError("set phi or phi_nu")
        if self.rule not in RULES:
            raise ConfigError(f"rule must be one of {RULES}")
        if self.rule == "radius" and not (self.radius and self.radius > 0):
            raise ConfigError("the radius rule needs a positive radius")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"ordering must be one of {ORDERINGS}")
        if self.style not in ("cell", "endpoint"):
            raise ConfigError("grid style must be cell or endpoint")
        for name in ("sizes", "levels", "n"):
            seq = getattr(self, name)
            if not seq or list(seq) != sorted(set(seq)) or min(seq) < (0 if name == "levels" else 1):
                raise ConfigError(f"{name} must be a nonempty strictly ascending list")
        if any(c < 1 for c in self.cells):
            raise ConfigError("cell counts must be positive")
        return self

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Shrink replications by ``factor`` and cap grids at ``max(625, 25000 * factor)`` points."""
        if not factor > 0:
            raise ConfigError("scale must be positive")
        if factor >= 1:
            return replace(self, replications=max(1, round(self.replications * factor)))
        return replace(self, replications=max(40, round(self.replications * factor)),
                       grid_cap=min(self.grid_cap, max(625, int(25000 * factor))))


_SECTIONS = {
    "experiment": {"name": "experiment", "seed": "seed", "replications": "replications", "out": "out"},
    "domain": {"lower": "lower", "upper": "upper"},
    "covariance": {"mu": "mu", "sigma2": "sigma2", "nu": "nu", "phi": "phi", "phi_nu": "phi_nu"},
    "reference": {"r": "r", "m": "m", "rule": "rule", "radius": "radius", "ordering": "ordering"},
    "pcgp": {"m_region": "m_region", "cells": "cells", "g": "G", "cell_cap": "cell_cap"},
    "grids": {"sizes": "sizes", "style": "style", "levels": "levels", "base": "base",
              "cap": "grid_cap"},
    "mle": {"n": "n", "generator_m": "generator_m", "pcgp_r": "pcgp_r",
            "cell_target": "cell_target"},
}

_FLOAT_TUPLES = {"lower", "upper"}
_INT_TUPLES = {"cells", "sizes", "levels", "n"}
_FLOATS = {"mu", "sigma2", "nu", "phi", "phi_nu", "radius"}
_STRINGS = {"experiment", "out", "rule", "ordering", "style"}


def _convert(name: str, raw: str):
    raw = raw.strip()
    try:
        if name in _FLOAT_TUPLES:
            return tuple(float(x) for x in raw.split())
        if name in _INT_TUPLES:
            return tuple(int(x) for x in raw.split())
        if name in _FLOATS:
            return None if raw.lower() in ("", "none") else float(raw)
        if name in _STRINGS:
            return raw
        if name == "m_region":
            return None if raw.lower() in ("", "none") else int(raw)
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for section in cp.sections():
        keys = _SECTIONS.get(section.lower())
        if keys is None:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in keys:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            values[keys[key]] = _convert(keys[key], raw)
    if "experiment" not in values:
        raise ConfigError(f"{source}: [experiment] name is required")
    if "seed" not in values:
        raise ConfigError(f"{source}: [experiment] seed is required")
    if "phi" in values and values["phi"] is not None and "phi_nu" not in values:
        values["phi_nu"] = None
    if "cells" in values and len(values["cells"]) == 1:
        values["cells"] = values["cells"] * len(values.get("lower", (0.0, 0.0)))
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def config_dict(cfg: ExperimentConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
