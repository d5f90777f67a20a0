"""Run configuration shared by the command line and the experiment scripts."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .likelihood import DEFAULT_CURRENT


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    # log-conductivity prior
    amp_a: float = 1.0
    length_a: float = 0.3
    n_modes: int = 32
    lam: float = 100.0
    tau: float = 0.0
    # forward solver
    amp_u: float = 100.0
    length_u: float = 0.211
    design_level: int = 0
    dense_points: int = 1000
    n_electrodes: int = 8
    # measurements
    sigma: float = 1.0
    current: float = DEFAULT_CURRENT
    frames: int = 49
    # sampler
    particles: int = 200
    tempering_steps: int = 100
    moves: int = 5
    pcn_beta: float = 0.5
    pn: bool = True
    seed: int = 0
    threads: int = 1
    grid: int = 64
    out: str = "out"

    def __post_init__(self):
        positive = ("amp_a", "length_a", "amp_u", "length_u", "current", "lam")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma < 0 or self.tau < 0:
            raise ConfigError("sigma and tau must be non-negative")
        if self.n_modes < 1 or self.particles < 2 or self.tempering_steps < 1 or self.moves < 0:
            raise ConfigError("n_modes >= 1, particles >= 2, tempering_steps >= 1 and moves >= 0 required")
        if self.design_level not in (0, 1, 2):
            raise ConfigError(f"design level must be 0, 1 or 2, got {self.design_level}")
        if self.dense_points < 1000:
            raise ConfigError("the dense reference design needs at least 1000 points")
        if not 0 < self.pcn_beta < 1:
            raise ConfigError("pcn_beta must lie in (0, 1)")
        if self.frames < 1 or self.threads < 1 or self.grid < 2 or self.n_electrodes < 2:
            raise ConfigError("frames, threads >= 1; grid, n_electrodes >= 2")

    def update(self, **kw) -> "RunConfig":
        try:
            return replace(self, **{k: v for k, v in kw.items() if v is not None})
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def to_file(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        cp["run"] = {k: str(v) for k, v in asdict(self).items()}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def from_file(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        """Read the ``[run]`` section of an INI file on top of ``base``."""
        cp = configparser.ConfigParser()
        try:
            ok = cp.read(path)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        if not ok:
            raise ConfigError(f"cannot read config file {path}")
        section = cp["run"] if cp.has_section("run") else {}
        return (base or cls()).update(**parse_fields(section))


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_fields(mapping) -> dict:
    out = {}
    for key, raw in mapping.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind in (bool, "bool"):
                low = str(raw).strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                out[key] = low in ("true", "1", "yes")
            elif kind in (int, "int"):
                out[key] = int(raw)
            elif kind in (float, "float"):
                out[key] = float(raw)
            else:
                out[key] = str(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return out
