"""Synthetic mixing experiment and the voltage dataset file format.

File layout::

    # m=8
    # J=7
    # frames=49
    # sigma=1.0
    # current=100.0
    # times=0.0204...;0.0408...;...
    # truth.<key>=<value>        (optional provenance)
    frame,pattern,electrode,voltage
    1,1,2,0.1234...

``frame`` and ``pattern`` are 1-based, ``electrode`` runs over the
non-reference electrodes ``2..m`` and ``voltage`` is ``U_e - U_1``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .forward import ForwardModel
from .geometry import CollocationDesign, Electrodes
from .kernel import SEKernel
from .likelihood import DEFAULT_CURRENT, Protocol, reference_protocol


@dataclass(frozen=True)
class SyntheticTruth:
    """Gaussian blob of log-conductivity that rotates and spreads after injection.

    The centre moves on a circle of radius ``orbit`` at angle
    ``angle0 + angular_velocity * (t - t_inj)``; positive angular velocity is
    counter-clockwise in the usual (x right, y up) orientation.  The blob
    width follows ``w^2 = width^2 + 2 * diffusion * (t - t_inj)`` and its
    peak scales as ``width^2 / w^2`` so the integral of ``theta`` is conserved
    while the field flattens out.
    """

    amplitude: float = 1.5
    width: float = 0.25
    orbit: float = 0.5
    angle0: float = 0.0
    angular_velocity: float = 4.0
    diffusion: float = 0.05
    injection_frame: int = 11
    n_frames: int = 49

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("blob width must be positive")
        if not 1 <= self.injection_frame <= self.n_frames:
            raise ValueError("injection frame outside the time grid")

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.n_frames + 1) / self.n_frames

    @property
    def injection_time(self) -> float:
        return self.injection_frame / self.n_frames

    def center_angle(self, t: float) -> float:
        return self.angle0 + self.angular_velocity * (t - self.injection_time)

    def state(self, t: float) -> tuple[float, float, np.ndarray]:
        """Peak amplitude, width and centre at time ``t`` (zero amplitude before injection)."""
        dt = t - self.injection_time
        if dt < -1e-12:
            return 0.0, self.width, np.zeros(2)
        dt = max(dt, 0.0)
        w2 = self.width ** 2 + 2 * self.diffusion * dt
        phi = self.center_angle(t)
        return self.amplitude * self.width ** 2 / w2, math.sqrt(w2), self.orbit * np.array([math.cos(phi), math.sin(phi)])

    def to_config(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        cp["truth"] = {k: repr(v) for k, v in asdict(self).items()}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def from_mapping(cls, mapping) -> "SyntheticTruth":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, val in mapping.items():
            if key not in kinds:
                raise ValueError(f"unknown truth parameter {key!r}")
            kw[key] = int(float(val)) if kinds[key] in (int, "int") else float(val)
        return cls(**kw)

    @classmethod
    def from_config(cls, path: str | Path) -> "SyntheticTruth":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        return cls.from_mapping(cp["truth"] if cp.has_section("truth") else {})


@dataclass(frozen=True, eq=False)
class TruthField:
    truth: SyntheticTruth
    t: float

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        amp, w, c = self.truth.state(self.t)
        d = x - c
        theta = amp * np.exp(-0.5 * (d * d).sum(1) / w ** 2)
        return theta, -d / w ** 2 * theta[:, None]


def synthetic_truth_eval(truth: SyntheticTruth, x, t: float) -> float:
    return float(TruthField(truth, t).evaluate(np.asarray(x, float).reshape(1, 2))[0][0])


@dataclass(eq=False)
class Dataset:
    """Voltages ``y`` of shape (frames, J, m-1) with their acquisition protocol."""

    y: np.ndarray
    times: np.ndarray
    protocol: Protocol
    current: float = DEFAULT_CURRENT
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, float)
        self.times = np.asarray(self.times, float)
        if self.y.ndim != 3 or self.y.shape[1:] != (self.protocol.J, self.protocol.m - 1):
            raise ValueError(f"voltage array shape {self.y.shape} inconsistent with protocol")
        if len(self.times) != len(self.y):
            raise ValueError("one time stamp per frame required")
        if np.any(np.diff(self.times) <= 0) or self.times[0] < 0 or self.times[-1] > 1:
            raise ValueError("time grid must be strictly increasing in [0, 1]")

    @property
    def n_frames(self) -> int:
        return len(self.y)

    @property
    def n_measurements(self) -> int:
        return int(self.y.size)


def simulate_dataset(truth: SyntheticTruth, protocol: Protocol, electrodes: Electrodes,
                     dense_design: CollocationDesign, kernel: SEKernel, rng: np.random.Generator,
                     current: float = DEFAULT_CURRENT, frames: int | None = None) -> Dataset:
    """Dense-solver voltages plus independent N(0, sigma^2) noise for every frame."""
    if dense_design.total < 1000:
        raise ValueError(f"data generation needs a resolved design (>= 1000 points), got {dense_design.total}")
    fm = ForwardModel(dense_design, electrodes, kernel)
    times = truth.times if frames is None else truth.times[:frames]
    y = np.empty((len(times), protocol.J, protocol.m - 1))
    baseline = None
    for k, t in enumerate(times):
        before = t < truth.injection_time - 1e-12
        if before and baseline is not None:
            mu = baseline
        else:
            mu, _ = fm.solve_field(TruthField(truth, t), protocol.patterns)
            if before:
                baseline = mu
        noise = protocol.sigma * rng.standard_normal((protocol.J, protocol.m - 1)) if protocol.sigma > 0 else 0.0
        y[k] = mu @ protocol.diff.T + noise
    meta = {f"truth.{k}": v for k, v in asdict(truth).items()}
    meta["dense_points"] = dense_design.total
    return Dataset(y, times, protocol, current, meta)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    p = dataset.protocol
    with open(path, "w") as fh:
        fh.write(f"# m={p.m}\n# J={p.J}\n# frames={dataset.n_frames}\n# sigma={_fmt(p.sigma)}\n")
        fh.write(f"# current={_fmt(dataset.current)}\n")
        fh.write("# times=" + ";".join(_fmt(t) for t in dataset.times) + "\n")
        for k, v in dataset.metadata.items():
            fh.write(f"# {k}={v}\n")
        fh.write("frame,pattern,electrode,voltage\n")
        for f in range(dataset.n_frames):
            for j in range(p.J):
                for e in range(p.m - 1):
                    fh.write(f"{f + 1},{j + 1},{e + 2},{_fmt(dataset.y[f, j, e])}\n")


class DatasetFormatError(ValueError):
    pass


def read_dataset(path: str | Path) -> Dataset:
    header: dict[str, str] = {}
    rows = []
    columns = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if not sep:
                    raise DatasetFormatError(f"{path}:{lineno}: malformed header line")
                header[key.strip()] = val.strip()
                continue
            if columns is None:
                columns = line.split(",")
                if columns != ["frame", "pattern", "electrode", "voltage"]:
                    raise DatasetFormatError(f"{path}:{lineno}: expected columns frame,pattern,electrode,voltage")
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DatasetFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), lineno))
            except ValueError as err:
                raise DatasetFormatError(f"{path}:{lineno}: {err}") from None
    for key in ("m", "J", "frames", "sigma"):
        if key not in header:
            raise DatasetFormatError(f"{path}: missing header '# {key}='")
    m, J, n_frames = int(header["m"]), int(header["J"]), int(header["frames"])
    y = np.full((n_frames, J, m - 1), np.nan)
    for f, j, e, v, lineno in rows:
        if not (1 <= f <= n_frames and 1 <= j <= J and 2 <= e <= m):
            raise DatasetFormatError(f"{path}:{lineno}: index (frame={f}, pattern={j}, electrode={e}) "
                                     f"outside m={m}, J={J}, frames={n_frames}")
        if not np.isnan(y[f - 1, j - 1, e - 2]):
            raise DatasetFormatError(f"{path}:{lineno}: duplicate measurement")
        y[f - 1, j - 1, e - 2] = v
    if len(rows) != y.size:
        raise DatasetFormatError(f"{path}: header promises {n_frames} frames ({y.size} values) "
                                 f"but {len(rows)} rows were read")
    if "times" in header:
        times = np.array([float(t) for t in header["times"].split(";")])
        if len(times) != n_frames:
            raise DatasetFormatError(f"{path}: {len(times)} time stamps for {n_frames} frames")
    else:
        times = np.arange(1, n_frames + 1) / n_frames
    current = float(header.get("current", DEFAULT_CURRENT))
    protocol = reference_protocol(m, float(header["sigma"]), current)
    if protocol.J != J:
        protocol = Protocol(protocol.patterns[:J], protocol.diff, protocol.sigma)
    meta = {k: v for k, v in header.items() if k not in ("m", "J", "frames", "sigma", "times", "current")}
    return Dataset(y, times, protocol, current, meta)


def truth_from_metadata(meta: dict) -> SyntheticTruth | None:
    items = {k[len("truth."):]: v for k, v in meta.items() if k.startswith("truth.")}
    return SyntheticTruth.from_mapping(items) if items else None
