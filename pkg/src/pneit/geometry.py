"""Unit-disc domain, electrode ring and concentric collocation designs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Tank of diameter 15 cm with electrodes 1 cm wide.
DEFAULT_HALF_WIDTH = 0.5 / 7.5

# n_A + n_B for the three standard design levels.
LEVEL_TOTALS = {0: 165, 1: 259, 2: 523}


@dataclass(frozen=True)
class Domain:
    radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - np.asarray(self.center), axis=1) < self.radius


@dataclass(frozen=True, eq=False)
class Electrodes:
    """Ring of ``m`` equal arcs on the unit circle.

    Attributes
    ----------
    angles : (m,) array
        Angular centre of each arc; electrode ``i`` sits at ``2 pi i / m``.
    half_width : float
        Angular half-width of each arc.
    quad_points, quad_normals : (m, q, 2) arrays
        Gauss-Legendre nodes on each arc and the outward normal there.
    quad_weights : (m, q) array
        Arc-length quadrature weights; each row sums to ``2 * half_width``.
    """

    angles: np.ndarray
    half_width: float
    quad_points: np.ndarray
    quad_normals: np.ndarray
    quad_weights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.angles)

    @property
    def centers(self) -> np.ndarray:
        return np.column_stack([np.cos(self.angles), np.sin(self.angles)])

    def on_electrode(self, phi: np.ndarray) -> np.ndarray:
        """True where boundary angle ``phi`` falls inside some arc."""
        phi = np.asarray(phi)
        d = np.angle(np.exp(1j * (phi[..., None] - self.angles)))
        return np.any(np.abs(d) <= self.half_width, axis=-1)


def build_electrodes(m: int = 8, half_width: float = DEFAULT_HALF_WIDTH,
                     quad_nodes: int = 8) -> Electrodes:
    if m < 2:
        raise ValueError(f"need at least two electrodes, got m={m}")
    if not 0 < half_width < math.pi / m:
        raise ValueError(
            f"half_width={half_width} makes electrodes overlap (must be < pi/m = {math.pi / m:.4f})")
    if quad_nodes < 1:
        raise ValueError("quad_nodes must be positive")
    angles = 2 * np.pi * np.arange(m) / m
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
    phi = angles[:, None] + half_width * nodes[None, :]
    pts = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    w = np.broadcast_to(half_width * weights, phi.shape).copy()
    return Electrodes(angles=angles, half_width=float(half_width), quad_points=pts,
                      quad_normals=pts.copy(), quad_weights=w)


@dataclass(frozen=True, eq=False)
class CollocationDesign:
    interior: np.ndarray
    boundary: np.ndarray
    level: str = ""
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        interior = np.asarray(self.interior, dtype=float).reshape(-1, 2)
        boundary = np.asarray(self.boundary, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "boundary", boundary)
        nrm = np.linalg.norm(boundary, axis=1, keepdims=True)
        object.__setattr__(self, "normals", boundary / np.where(nrm > 0, nrm, 1.0))

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @property
    def total(self) -> int:
        return self.n_interior + self.n_boundary

    def points(self) -> np.ndarray:
        return np.vstack([self.interior, self.boundary])

    def min_separation(self) -> float:
        pts = self.points()
        if len(pts) < 2:
            return math.inf
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        d[np.diag_indices_from(d)] = np.inf
        return float(d.min())

    def validate(self, radius: float = 1.0) -> None:
        if self.total == 0:
            raise ValueError("empty collocation design")
        if np.any(np.linalg.norm(self.interior, axis=1) >= radius):
            raise ValueError("interior collocation point on or outside the boundary")
        if np.any(np.abs(np.linalg.norm(self.boundary, axis=1) - radius) > 1e-12):
            raise ValueError("boundary collocation point off the circle")
        if self.min_separation() <= 1e-10:
            raise ValueError("coincident collocation points")


def _ring_counts(n: int, radii: np.ndarray) -> np.ndarray:
    """Split ``n`` points over rings proportionally to circumference."""
    share = n * radii / radii.sum()
    counts = np.floor(share).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts


def _interior_rings(n_interior: int, n_rings: int) -> np.ndarray:
    pts = [np.zeros((1, 2))]
    radii = np.arange(1, n_rings + 1) / (n_rings + 1)
    for k, (r, c) in enumerate(zip(radii, _ring_counts(n_interior - 1, radii))):
        if c == 0:
            continue
        # stagger alternate rings by half a step
        phi = 2 * np.pi * (np.arange(c) + 0.5 * (k % 2)) / c
        pts.append(r * np.column_stack([np.cos(phi), np.sin(phi)]))
    return np.vstack(pts)


def _gap_points(n_boundary: int, electrodes: Electrodes) -> np.ndarray:
    """Boundary points spread evenly over the inter-electrode gaps."""
    m = electrodes.m
    per_gap = np.full(m, n_boundary // m)
    per_gap[: n_boundary % m] += 1
    gap = 2 * np.pi / m - 2 * electrodes.half_width
    phis = []
    for i, c in enumerate(per_gap):
        start = electrodes.angles[i] + electrodes.half_width
        phis.append(start + gap * (np.arange(c) + 0.5) / c)
    phi = np.concatenate(phis)
    return np.column_stack([np.cos(phi), np.sin(phi)])


def design_with_total(total: int, electrodes: Electrodes | None = None,
                      n_boundary: int | None = None, level: str = "") -> CollocationDesign:
    """Concentric design with exactly ``total`` collocation points.

    Interior rings sit at equal radial spacing ``1/(K+1)`` with a centre point;
    ring counts are proportional to radius.  Unless given, the boundary count
    is the multiple of ``m`` closest to the ring spacing times the gap length.
    """
    electrodes = electrodes or build_electrodes()
    m = electrodes.m
    gap_frac = 1 - m * electrodes.half_width / np.pi
    best = None
    for K in range(1, 200):
        h = 1.0 / (K + 1)
        nb = n_boundary if n_boundary is not None else max(m, m * round(2 * np.pi * gap_frac / h / m))
        na_nominal = 1 + np.pi * K * (K + 1)
        err = abs(na_nominal + nb - total)
        if best is None or err < best[0]:
            best = (err, K, nb)
    _, K, nb = best
    n_interior = total - nb
    if n_interior < 1:
        raise ValueError(f"total={total} too small for {nb} boundary points")
    design = CollocationDesign(_interior_rings(n_interior, K), _gap_points(nb, electrodes),
                               level=level or str(total))
    design.validate()
    return design


def concentric_design(level: int, electrodes: Electrodes | None = None) -> CollocationDesign:
    if level not in LEVEL_TOTALS:
        raise ValueError(f"unknown design level {level}; expected one of {sorted(LEVEL_TOTALS)}")
    return design_with_total(LEVEL_TOTALS[level], electrodes, level=str(level))


def disc_probe(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Lattice points inside the closed unit disc and points on the circle."""
    g = np.linspace(-1, 1, resolution)
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    phi = np.linspace(0, 2 * np.pi, 4 * resolution, endpoint=False)
    return inside, np.column_stack([np.cos(phi), np.sin(phi)])


def _sup_min_dist(probe: np.ndarray, pts: np.ndarray, chunk: int = 20000) -> float:
    if len(pts) == 0:
        return math.inf
    best = 0.0
    for i in range(0, len(probe), chunk):
        p = probe[i:i + chunk]
        d2 = (p * p).sum(1)[:, None] - 2 * p @ pts.T + (pts * pts).sum(1)[None, :]
        best = max(best, float(np.sqrt(max(d2.min(axis=1).max(), 0.0))))
    return best


def fill_distances(design: CollocationDesign, probe_grid: int = 200) -> tuple[float, float]:
    """Return ``(h_A, h_B)`` maximised over a probe lattice of the given resolution."""
    if design.total == 0:
        raise ValueError("empty collocation design")
    inside, circle = disc_probe(probe_grid)
    return _sup_min_dist(inside, design.interior), _sup_min_dist(circle, design.boundary)


def fill_distance(design: CollocationDesign, probe_grid: int = 200) -> float:
    return min(fill_distances(design, probe_grid))


def write_design_csv(path: str | Path, design: CollocationDesign,
                     electrodes: Electrodes | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "x", "y", "nx", "ny"])
        for x, y in design.interior:
            w.writerow(["A", repr(float(x)), repr(float(y)), "", ""])
        for (x, y), (nx, ny) in zip(design.boundary, design.normals):
            w.writerow(["B", repr(float(x)), repr(float(y)), repr(float(nx)), repr(float(ny))])
        if electrodes is not None:
            for x, y in electrodes.centers:
                w.writerow(["E", repr(float(x)), repr(float(y)), repr(float(x)), repr(float(y))])


def read_design_csv(path: str | Path) -> tuple[CollocationDesign, np.ndarray]:
    """Read a design file; returns the design and the electrode centre rows (possibly empty)."""
    rows = {"A": [], "B": [], "E": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["kind", "x", "y", "nx", "ny"]:
            raise ValueError(f"{path}: bad header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            kind = row["kind"]
            if kind not in rows:
                raise ValueError(f"{path}:{lineno}: unknown kind {kind!r}")
            rows[kind].append((float(row["x"]), float(row["y"])))
    design = CollocationDesign(np.array(rows["A"]).reshape(-1, 2), np.array(rows["B"]).reshape(-1, 2),
                               level=Path(path).stem)
    return design, np.array(rows["E"]).reshape(-1, 2)
