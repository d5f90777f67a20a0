"""Replicated synthetic experiments shared by the acceptance suite and the scripts.

A static replicate draws a log-conductivity from the static KL prior,
simulates one noisy frame with the dense solver and recovers it at every
design level with and without the discretisation-aware likelihood.  A
non-PN run on the dense design serves as the reference posterior.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import RunConfig
from .geometry import concentric_design
from .pipeline import (Problem, build_problem, conductivity_summary, inside_ellipse, principal_axes, project,
                       static_run)

logger = logging.getLogger(__name__)


@dataclass
class ReplicateResult:
    seed: int
    truth: list
    design_totals: dict = field(default_factory=dict)     # level -> n_A + n_B
    istd: dict = field(default_factory=dict)              # "level/pn" -> integrated std of a
    covered: dict = field(default_factory=dict)           # "pn"/"nonpn" -> truth inside 95% ellipse
    m2: dict = field(default_factory=dict)                # squared Mahalanobis distance in the PC plane
    reference_istd: float = float("nan")
    seconds: dict = field(default_factory=dict)
    evals: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ReplicateResult":
        return cls(**json.loads(text))

    def ordering_holds(self, levels=(0, 1, 2)) -> bool:
        """PN above non-PN at every level and both strictly decreasing in level."""
        pn = [self.istd[f"{lv}/pn"] for lv in levels]
        non = [self.istd[f"{lv}/nonpn"] for lv in levels]
        above = all(a > b for a, b in zip(pn, non))
        decreasing = all(np.diff(pn) < 0) and all(np.diff(non) < 0)
        return above and decreasing


def synthetic_static_frame(problem: Problem, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Truth coefficients from N(0, I) and one frame of dense-solver voltages plus noise."""
    c = problem.config
    truth = rng.standard_normal(c.n_modes)
    dense = problem.with_design(problem.dense_design)
    mean, _ = dense.forward.posterior_batch(truth[None], problem.protocol.patterns)
    y = mean[0] @ problem.protocol.diff.T
    y = y + c.sigma * rng.standard_normal(y.shape)
    return truth, y


def static_replicate(seed: int, config: RunConfig | None = None, levels=(0, 1, 2),
                     reference_particles: int = 100, reference_moves: int = 3,
                     coverage_level: int = 0) -> ReplicateResult:
    config = RunConfig() if config is None else config
    base = build_problem(config)
    streams = np.random.SeedSequence(seed).spawn(2 + 2 * len(levels))
    truth, y = synthetic_static_frame(base, np.random.default_rng(streams[0]))
    out = ReplicateResult(seed, truth.tolist())
    clouds = {}
    k = 2
    for level in levels:
        pb = base.with_design(concentric_design(level, base.electrodes))
        out.design_totals[str(level)] = pb.design.total
        for pn in (True, False):
            tag = f"{level}/{'pn' if pn else 'nonpn'}"
            res = static_run(pb, y, np.random.default_rng(streams[k]), pn=pn)
            k += 1
            ens = res.ensemble
            out.istd[tag] = conductivity_summary(pb.basis, ens.coeffs, ens.weights).integrated_std()
            out.seconds[tag], out.evals[tag] = res.seconds, res.n_evals
            if level == coverage_level:
                clouds["pn" if pn else "nonpn"] = (ens.coeffs, ens.weights)
            logger.info("seed %d %s: istd %.4g (%d solves, %.1f s)", seed, tag, out.istd[tag], res.n_evals,
                        res.seconds)
    ref_cfg = config.update(moves=reference_moves)
    ref_pb = build_problem(ref_cfg, design=base.dense_design)
    ref = static_run(ref_pb, y, np.random.default_rng(streams[1]), pn=False, particles=reference_particles)
    out.seconds["reference"], out.evals["reference"] = ref.seconds, ref.n_evals
    out.reference_istd = conductivity_summary(ref_pb.basis, ref.ensemble.coeffs,
                                              ref.ensemble.weights).integrated_std()
    center, axes, _ = principal_axes(ref.ensemble.coeffs, ref.ensemble.weights)
    t2 = project(truth, center, axes)[0]
    for name, (coeffs, w) in clouds.items():
        ok, m2 = inside_ellipse(t2, project(coeffs, center, axes), w)
        out.covered[name], out.m2[name] = bool(ok), m2
    return out


def summarise(results: list[ReplicateResult], levels=(0, 1, 2)) -> dict:
    """Counts and medians over replicates."""
    keys = [f"{lv}/{p}" for lv in levels for p in ("pn", "nonpn")]
    med = {k: float(np.median([r.istd[k] for r in results])) for k in keys}
    return {
        "n": len(results),
        "ordering_seeds": sum(r.ordering_holds(levels) for r in results),
        "median_istd": med,
        "median_ordering": ReplicateResult(-1, [], istd=med).ordering_holds(levels),
        "covered_pn": sum(r.covered.get("pn", False) for r in results),
        "covered_nonpn": sum(r.covered.get("nonpn", False) for r in results),
    }

