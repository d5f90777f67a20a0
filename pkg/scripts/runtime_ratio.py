"""Per-solve wall time of each design level relative to the dense reference design.

    python scripts/runtime_ratio.py --repeats 200
"""

import argparse
import time

import numpy as np

from pneit.config import RunConfig
from pneit.geometry import concentric_design
from pneit.pipeline import build_problem


def per_solve(problem, coeffs) -> float:
    fm = problem.forward
    fm.posterior_batch(coeffs[:2], problem.protocol.patterns)       # warm-up (JIT, caches)
    t0 = time.perf_counter()
    fm.posterior_batch(coeffs, problem.protocol.patterns)
    return (time.perf_counter() - t0) / len(coeffs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--dense-points", type=int, default=1000)
    args = ap.parse_args()
    cfg = RunConfig(dense_points=args.dense_points)
    base = build_problem(cfg)
    coeffs = np.random.default_rng(0).standard_normal((args.repeats, cfg.n_modes))
    ref = per_solve(base.with_design(base.dense_design), coeffs[: max(args.repeats // 10, 5)])
    print("design_total,seconds_per_solve,relative_runtime")
    for level in (0, 1, 2):
        pb = base.with_design(concentric_design(level, base.electrodes))
        t = per_solve(pb, coeffs)
        print(f"{pb.design.total},{t:.3e},{t / ref:.4f}")
    print(f"{base.dense_design.total},{ref:.3e},1.0000")


if __name__ == "__main__":
    main()
