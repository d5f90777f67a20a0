"""Command line: ``simulate | static | filter | diagnostics``.

Exit status is 0 on success, 2 for bad configuration or input files and 3
when the forward solver or the sampler fails numerically.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .data import DatasetFormatError, SyntheticTruth, read_dataset, simulate_dataset, write_dataset
from .forward import NumericalError
from .pipeline import (FieldGrid, Problem, build_problem, conductivity_summary, principal_axes, project,
                       static_run)
from .prior import TemporalModel
from .smc import DegenerateWeights, ParticleEnsemble, StepRecord, predictive, run_filter

logger = logging.getLogger("pneit")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# -- writers --------------------------------------------------------------------------

def write_field(path: Path, summary) -> None:
    pts = summary.grid.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "mean", "std"])
        for (x, y), m, s in zip(pts, summary.mean, summary.std):
            w.writerow([f"{x:.6f}", f"{y:.6f}", "nan" if np.isnan(m) else f"{m:.10g}",
                        "nan" if np.isnan(s) else f"{s:.10g}"])


def write_particles(path: Path, ens: ParticleEnsemble) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", "logw"] + [f"c{i + 1}" for i in range(ens.coeffs.shape[1])])
        for i, (lw, row) in enumerate(zip(ens.logw, ens.coeffs)):
            w.writerow([i, repr(float(lw))] + [repr(float(v)) for v in row])


def read_particles(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read particle table {path}: {err}") from None
    logw = arr[:, 1]
    return arr[:, 2:], np.exp(logw - logw.max())


def write_records(path: Path, records: list[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "step", "temperature", "ess", "acceptance", "beta", "resampled"])
        for r in records:
            w.writerow([r.frame, r.step, f"{r.temperature:.6g}", f"{r.ess:.6g}",
                        "" if np.isnan(r.acceptance) else f"{r.acceptance:.6g}", f"{r.beta:.6g}",
                        int(r.resampled)])


def write_pca(path: Path, ref_coeffs, ref_w, runs: dict, truth: np.ndarray | None = None) -> None:
    """Projections of particle clouds on the two leading reference principal axes."""
    center, axes, _ = principal_axes(ref_coeffs, ref_w)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "particle", "weight", "pc1", "pc2"])
        clouds = {"reference": (ref_coeffs, ref_w), **runs}
        for name, (coeffs, wts) in clouds.items():
            wts = np.ones(len(coeffs)) if wts is None else np.asarray(wts)
            wts = wts / wts.sum()
            for i, (p, wi) in enumerate(zip(project(coeffs, center, axes), wts)):
                w.writerow([name, i, f"{wi:.6g}", f"{p[0]:.10g}", f"{p[1]:.10g}"])
        if truth is not None:
            p = project(truth, center, axes)[0]
            w.writerow(["truth", 0, "1", f"{p[0]:.10g}", f"{p[1]:.10g}"])


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands -------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path, truth: SyntheticTruth) -> Path:
    pb = build_problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    if truth.n_frames != cfg.frames:
        truth = replace(truth, n_frames=cfg.frames)
    ds = simulate_dataset(truth, pb.protocol, pb.electrodes, pb.dense_design, pb.kernel_u, rng,
                          current=cfg.current)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    truth.to_config(out.with_suffix(".truth.ini"))
    logger.info("wrote %d frames (%d measurements) to %s", ds.n_frames, ds.n_measurements, out)
    return out


def _problem_for(cfg: RunConfig, dataset, dense: bool) -> Problem:
    cfg = cfg.update(n_electrodes=dataset.protocol.m, sigma=dataset.protocol.sigma, current=dataset.current)
    pb = build_problem(cfg)
    pb.protocol = dataset.protocol
    return pb.with_design(pb.dense_design) if dense else pb


def cmd_static(cfg: RunConfig, data: Path, frame: int, out: Path, dense: bool = False,
               reference: Path | None = None) -> dict:
    ds = read_dataset(data)
    if not 1 <= frame <= ds.n_frames:
        raise ConfigError(f"frame {frame} outside 1..{ds.n_frames}")
    pb = _problem_for(cfg, ds, dense)
    rng = np.random.default_rng(cfg.seed)
    res = static_run(pb, ds.y[frame - 1], rng, frame=frame)
    out.mkdir(parents=True, exist_ok=True)
    ens = res.ensemble
    summ = conductivity_summary(pb.basis, ens.coeffs, ens.weights, FieldGrid(cfg.grid))
    write_field(out / "field.csv", summ)
    write_particles(out / "particles.csv", ens)
    write_records(out / "diagnostics.csv", res.records)
    if reference is not None:
        ref_c, ref_w = read_particles(reference)
        write_pca(out / "pca.csv", ref_c, ref_w, {"run": (ens.coeffs, ens.weights)})
    info = {
        "command": "static", "frame": frame, "pn": pb.config.pn, "design_total": pb.design.total,
        "dense": dense, "particles": ens.N, "seconds": res.seconds, "evaluations": res.n_evals,
        "integrated_std": summ.integrated_std(), "log_evidence": ens.log_evidence,
        "seed": cfg.seed,
    }
    _dump_json(out / "summary.json", info)
    return info


def cmd_filter(cfg: RunConfig, data: Path, out: Path, lambdas: list[float]) -> dict:
    ds = read_dataset(data)
    pb = _problem_for(cfg, ds, False)
    grid = FieldGrid(cfg.grid)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(lambdas))
    results = {}
    for lam, ss in zip(lambdas, seeds):
        rng = np.random.default_rng(ss)
        sub = out / f"lambda_{lam:g}"
        sub.mkdir(parents=True, exist_ok=True)
        model = TemporalModel(lam, cfg.tau, tuple(float(t) for t in ds.times))
        records: list[StepRecord] = []
        frame_stats: list[tuple] = []

        def keep(ens, recs):
            records.extend(recs)
            summ = conductivity_summary(pb.basis, ens.coeffs, ens.weights, grid)
            write_field(sub / f"frame_{ens.index:03d}.csv", summ)
            frame_stats.append((ens.index, ens.t, summ.integrated_std(), ens.ess(), ens.log_evidence))

        t0 = time.perf_counter()
        history = run_filter(range(ds.n_frames), ds.times, lambda k: pb.likelihood(ds.y[k]), model,
                             cfg.n_modes, cfg.particles, pb.ladder(), pb.pcn(), rng, keep)
        seconds = time.perf_counter() - t0
        last = history[-1]
        write_particles(sub / "particles_final.csv", last)
        write_records(sub / "diagnostics.csv", records)
        step = float(np.diff(ds.times).mean()) if ds.n_frames > 1 else 1.0 / cfg.frames
        pred = predictive(last, step, model, rng)
        write_particles(sub / "predictive.csv", pred)
        write_field(sub / "predictive_field.csv", conductivity_summary(pb.basis, pred.coeffs, pred.weights, grid))
        with open(sub / "frames.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "time", "integrated_std", "ess", "log_evidence"])
            for row in frame_stats:
                w.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])
        info = {"command": "filter", "lambda": lam, "pn": pb.config.pn, "design_total": pb.design.total,
                "particles": cfg.particles, "frames": ds.n_frames, "seconds": seconds,
                "final_integrated_std": frame_stats[-1][2], "log_evidence": last.log_evidence,
                "seed": cfg.seed}
        _dump_json(sub / "summary.json", info)
        results[lam] = info
    return results


def cmd_diagnostics(runs: list[Path], out: Path) -> dict:
    """Tabulate static/filter run summaries; PCA against the dense reference if present."""
    infos = []
    for r in runs:
        p = r / "summary.json"
        if not p.exists():
            raise ConfigError(f"no run summary at {p}")
        with open(p) as fh:
            info = json.load(fh)
        info["path"] = str(r)
        infos.append(info)
    out.mkdir(parents=True, exist_ok=True)
    std_key = lambda i: i.get("integrated_std", i.get("final_integrated_std"))
    with open(out / "integrated_std.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design_total", "pn", "integrated_std", "run"])
        for i in sorted(infos, key=lambda i: (i["design_total"], i["pn"])):
            w.writerow([i["design_total"], int(i["pn"]), f"{std_key(i):.10g}", i["path"]])
    refs = [i for i in infos if i.get("dense")]
    summary = {"runs": len(infos)}
    if refs:
        ref = refs[0]
        with open(out / "runtime.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["design_total", "pn", "relative_runtime", "run"])
            for i in infos:
                per = i["seconds"] / max(i.get("evaluations", 1), 1)
                ref_per = ref["seconds"] / max(ref.get("evaluations", 1), 1)
                w.writerow([i["design_total"], int(i["pn"]), f"{per / ref_per:.6g}", i["path"]])
        ref_c, ref_w = read_particles(Path(ref["path"]) / "particles.csv")
        clouds = {}
        for i in infos:
            if i is ref:
                continue
            name = "particles.csv" if i["command"] == "static" else "particles_final.csv"
            clouds[Path(i["path"]).name] = read_particles(Path(i["path"]) / name)
        write_pca(out / "pca.csv", ref_c, ref_w, clouds)
        summary["reference"] = ref["path"]
    _dump_json(out / "summary.json", summary)
    return summary


# -- argument handling ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with a [run] section")
    p.add_argument("--seed", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--design-level", type=int, choices=(0, 1, 2))
    p.add_argument("--pn", dest="pn", action="store_true", default=None)
    p.add_argument("--no-pn", dest="pn", action="store_false")
    p.add_argument("--sigma", type=float)
    p.add_argument("--tempering-steps", type=int)
    p.add_argument("--moves", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pneit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic rotating-blob dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="dataset CSV to write")
    p.add_argument("--truth", type=Path, help="INI file with a [truth] section")
    p.add_argument("--frames", type=int)

    p = sub.add_parser("static", help="tempered SMC on one frame from the static prior")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--frame", type=int, default=14)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dense", action="store_true", help="use the dense reference design")
    p.add_argument("--reference", type=Path, help="particle table of a reference run for PCA")

    p = sub.add_parser("filter", help="particle filter over all frames")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+")

    p = sub.add_parser("diagnostics", help="tables over finished runs")
    p.add_argument("runs", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.update(seed=args.seed, particles=args.particles, design_level=args.design_level, pn=args.pn,
                      sigma=args.sigma, tempering_steps=args.tempering_steps, moves=args.moves,
                      threads=args.threads, frames=getattr(args, "frames", None))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "diagnostics":
            cmd_diagnostics(args.runs, args.out)
            return 0
        cfg = config_from_args(args)
        if args.command == "simulate":
            truth = SyntheticTruth.from_config(args.truth) if args.truth else SyntheticTruth(n_frames=cfg.frames)
            cmd_simulate(cfg, args.out, truth)
        elif args.command == "static":
            info = cmd_static(cfg, args.data, args.frame, args.out, args.dense, args.reference)
            print(f"integrated std {info['integrated_std']:.6g} ({info['evaluations']} solves, "
                  f"{info['seconds']:.1f} s)")
        elif args.command == "filter":
            lambdas = args.lambdas if args.lambdas else [cfg.lam]
            if any(lam <= 0 for lam in lambdas):
                raise ConfigError("lambda must be positive")
            for lam, info in cmd_filter(cfg, args.data, args.out, lambdas).items():
                print(f"lambda {lam:g}: final integrated std {info['final_integrated_std']:.6g} "
                      f"({info['seconds']:.1f} s)")
    except (NumericalError, DegenerateWeights, np.linalg.LinAlgError) as err:
        print(f"pneit: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError) as err:
        print(f"pneit: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
