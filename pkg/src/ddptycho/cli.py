"""Command-line interface: ``simulate``, ``reconstruct``, ``blind`` and ``evaluate``.

A dataset directory holds ``meta.json``, ``frames.ptya``, ``probe.ptya``
and, for synthetic data, ``sample.ptya``.  A run directory holds
``image.ptya``, ``sub_<d>.ptya``, ``convergence.csv`` and ``summary.json``
(plus ``probe.ptya`` for blind runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io
from .blind import BlindConfig, BlindSolver
from .errors import (ConfigError, DimensionError, DivergenceError, FormatError, MetricError,
                     PlanError)
from .forward import ScanGeometry
from .metrics import snr_db, speedup_report
from .nonblind import NonblindConfig, NonblindSolver
from .plan import plan_stripes
from .sim import (NoiseSpec, ZonePlateParams, add_poisson_noise, border_mask, calibrate_noise_scale,
                  make_sample, make_test_images, make_zone_plate_probe, resample_bilinear,
                  simulate_frames)

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_PLAN = 5
EXIT_DIVERGED = 6
EXIT_METRIC = 7

# preset name -> (r, tol_re, max_iters)
PRESETS = {
    "noiseless": (4.0e3, None, 1000),
    "noisy-mild": (90.0, 1e-3, 200),
    "noisy-strong": (150.0, 1e-3, 200),
}


# --- dataset loading ------------------------------------------------------------

def load_dataset(path) -> dict:
    """Read and cross-check a dataset directory before any solve."""
    path = Path(path)
    meta = io.read_meta(path / "meta.json")
    if meta.get("kind") != "dataset":
        raise FormatError(f"{path}: not a dataset directory")
    try:
        geometry = ScanGeometry.from_dict(meta["geometry"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad geometry record ({exc})") from exc
    m = geometry.frame_side
    frames = io.read_array(path / "frames.ptya", (geometry.n_frames, m, m), complex_=False)
    probe = io.read_array(path / "probe.ptya", (m, m), complex_=True)
    sample = None
    if (path / "sample.ptya").exists():
        sample = io.read_array(path / "sample.ptya", geometry.image_shape, complex_=True)
    vacuum = border_mask(geometry.image_shape, int(meta.get("vacuum_margin", 0)))
    return {"meta": meta, "geometry": geometry, "frames": frames, "probe": probe,
            "sample": sample, "vacuum": vacuum, "path": path}


# --- commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    shape = (args.size, args.size)
    geometry = ScanGeometry.raster(shape, args.probe_side, args.step)
    if args.magnitude is not None or args.phase is not None:
        if args.magnitude is None or args.phase is None:
            raise ConfigError("--magnitude and --phase must be given together")
        mag = io.read_image(args.magnitude)
        phase = io.read_image(args.phase) * np.pi
        if mag.shape != shape:
            mag = resample_bilinear(mag, shape)
        if phase.shape != shape:
            phase = resample_bilinear(phase, shape)
        source = {"magnitude": str(args.magnitude), "phase": str(args.phase)}
    else:
        base = args.base_size or args.size
        mag, phase = make_test_images((base, base), args.seed)
        if base != args.size:
            mag, phase = resample_bilinear(mag, shape), resample_bilinear(phase, shape)
        source = {"generator": "procedural", "seed": args.seed, "base_size": base}
    vacuum = border_mask(shape, args.margin)
    sample = make_sample(mag, phase, vacuum)
    params = ZonePlateParams(defocus=args.defocus, flux=args.flux)
    probe = make_zone_plate_probe(args.probe_side, params)
    frames = simulate_frames(probe, sample, geometry)
    noise = None
    if args.noise_snr_db is not None:
        scale = calibrate_noise_scale(frames, args.noise_snr_db, seed=args.seed)
        frames, achieved = add_poisson_noise(frames, NoiseSpec(scale, args.seed))
        noise = {"scale": scale, "seed": args.seed, "target_snr_db": args.noise_snr_db,
                 "achieved_snr_db": achieved}
    out = Path(args.out)
    io.write_array(out / "frames.ptya", frames)
    io.write_array(out / "probe.ptya", probe)
    io.write_array(out / "sample.ptya", sample)
    io.write_meta(out / "meta.json", {
        "kind": "dataset",
        "geometry": geometry.to_dict(),
        "probe": dataclasses.asdict(params) | {"side": args.probe_side},
        "vacuum_margin": args.margin,
        "noise": noise,
        "source": source,
        "provenance": {"package": "ddptycho", "version": __version__},
    })
    print(f"{out}: {geometry.n_frames} frames ({geometry.grid_shape[0]}x{geometry.grid_shape[1]})"
          + ("" if noise is None else f", intensity SNR {noise['achieved_snr_db']:.2f} dB"))
    return EXIT_OK


def _solver_args(args):
    r, tol_re, max_iters = PRESETS[args.preset]
    return (args.r if args.r is not None else r,
            args.tol_re if args.tol_re is not None else tol_re,
            args.max_iters if args.max_iters is not None else max_iters)


def _write_run(out: Path, result, plan, data, config, kind, started, png: bool, probe=None):
    for d, u in enumerate(result.sub_solutions):
        io.write_array(out / f"sub_{d}.ptya", u)
    io.write_array(out / "image.ptya", result.image)
    if probe is not None:
        io.write_array(out / "probe.ptya", probe)
    lagr = any(rec.lagrangian is not None for rec in result.records)
    io.write_csv(out / "convergence.csv", result.records, plan.D, lagrangian=lagr)
    last = result.records[-1]
    renders = render_fields(out, result.image) if png else []
    cfg = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
           for k, v in dataclasses.asdict(config).items()}
    summary = {
        "kind": kind,
        "dataset": str(data["path"].resolve()),
        "config": cfg,
        "plan": plan.to_dict(),
        "iterations": result.iterations,
        "converged": result.converged,
        "final_rf": last.rf,
        "final_re": last.re,
        "t_virtual_s": float(sum(rec.t_virtual for rec in result.records)),
        "t_actual_s": float(sum(rec.t_actual for rec in result.records)),
        "t_wall_s": time.perf_counter() - started,
        "renders": renders,
    }
    if data["sample"] is not None:
        snr = snr_db(result.image, data["sample"])
        summary["snr_db"] = snr if math.isfinite(snr) else "inf"
    io.write_meta(out / "summary.json", summary)
    print(f"{out}: {result.iterations} iterations, RF {last.rf:.3e}, RE {last.re:.3e}"
          + ("" if result.converged else " (not converged)"))


def cmd_reconstruct(args) -> int:
    started = time.perf_counter()
    data = load_dataset(args.dataset)
    r, tol_re, max_iters = _solver_args(args)
    config = NonblindConfig(epsilon=args.epsilon, eta=args.eta, r=r, max_iters=max_iters,
                            tol_rf=args.tol_rf, tol_re=tol_re,
                            record_lagrangian=args.record_lagrangian, threads=args.threads)
    plan = plan_stripes(data["geometry"], args.subdomains)
    solver = NonblindSolver(plan, data["probe"], data["frames"], config, vacuum=data["vacuum"])
    result = solver.run(callback=_progress(args))
    _write_run(Path(args.out), result, plan, data, config, "nonblind", started, args.png)
    return EXIT_OK


def cmd_blind(args) -> int:
    started = time.perf_counter()
    data = load_dataset(args.dataset)
    r, tol_re, max_iters = _solver_args(args)
    if args.preset == "noiseless" and args.r is None:
        r = 5.0e3
    config = BlindConfig(epsilon=args.epsilon, eta=args.eta, r=r, mu=args.mu, gamma=args.gamma,
                         support_radius=args.support_radius, max_iters=max_iters,
                         tol_rf=args.tol_rf, tol_re=tol_re, threads=args.threads)
    plan = plan_stripes(data["geometry"], args.subdomains)
    solver = BlindSolver(plan, data["frames"], config, vacuum=data["vacuum"])
    result = solver.run(callback=_progress(args))
    _write_run(Path(args.out), result, plan, data, config, "blind", started, args.png,
               probe=result.probe)
    return EXIT_OK


def render_fields(out: Path, image: np.ndarray) -> list[dict]:
    """Magnitude on [0, 1] and phase on [0, pi] as 8-bit PNGs."""
    phase = np.mod(np.angle(image), 2 * np.pi)
    return [
        io.render_png(out / "magnitude.png", np.abs(image), 0.0, 1.0),
        io.render_png(out / "phase.png", phase, 0.0, math.pi),
    ]


def cmd_evaluate(args) -> int:
    timings = {}
    for run in args.runs:
        run = Path(run)
        summary = io.read_meta(run / "summary.json")
        image = io.read_array(run / "image.ptya")
        truth = None
        if args.truth is not None:
            truth = io.read_array(args.truth)
        else:
            ds = Path(args.dataset or summary["dataset"])
            if (ds / "sample.ptya").exists():
                truth = io.read_array(ds / "sample.ptya")
        line = f"{run}: D={summary['plan']['D']} iterations={summary['iterations']} RF={summary['final_rf']:.3e}"
        if truth is None:
            line += " SNR omitted (no ground truth)"
        else:
            snr = snr_db(image, truth)
            line += f" SNR={snr:.2f} dB" if math.isfinite(snr) else " SNR=inf"
        print(line)
        if args.png:
            render_fields(run, image)
        cols = io.read_csv(run / "convergence.csv")
        D = summary["plan"]["D"]
        t = np.stack([cols[f"t_sub_{d}_ms"] for d in range(D)], axis=1) / 1e3
        timings[D] = t
    if args.speedup:
        print(speedup_report(timings).format())
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------

def _progress(args):
    if not args.verbose:
        return None

    def cb(rec, state):
        if rec.iteration % args.verbose == 0:
            print(f"iter {rec.iteration:5d}  rf {rec.rf:.3e}  re {rec.re:.3e}", file=sys.stderr)
    return cb


def _solver_flags(p):
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--subdomains", "-D", type=int, default=2)
    p.add_argument("--preset", choices=sorted(PRESETS), default="noiseless",
                   help="default r and stopping rule")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol-rf", type=float, default=1e-5)
    p.add_argument("--tol-re", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--png", action="store_true", help="also write magnitude/phase renders")
    p.add_argument("--verbose", "-v", type=int, default=0, metavar="N",
                   help="print progress every N iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddptycho", description="Domain-decomposition ptychographic reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--base-size", type=int, default=None,
                   help="generate test images at this size and resample bilinearly to --size")
    p.add_argument("--probe-side", type=int, default=64)
    p.add_argument("--step", type=int, default=8)
    p.add_argument("--margin", type=int, default=16, help="vacuum border width in pixels")
    p.add_argument("--defocus", type=float, default=ZonePlateParams.defocus)
    p.add_argument("--flux", type=float, default=ZonePlateParams.flux)
    p.add_argument("--noise-snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--magnitude", default=None, help="external magnitude image")
    p.add_argument("--phase", default=None, help="external phase image (gray levels map to [0, pi])")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="nonblind reconstruction with a known probe")
    _solver_flags(p)
    p.add_argument("--record-lagrangian", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("blind", help="joint probe and image reconstruction")
    _solver_flags(p)
    p.add_argument("--mu", type=float, default=2.0e2)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--support-radius", type=float, default=None,
                   help="Fourier support radius of the probe in pixels")
    p.set_defaults(func=cmd_blind)

    p = sub.add_parser("evaluate", help="SNR, speedup report and renders for run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--dataset", default=None, help="override the dataset recorded in each run")
    p.add_argument("--truth", default=None, help="ground-truth PTYA file")
    p.add_argument("--speedup", action="store_true")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except PlanError as exc:
        print(f"infeasible decomposition: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except DivergenceError as exc:
        print(f"solver diverged at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MetricError as exc:
        print(f"metric error: {exc}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
