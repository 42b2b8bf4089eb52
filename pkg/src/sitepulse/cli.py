"""Command-line front end: design, profile, image, ramsey, bench, calibrate.

Global flags: --seed, --jobs, --out (env overrides SITEPULSE_SEED,
SITEPULSE_JOBS, SITEPULSE_OUT; precedence flag > env > config > default).
Exit codes: 0 success, 2 usage/config error, 3 runtime failure.
Every output directory gets a manifest.json recording the resolved
parameters needed to reproduce the run.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, configio, design, experiments, lattice, plotsvg
from .configio import ConfigError
from .su2 import load_pulse_csv, save_pulse_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ENV_PREFIX = "SITEPULSE_"

GATE_FILES = {"+x/2": "cg_px", "-x/2": "cg_mx", "+y/2": "cg_py", "-y/2": "cg_my",
              "i": "pg_i", "x": "pg_x", "y": "pg_y", "z": "pg_z"}


def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"bad grid spec {spec!r}, expected lo:hi:n") from None


def _parse_floats(spec: str) -> list[float]:
    try:
        return [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"bad number list {spec!r}") from None


def _load_pulse(spec: str):
    """A pulse argument is a CSV path or 'gaussian:<sigma_s>:<area_rad>'."""
    if spec.startswith("gaussian:"):
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise ConfigError(f"bad pulse spec {spec!r}, expected gaussian:sigma_s:area_rad")
        sigma = float(parts[1])
        area = float(parts[2])
        dt = float(parts[3]) if len(parts) == 4 else sigma / 12.0
        return design.gaussian_pulse(sigma, area, truncation_sigmas=3.5, segment_dt=dt)
    if not Path(spec).exists():
        raise ConfigError(f"pulse file {spec!r} not found")
    return load_pulse_csv(spec)


def _resolve(flag_value, env_key: str, config_value, default, convert):
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + env_key)
    if env is not None:
        try:
            return convert(env)
        except ValueError:
            raise ConfigError(f"bad {ENV_PREFIX}{env_key} value {env!r}") from None
    if config_value is not None:
        return config_value
    return default


def _prepare_out(args, command: str, config_paths: list[str], resolved: dict) -> Path:
    out = Path(_resolve(args.out, "OUT", None, f"out-{command}", str))
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_paths": [str(Path(p).resolve()) for p in config_paths],
        "master_seed": resolved.get("seed"),
        "out_dir": str(out.resolve()),
        "parameters": resolved,
    }
    configio.write_json(out / "manifest.json", manifest)
    return out


def _seed_of(args, *config_paths) -> int:
    config_seed = None
    for p in config_paths:
        config_seed = configio.config_seed(p)
        if config_seed is not None:
            break
    return int(_resolve(args.seed, "SEED", config_seed, 0, int))


def _jobs_of(args) -> int:
    return int(_resolve(args.jobs, "JOBS", None, 1, int))


# ---------------------------------------------------------------------------
# subcommands


def cmd_design(args) -> int:
    specs, profile = configio.load_design_config(args.config)
    seed = _seed_of(args, args.config)
    specs = [design.DesignSpec(**{**_spec_kwargs(s), "rng_seed": seed}) for s in specs]
    resolved = {"seed": seed, "config": str(args.config),
                "rabi_grid_hz": [s.rabi_hz for s in specs]}
    out = _prepare_out(args, "design", [args.config], resolved)

    results = [design.optimize_phases(s, profile) for s in specs]
    best_i = int(np.argmin([r.cost for r in results]))
    best, spec = results[best_i], specs[best_i]
    if not best.converged:
        print("warning: optimizer did not reach the gradient tolerance; "
              "result marked converged=false", file=sys.stderr)

    save_pulse_csv(best.train, out / "pulse.csv")
    lo = min(b.lo_hz for b in profile.bands)
    hi = max(b.hi_hz for b in profile.bands)
    pad = 0.2 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, 601)
    curve = design.response_profile(best.train, grid, profile=profile)
    configio.write_response_csv(out / "response.csv", curve)
    plotsvg.line_plot(out / "response.svg", grid, [curve.p_flip],
                      labels=["P_flip"], title="frequency response",
                      xlabel="detuning (Hz)", ylabel="flip probability")
    configio.write_json(out / "design.json", {
        "cost": best.cost,
        "metric": spec.metric,
        "converged": best.converged,
        "restarts_used": best.restarts_used,
        "rabi_hz": spec.rabi_hz,
        "n_segments": spec.n_segments,
        "segment_duration_s": spec.segment_duration,
        "phases_rad": list(best.train.phases),
        "per_band_cost": list(best.per_band_cost),
        "rabi_grid_cost": {str(s.rabi_hz): r.cost for s, r in zip(specs, results)},
    })
    return EXIT_OK


def _spec_kwargs(s: design.DesignSpec) -> dict:
    return {f: getattr(s, f) for f in (
        "n_segments", "segment_duration", "rabi_hz", "samples_per_band", "n_restarts",
        "rng_seed", "max_iterations", "convergence_tol", "metric", "rabi_cap_hz",
        "target_cost")}


def cmd_profile(args) -> int:
    train = _load_pulse(args.pulse)
    profile = None
    if args.config:
        _, profile = configio.load_design_config(args.config)
    grid = _parse_grid(args.grid)
    resolved = {"seed": 0, "pulse": args.pulse, "grid": args.grid}
    out = _prepare_out(args, "profile", [args.config] if args.config else [], resolved)
    curve = design.response_profile(train, grid, profile=profile)
    configio.write_response_csv(out / "response.csv", curve)
    series = [curve.p_flip]
    labels = ["P_flip"]
    if curve.fidelity is not None:
        series.append(curve.fidelity)
        labels.append("fidelity")
    plotsvg.line_plot(out / "response.svg", grid, series, labels=labels,
                      title="frequency response", xlabel="detuning (Hz)",
                      ylabel="probability")
    return EXIT_OK


def cmd_image(args) -> int:
    scene = configio.load_scene_config(args.scene)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    prep = _load_pulse(args.prep)
    image = _load_pulse(args.image)
    grid = _parse_grid(args.grid)
    seed = _seed_of(args, args.scene)
    resolved = {"seed": seed, "scene": str(args.scene), "prep": args.prep,
                "image": args.image, "grid": args.grid, "runs": args.runs,
                "atoms": args.atoms, "peaks": args.peaks,
                "readout_error": args.readout_error}
    out = _prepare_out(args, "image", [args.scene], resolved)
    curve = lattice.resonance_image(prep, image, grid, args.runs, scene, seed,
                                    n_atoms=args.atoms, readout_error=args.readout_error,
                                    jobs=_jobs_of(args))
    configio.write_image_csv(out / "image.csv", curve)
    plotsvg.line_plot(out / "image.svg", grid, [curve.mean_counts],
                      labels=["counts/run"], title="resonance image",
                      xlabel="translation (nm)", ylabel="mean counts")
    fit = lattice.fit_gaussians(curve, args.peaks)
    configio.write_json(out / "fit.json", configio.gaussian_fit_payload(fit))
    return EXIT_OK


def cmd_ramsey(args) -> int:
    pulse = _load_pulse(args.pulse)
    second = _load_pulse(args.second_pulse) if args.second_pulse else None
    centers = _parse_floats(args.bands)
    phases = np.linspace(0.0, 360.0, args.steps, endpoint=False)
    seed = _seed_of(args)
    resolved = {"seed": seed, "pulse": args.pulse, "second_pulse": args.second_pulse,
                "band_centers_hz": centers, "steps": args.steps}
    out = _prepare_out(args, "ramsey", [], resolved)
    curves = experiments.ramsey_scan(pulse, phases, centers, second_pulse=second,
                                     seed=seed)
    configio.write_fringe_csv(out / "fringes.csv", curves)
    fits = [experiments.fringe_fit(c) for c in curves]
    summary = []
    for center, fit in zip(centers, fits):
        contrast = ((fit.s_max - fit.s_min) / (fit.s_max + fit.s_min)
                    if fit.s_max + fit.s_min > 0 else 0.0)
        entry = {
            "band_center_hz": center,
            "phase_offset_deg": fit.phase_offset_deg if fit.phase_defined else None,
            "contrast": contrast,
            "s_min": fit.s_min,
            "s_max": fit.s_max,
        }
        if fit.phase_defined and fit.s_max > 0:
            entry["fringe_fidelity"] = experiments.fringe_fidelity(
                max(fit.s_min, 0.0), fit.s_max)
        summary.append(entry)
    shifts = {}
    defined = [e for e in summary if e["phase_offset_deg"] is not None]
    if len(defined) > 1:
        ref = defined[0]["phase_offset_deg"]
        for e in defined[1:]:
            shift = (e["phase_offset_deg"] - ref + 180.0) % 360.0 - 180.0
            shifts[f"{e['band_center_hz']:g}"] = shift
    configio.write_json(out / "ramsey.json",
                        {"bands": summary, "relative_shift_deg": shifts})
    plotsvg.line_plot(out / "fringes.svg", phases, [c.p_down for c in curves],
                      labels=[f"{c:g} Hz" for c in centers], title="Ramsey fringes",
                      xlabel="relative phase (deg)", ylabel="P(down)")
    return EXIT_OK


def _load_library(args) -> experiments.GateLibrary:
    if args.library == "resonant":
        return experiments.GateLibrary.resonant()
    libdir = Path(args.library)
    if not libdir.is_dir():
        raise ConfigError(f"library directory {args.library!r} not found")
    trains = {}
    for label, stem in GATE_FILES.items():
        path = libdir / f"{stem}.csv"
        if not path.exists():
            raise ConfigError(f"library is missing {path.name}")
        trains[label] = load_pulse_csv(path)
    centers = _parse_floats(args.bands) if args.bands else [0.0]
    return experiments.GateLibrary(trains=trains, band_centers_hz=tuple(centers),
                                   target_band=args.target_band)


def cmd_bench(args) -> int:
    library = _load_library(args)
    lengths = [int(v) for v in _parse_floats(args.lengths)]
    seed = _seed_of(args)
    resolved = {"seed": seed, "library": args.library, "lengths": lengths,
                "trials": args.trials, "error_model": args.error_model,
                "error_param": args.error_param, "atoms": args.atoms,
                "kappa": args.kappa,
                "bands": args.bands, "target_band": args.target_band}
    out = _prepare_out(args, "bench", [], resolved)
    result = experiments.run_benchmarking(
        library, args.error_model, args.error_param, lengths, args.trials,
        seed=seed, rescale_kappa=args.kappa, n_atoms=args.atoms)
    payload = {
        "lengths": list(result.lengths),
        "mean_fidelity": list(result.mean_fidelity),
        "eps0": result.central_fit.eps0,
        "eps": result.central_fit.eps,
        "f_cg": result.f_cg,
        "converged": result.central_fit.converged,
        "covariance": result.central_fit.covariance,
        "side_bands": [
            {"eps": f.eps, "eps0": f.eps0, "f_identity": 1.0 - f.eps,
             "converged": f.converged}
            for f in result.side_fits
        ],
    }
    configio.write_json(out / "rb.json", payload)
    with open(out / "rb_raw.csv", "w") as fh:
        fh.write("length,trial,fidelity\n")
        for il, l in enumerate(result.lengths):
            for t in range(result.per_sequence.shape[1]):
                fh.write(f"{l},{t},{result.per_sequence[il, t]!r}\n")
    series = [result.mean_fidelity] + [s for s in result.side_survival]
    labels = ["target band"] + [f"side {k}" for k in range(result.side_survival.shape[0])]
    plotsvg.line_plot(out / "rb.svg", result.lengths, series, labels=labels,
                      title="randomized benchmarking", xlabel="sequence length l",
                      ylabel="fidelity")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scene = configio.load_scene_config(args.scene)
    seed = _seed_of(args, args.scene)
    prep = _load_pulse(args.prep)
    image = _load_pulse(args.image)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    jobs = _jobs_of(args)
    if args.mode == "eom":
        volts = _parse_grid(args.volts)
        disp = (_parse_floats(args.displacements) if args.displacements else
                [k * scene.trap_period_nm / 2 for k in (-2, -1, 0, 1, 2)])
        resolved = {"seed": seed, "scene": str(args.scene), "mode": "eom",
                    "volts": args.volts, "displacements_nm": disp, "runs": args.runs,
                    "volts_per_period_true": args.volts_per_period}
        out = _prepare_out(args, "calibrate-eom", [args.scene], resolved)
        cal = lattice.calibrate_eom(volts, disp, prep, image, scene, args.runs, seed,
                                    volts_per_period_true=args.volts_per_period,
                                    n_atoms=args.atoms, jobs=jobs)
        configio.write_json(out / "calibration.json", {
            "volts_per_trap_period": cal.volts_per_period,
            "displacements_nm": cal.displacements_nm,
            "center_volts": cal.center_volts,
        })
        for i, curve in enumerate(cal.curves):
            configio.write_image_csv(out / f"curve_{i}.csv", curve)
        plotsvg.line_plot(out / "calibration.svg", cal.displacements_nm,
                          [cal.center_volts], labels=["center volts"],
                          title="EOM calibration", xlabel="displacement (nm)",
                          ylabel="image center (V)")
    else:
        shifts = _parse_floats(args.shifts)
        grid = _parse_grid(args.grid)
        resolved = {"seed": seed, "scene": str(args.scene), "mode": "zeeman",
                    "shifts_hz": shifts, "grid": args.grid, "runs": args.runs}
        out = _prepare_out(args, "calibrate-zeeman", [args.scene], resolved)
        scan = lattice.zeeman_gradient_scan(shifts, prep, image, scene, grid,
                                            args.runs, seed, n_atoms=args.atoms,
                                            jobs=jobs)
        configio.write_json(out / "calibration.json", {
            "gradient_hz_per_um": scan.gradient_hz_per_um,
            "zeeman_shifts_hz": scan.zeeman_shifts_hz,
            "separations_nm": scan.separations_nm,
        })
        for i, curve in enumerate(scan.curves):
            configio.write_image_csv(out / f"curve_{i}.csv", curve)
        plotsvg.line_plot(out / "calibration.svg", scan.zeeman_shifts_hz,
                          [scan.separations_nm], labels=["separation"],
                          title="Zeeman gradient scan", xlabel="Zeeman shift (Hz)",
                          ylabel="peak separation (nm)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sitepulse",
        description="Composite-pulse design and virtual lattice-addressing experiments")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master RNG seed")
    common.add_argument("--jobs", type=int, default=None, help="worker parallelism cap")
    common.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", parents=[common], help="optimize a composite pulse")
    p.add_argument("--config", required=True, help="design config file")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("profile", parents=[common], help="evaluate a pulse response")
    p.add_argument("--pulse", required=True, help="pulse CSV or gaussian:sigma:area")
    p.add_argument("--grid", required=True, help="detuning grid lo:hi:n (Hz)")
    p.add_argument("--config", default=None, help="design config for fidelity overlay")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("image", parents=[common], help="simulate a resonance image")
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--prep", default="gaussian:0.0005:3.141592653589793")
    p.add_argument("--image", default="gaussian:0.0005:3.141592653589793")
    p.add_argument("--grid", default="-280:280:41", help="translation grid lo:hi:n (nm)")
    p.add_argument("--runs", type=int, default=120, help="runs per grid point")
    p.add_argument("--atoms", type=int, default=200)
    p.add_argument("--peaks", type=int, default=1, help="Gaussians to fit")
    p.add_argument("--readout-error", type=float, default=0.01)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("ramsey", parents=[common], help="two-pulse interference scan")
    p.add_argument("--pulse", required=True)
    p.add_argument("--second-pulse", default=None)
    p.add_argument("--bands", required=True, help="comma list of band centers (Hz)")
    p.add_argument("--steps", type=int, default=24)
    p.set_defaults(func=cmd_ramsey)

    p = sub.add_parser("bench", parents=[common], help="randomized benchmarking")
    p.add_argument("--library", default="resonant",
                   help="'resonant' or a directory of gate CSVs")
    p.add_argument("--bands", default=None, help="band centers (Hz) for the library")
    p.add_argument("--target-band", type=int, default=0)
    p.add_argument("--lengths", default="1,2,4,8,16")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--error-model", default="none",
                   choices=["none", "detuning", "depolarizing", "rabi_miscal"])
    p.add_argument("--error-param", type=float, default=0.0)
    p.add_argument("--atoms", type=int, default=None)
    p.add_argument("--kappa", type=float, default=4.0, help="rescale factor")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", parents=[common], help="EOM or Zeeman calibration")
    p.add_argument("mode", choices=["eom", "zeeman"])
    p.add_argument("--scene", required=True)
    p.add_argument("--prep", default="gaussian:0.0005:3.141592653589793")
    p.add_argument("--image", default="gaussian:0.0005:3.141592653589793")
    p.add_argument("--runs", type=int, default=60)
    p.add_argument("--atoms", type=int, default=200)
    p.add_argument("--volts", default="-250:250:51", help="EOM voltage grid lo:hi:n")
    p.add_argument("--displacements", default=None, help="comma list (nm)")
    p.add_argument("--volts-per-period", type=float, default=164.0)
    p.add_argument("--shifts", default="500,1000,2000,3000,4000",
                   help="Zeeman shifts (Hz)")
    p.add_argument("--grid", default="-1100:1100:67", help="translation grid (nm)")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except lattice.CapacityError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except lattice.FitError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
