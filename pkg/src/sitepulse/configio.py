"""Config-file parsing and CSV/JSON artifact writers for the CLI."""
from __future__ import annotations

import configparser
import csv
import json
import math
from pathlib import Path

import numpy as np

from .design import (
    DONT_CARE,
    Band,
    DesignSpec,
    GateTarget,
    ResponseCurve,
    StateTarget,
    TargetProfile,
)
from .lattice import GaussianFit, ImageCurve, LatticeScene


class ConfigError(ValueError):
    """Malformed config file; the message carries file:line context."""


NAMED_GATES = {
    "identity": GateTarget.identity,
    "flip_x": GateTarget.flip_x,
    "half_x": GateTarget.half_x,
    "hadamard": GateTarget.hadamard,
}
NAMED_STATES = {"up": StateTarget.up, "down": StateTarget.down}


def _read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"{path}:{lineno}" if lineno else str(path)
        raise ConfigError(f"{where}: {exc.message}") from None
    return parser


def _line_of(path, key: str) -> int | None:
    try:
        for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if line.split("=")[0].strip() == key:
                return i
    except OSError:
        pass
    return None


def _get(parser, path, section, key, convert=str, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"{path}: missing required key {key!r} in [{section}]")
        return default
    raw = parser.get(section, key)
    try:
        return convert(raw)
    except (TypeError, ValueError):
        line = _line_of(path, key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: cannot parse {key} = {raw!r}") from None


def _parse_band(parser, path, section) -> Band:
    lo = _get(parser, path, section, "lo_hz", float, required=True)
    hi = _get(parser, path, section, "hi_hz", float, required=True)
    kind = _get(parser, path, section, "kind", str, default="gate").lower()
    if kind == "dontcare":
        goal = DONT_CARE
    elif kind == "gate":
        name = _get(parser, path, section, "gate", str)
        if name is not None:
            if name not in NAMED_GATES:
                line = _line_of(path, "gate")
                raise ConfigError(f"{path}:{line}: unknown gate {name!r} "
                                  f"(choices: {sorted(NAMED_GATES)})")
            goal = NAMED_GATES[name]()
        else:
            axis = _get(parser, path, section, "axis",
                        lambda s: tuple(float(v) for v in s.split(",")), required=True)
            angle = _get(parser, path, section, "angle_rad", float, required=True)
            norm = math.sqrt(sum(a * a for a in axis))
            if norm == 0:
                raise ConfigError(f"{path}: zero axis in [{section}]")
            goal = GateTarget(tuple(a / norm for a in axis), angle)
    elif kind == "state":
        name = _get(parser, path, section, "target", str, required=True).lower()
        if name not in NAMED_STATES:
            line = _line_of(path, "target")
            raise ConfigError(f"{path}:{line}: unknown state target {name!r} "
                              f"(choices: {sorted(NAMED_STATES)})")
        goal = NAMED_STATES[name]()
    else:
        raise ConfigError(f"{path}: unknown band kind {kind!r} in [{section}]")
    try:
        return Band(lo, hi, goal)
    except ValueError as exc:
        raise ConfigError(f"{path}: [{section}]: {exc}") from None


def load_design_config(path) -> tuple[list[DesignSpec], TargetProfile]:
    """Parse a design config: one [design] section plus [band.*] sections.

    ``rabi_hz`` may be a comma list; one DesignSpec per value is returned
    (the outer amplitude grid).
    """
    parser = _read_config(path)
    if not parser.has_section("design"):
        raise ConfigError(f"{path}: missing [design] section")
    band_sections = sorted(s for s in parser.sections() if s.startswith("band"))
    if not band_sections:
        raise ConfigError(f"{path}: no [band.*] sections")
    bands = tuple(_parse_band(parser, path, s) for s in band_sections)
    try:
        profile = TargetProfile(bands, description=_get(parser, path, "design",
                                                        "description", str, default=""))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    n = _get(parser, path, "design", "n_segments", int, required=True)
    total = _get(parser, path, "design", "total_duration_s", float)
    seg = _get(parser, path, "design", "segment_duration_s", float)
    if seg is None:
        if total is None:
            raise ConfigError(f"{path}: need segment_duration_s or total_duration_s")
        seg = total / n
    rabi_list = _get(parser, path, "design", "rabi_hz",
                     lambda s: [float(v) for v in s.split(",")], required=True)
    kwargs = dict(
        n_segments=n,
        segment_duration=seg,
        samples_per_band=_get(parser, path, "design", "samples_per_band", int, default=33),
        n_restarts=_get(parser, path, "design", "restarts", int, default=20),
        rng_seed=_get(parser, path, "design", "seed", int, default=0),
        max_iterations=_get(parser, path, "design", "max_iterations", int, default=2000),
        convergence_tol=_get(parser, path, "design", "convergence_tol", float, default=1e-8),
        metric=_get(parser, path, "design", "metric", str, default="phase_insensitive"),
        rabi_cap_hz=_get(parser, path, "design", "rabi_cap_hz", float, default=40_000.0),
    )
    tc = _get(parser, path, "design", "target_cost", float)
    if tc is not None:
        kwargs["target_cost"] = tc
    try:
        specs = [DesignSpec(rabi_hz=r, **kwargs) for r in rabi_list]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return specs, profile


def load_scene_config(path) -> LatticeScene:
    parser = _read_config(path)
    if not parser.has_section("scene"):
        raise ConfigError(f"{path}: missing [scene] section")
    fields = dict(
        trap_period_nm=float, addr_period_um=float, peak_shift_hz=float,
        addr_offset_nm=float, jitter_sigma_nm=float,
        cloud_diameter_addr_periods=float, carrier_hz=float,
    )
    kwargs = {}
    for name, conv in fields.items():
        value = _get(parser, path, "scene", name, conv)
        if value is not None:
            kwargs[name] = value
    try:
        return LatticeScene(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_seed(path) -> int | None:
    """Optional [run] seed = N entry in any config file."""
    parser = _read_config(path)
    if parser.has_option("run", "seed"):
        return _get(parser, path, "run", "seed", int)
    return None


# ---------------------------------------------------------------------------
# artifact writers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_response_csv(path, curve: ResponseCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta_hz", "p_flip", "fidelity"])
        fid = curve.fidelity if curve.fidelity is not None else np.full(
            curve.delta_hz.shape, np.nan)
        for d, p, f in zip(curve.delta_hz, curve.p_flip, fid):
            writer.writerow([repr(float(d)), repr(float(p)),
                             "" if math.isnan(f) else repr(float(f))])


def write_image_csv(path, curve: ImageCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["translation_nm", "eom_volts", "count_up", "n_runs"])
        volts = curve.eom_volts if curve.eom_volts is not None else np.full(
            curve.translation_nm.shape, np.nan)
        for t, v, c, n in zip(curve.translation_nm, volts, curve.count_up, curve.n_runs):
            writer.writerow([repr(float(t)), "" if math.isnan(v) else repr(float(v)),
                             int(c), int(n)])


def write_fringe_csv(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase_deg", "band_id", "p_down", "stderr"])
        for curve in curves:
            for p, y, e in zip(curve.phase_deg, curve.p_down, curve.stderr):
                writer.writerow([repr(float(p)), curve.band_id,
                                 repr(float(y)), repr(float(e))])


def gaussian_fit_payload(fit: GaussianFit) -> dict:
    return {
        "offset": fit.offset,
        "offset_err": fit.offset_err,
        "peaks": [
            {"center": p.center, "center_err": p.center_err,
             "sigma": p.sigma, "sigma_err": p.sigma_err,
             "area": p.area, "area_err": p.area_err}
            for p in fit.peaks
        ],
    }
