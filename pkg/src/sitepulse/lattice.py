"""Stochastic virtual experiment for resonance imaging in an optical lattice.

Atoms sit at integer multiples of the trap period; a long-period
sinusoidal addressing light shift maps position to detuning.  Each
experimental run draws a fresh uniform addressing-lattice offset, which
reproduces the tilt/drift sampling of the real apparatus.  Every
randomized operation takes an explicit seed and is bit-reproducible.

Lengths are nm unless a name says otherwise; detunings are Hz at this
level (converted to rad/s only when propagators are built).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks

from .su2 import SPIN_DOWN, SPIN_UP, TWO_PI, PulseTrain, train_propagators

DEFAULT_READOUT_ERROR = 0.01
SITE_OCCUPANCY = 0.01          # one atom per ~100 sites
MAX_SITE_MULTIPLICITY = 1000   # y-z plane degeneracy cap


class CapacityError(ValueError):
    """Requested more atoms than the cloud window can hold."""


class FitError(RuntimeError):
    """Raised when a curve does not support the requested fit."""


def derive_seed(master_seed: int, *indices: int) -> np.random.SeedSequence:
    """Independent child seed for a (run, repetition, ...) index tuple."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(i) for i in indices))


@dataclass(frozen=True)
class LatticeScene:
    """Trap + addressing lattice geometry and the position->detuning map."""

    trap_period_nm: float = 426.0
    addr_period_um: float = 28.0
    peak_shift_hz: float = 19390.0
    addr_offset_nm: float = 0.0
    jitter_sigma_nm: float = 15.0
    cloud_diameter_addr_periods: float = 35.0
    carrier_hz: float = 0.0

    def __post_init__(self):
        if self.trap_period_nm <= 0 or self.addr_period_um <= 0:
            raise ValueError("lattice periods must be positive")
        if self.peak_shift_hz <= 0:
            raise ValueError("peak_shift_hz must be positive")
        if self.jitter_sigma_nm < 0:
            raise ValueError("jitter_sigma_nm must be >= 0")

    @property
    def addr_period_nm(self) -> float:
        return 1e3 * self.addr_period_um

    @property
    def addr_periods_per_trap_site(self) -> float:
        return self.addr_period_nm / self.trap_period_nm

    @property
    def gradient_hz_per_um(self) -> float:
        """Detuning gradient at the sinusoid zero crossing."""
        return TWO_PI * self.peak_shift_hz / self.addr_period_um


def site_detuning(scene: LatticeScene, x_nm) -> np.ndarray | float:
    """delta(x) = peak_shift * sin(2*pi*(x - offset)/addr_period), in Hz."""
    x = np.asarray(x_nm, dtype=float)
    out = scene.peak_shift_hz * np.sin(
        TWO_PI * (x - scene.addr_offset_nm) / scene.addr_period_nm)
    return float(out) if np.ndim(x_nm) == 0 else out


@dataclass(frozen=True)
class Atom:
    site_index: int
    x_nm: float
    spin: np.ndarray
    alive: bool


@dataclass(frozen=True)
class AtomEnsemble:
    """Array-backed atom sample; exposes per-atom views via ``atoms``."""

    site_index: np.ndarray     # (n,) int
    x_nm: np.ndarray           # (n,) float
    spins: np.ndarray          # (n, 2) complex
    alive: np.ndarray          # (n,) bool
    scene: LatticeScene
    rng_seed: int = 0

    @property
    def n_atoms(self) -> int:
        return self.site_index.size

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(int(i), float(x), s.copy(), bool(a))
                for i, x, s, a in zip(self.site_index, self.x_nm, self.spins, self.alive)]

    def detunings_hz(self) -> np.ndarray:
        return site_detuning(self.scene, self.x_nm)


def with_scene(ensemble: AtomEnsemble, scene: LatticeScene) -> AtomEnsemble:
    return replace(ensemble, scene=scene)


def displace_atoms(ensemble: AtomEnsemble, dx_nm: float) -> AtomEnsemble:
    """Rigid transport of all atoms by dx (polarization-rotation move)."""
    return replace(ensemble, x_nm=ensemble.x_nm + dx_nm)


def sample_ensemble(scene: LatticeScene, n_atoms: int | None, seed) -> AtomEnsemble:
    """Populate trap sites in the cloud window, all spins |up>.

    Each site is occupied with probability 1/100 per pass; passes repeat
    until ``n_atoms`` is reached, so sites can hold several atoms (the
    y-z plane degeneracy).  ``n_atoms=None`` keeps a single pass.
    """
    rng = np.random.default_rng(seed)
    half_window = 0.5 * scene.cloud_diameter_addr_periods * scene.addr_period_nm
    max_index = int(math.floor(half_window / scene.trap_period_nm))
    sites = np.arange(-max_index, max_index + 1, dtype=np.int64)
    if sites.size == 0:
        raise CapacityError("cloud window contains no trap sites")
    capacity = sites.size * MAX_SITE_MULTIPLICITY
    if n_atoms is not None and n_atoms > capacity:
        raise CapacityError(
            f"requested {n_atoms} atoms but window capacity is {capacity}")

    chosen = []
    total = 0
    passes = 0
    while True:
        occupied = sites[rng.random(sites.size) < SITE_OCCUPANCY]
        if n_atoms is None:
            chosen.append(occupied)
            break
        passes += 1
        if total + occupied.size >= n_atoms:
            chosen.append(occupied[: n_atoms - total])
            break
        chosen.append(occupied)
        total += occupied.size
        if passes > MAX_SITE_MULTIPLICITY:
            raise CapacityError(
                f"could not place {n_atoms} atoms in {passes} passes over "
                f"{sites.size} sites")
    site_index = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    n = site_index.size
    spins = np.tile(SPIN_UP, (n, 1))
    return AtomEnsemble(
        site_index=site_index,
        x_nm=site_index.astype(float) * scene.trap_period_nm,
        spins=spins,
        alive=np.ones(n, dtype=bool),
        scene=scene,
        rng_seed=int(np.random.SeedSequence(seed).entropy) if isinstance(seed, int) else 0,
    )


def apply_pulse(ensemble: AtomEnsemble, train: PulseTrain,
                extra_detuning_hz: float = 0.0) -> AtomEnsemble:
    """Evolve every alive atom by the train at its local detuning.

    The effective detuning is delta(x) + extra_detuning - carrier, with
    extra_detuning modelling an applied Zeeman shift.
    """
    if ensemble.n_atoms == 0 or not ensemble.alive.any():
        return replace(ensemble, spins=ensemble.spins.copy())
    delta_hz = (ensemble.detunings_hz() + extra_detuning_hz - ensemble.scene.carrier_hz)
    alive = ensemble.alive
    uniq, inverse = np.unique(delta_hz[alive], return_inverse=True)
    props = train_propagators(train, TWO_PI * uniq)
    spins = ensemble.spins.copy()
    spins[alive] = np.einsum("nij,nj->ni", props[inverse], spins[alive])
    return replace(ensemble, spins=spins)


def measure_and_remove_up(ensemble: AtomEnsemble, seed) -> AtomEnsemble:
    """Project each alive atom; |up> outcomes are removed, survivors reset to |down>."""
    rng = np.random.default_rng(seed)
    alive = ensemble.alive.copy()
    spins = ensemble.spins.copy()
    idx = np.flatnonzero(alive)
    if idx.size:
        p_up = np.abs(spins[idx, 1]) ** 2
        goes_up = rng.random(idx.size) < p_up
        alive[idx[goes_up]] = False
        spins[idx[~goes_up]] = SPIN_DOWN
    return replace(ensemble, spins=spins, alive=alive)


def count_up(ensemble: AtomEnsemble, readout_error: float, seed) -> tuple[int, int]:
    """Projective readout of all alive atoms with a symmetric flip error."""
    if not 0.0 <= readout_error <= 1.0:
        raise ValueError("readout_error must be in [0, 1]")
    rng = np.random.default_rng(seed)
    idx = np.flatnonzero(ensemble.alive)
    if idx.size == 0:
        return 0, 0
    p_up = np.abs(ensemble.spins[idx, 1]) ** 2
    outcome_up = rng.random(idx.size) < p_up
    if readout_error > 0.0:
        outcome_up ^= rng.random(idx.size) < readout_error
    n_up = int(outcome_up.sum())
    return n_up, idx.size - n_up


def translate_addressing(scene: LatticeScene, dx_nm: float,
                         jitter: bool = False, rng=None) -> LatticeScene:
    """Shift the addressing lattice; optionally add Gaussian position jitter."""
    offset = scene.addr_offset_nm + dx_nm
    if jitter and scene.jitter_sigma_nm > 0.0:
        if rng is None:
            raise ValueError("jitter requires an rng")
        offset += rng.normal(0.0, scene.jitter_sigma_nm)
    return replace(scene, addr_offset_nm=offset)


def eom_translation(voltage: float, volts_per_period: float = 164.0,
                    trap_period_nm: float = 426.0) -> float:
    """Addressing-lattice displacement (nm) for an EOM control voltage."""
    return (voltage / volts_per_period) * trap_period_nm


@dataclass(frozen=True)
class ImageCurve:
    """Counts of atoms returned to |up> versus addressing translation."""

    translation_nm: np.ndarray
    count_up: np.ndarray
    n_runs: np.ndarray
    eom_volts: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.count_up < 0):
            raise ValueError("counts must be non-negative")

    @property
    def mean_counts(self) -> np.ndarray:
        return self.count_up / np.maximum(self.n_runs, 1)


def resonance_image(prep_train: PulseTrain, image_train: PulseTrain,
                    translation_grid_nm: Sequence[float], runs_per_point: int,
                    scene_template: LatticeScene, seed,
                    n_atoms: int | None = 400,
                    readout_error: float = DEFAULT_READOUT_ERROR,
                    image_extra_detuning_hz: float = 0.0,
                    displacement_nm: float = 0.0,
                    jobs: int = 1) -> ImageCurve:
    """Preselect, translate, re-image, count; accumulated over runs.

    Per run: a fresh ensemble with a uniformly random addressing offset
    is prepared by ``prep_train``, unflipped atoms are removed and the
    survivors reset to |down>; the atoms are optionally displaced by
    ``displacement_nm``; the addressing lattice is translated (with
    jitter) and ``image_train`` applied; atoms back in |up> are counted.
    """
    grid = np.asarray(translation_grid_nm, dtype=float)
    if runs_per_point < 1:
        raise ValueError("runs_per_point must be >= 1")

    def one_point(i_point: int) -> tuple[int, int]:
        counts = 0
        runs = 0
        for r in range(runs_per_point):
            rng = np.random.default_rng(derive_seed(_seed_entropy(seed), i_point, r))
            offset = rng.uniform(0.0, scene_template.addr_period_nm)
            scene = replace(scene_template, addr_offset_nm=scene_template.addr_offset_nm + offset)
            ens = sample_ensemble(scene, n_atoms, rng)
            ens = apply_pulse(ens, prep_train)
            ens = measure_and_remove_up(ens, rng)
            if displacement_nm:
                ens = displace_atoms(ens, displacement_nm)
            moved = translate_addressing(ens.scene, grid[i_point],
                                         jitter=scene.jitter_sigma_nm > 0.0, rng=rng)
            ens = with_scene(ens, moved)
            ens = apply_pulse(ens, image_train, extra_detuning_hz=image_extra_detuning_hz)
            n_up, _ = count_up(ens, readout_error, rng)
            counts += n_up
            runs += 1
        return counts, runs

    results = _indexed_map(one_point, grid.size, jobs)
    counts = np.array([r[0] for r in results], dtype=np.int64)
    runs = np.array([r[1] for r in results], dtype=np.int64)
    return ImageCurve(translation_nm=grid, count_up=counts, n_runs=runs)


def _seed_entropy(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        return int(ent if isinstance(ent, int) else ent[0])
    raise TypeError(f"unsupported seed type {type(seed)}")


def _indexed_map(fn, n: int, jobs: int):
    if jobs <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


@dataclass(frozen=True)
class GaussianPeak:
    center: float
    sigma: float
    area: float
    center_err: float
    sigma_err: float
    area_err: float


@dataclass(frozen=True)
class GaussianFit:
    peaks: tuple[GaussianPeak, ...]
    offset: float
    offset_err: float


def _multi_gaussian(x, offset, *params):
    y = np.full_like(x, offset, dtype=float)
    for k in range(len(params) // 3):
        amp, center, sigma = params[3 * k: 3 * k + 3]
        y += amp * np.exp(-0.5 * ((x - center) / sigma) ** 2)
    return y


def fit_gaussians(curve: ImageCurve, n_peaks: int, axis: str = "translation") -> GaussianFit:
    """Least-squares fit of ``n_peaks`` Gaussians plus a flat offset.

    Initial guesses come from local-maxima peak picking; raises FitError
    when the curve shows fewer maxima than requested.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    if axis == "translation":
        x = np.asarray(curve.translation_nm, dtype=float)
    elif axis == "volts":
        if curve.eom_volts is None:
            raise ValueError("curve carries no EOM voltages")
        x = np.asarray(curve.eom_volts, dtype=float)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    y = curve.mean_counts.astype(float)
    span = y.max() - y.min()
    if span <= 0.0:
        raise FitError("flat curve: found 0 local maxima, needed "
                       f"{n_peaks}")
    prominence = 0.15 * span
    peaks, props = find_peaks(y, prominence=prominence)
    if peaks.size < n_peaks:
        raise FitError(f"found {peaks.size} local maxima, needed {n_peaks}")
    order = np.argsort(props["prominences"])[::-1][:n_peaks]
    picked = np.sort(peaks[order])

    offset0 = float(y.min())
    dx = float(np.median(np.diff(np.sort(x)))) if x.size > 1 else 1.0
    p0 = [offset0]
    for p in picked:
        p0 += [max(y[p] - offset0, 1e-9), float(x[p]), max(3.0 * dx, 1e-9)]
    popt, pcov = curve_fit(_multi_gaussian, x, y, p0=p0, maxfev=20000)
    perr = np.sqrt(np.maximum(np.diag(pcov), 0.0))
    result = []
    for k in range(n_peaks):
        amp, center, sigma = popt[1 + 3 * k: 4 + 3 * k]
        amp_err, center_err, sigma_err = perr[1 + 3 * k: 4 + 3 * k]
        sigma = abs(float(sigma))
        area = float(amp) * sigma * math.sqrt(TWO_PI)
        # first-order propagation incl. the amp-sigma covariance
        cov_as = pcov[1 + 3 * k, 3 + 3 * k]
        var_area = (TWO_PI * (sigma ** 2 * amp_err ** 2 + amp ** 2 * sigma_err ** 2
                              + 2.0 * amp * sigma * cov_as))
        area_err = math.sqrt(max(var_area, 0.0))
        result.append(GaussianPeak(center=float(center), sigma=sigma, area=area,
                                   center_err=float(center_err),
                                   sigma_err=float(sigma_err), area_err=area_err))
    result.sort(key=lambda p: p.center)
    return GaussianFit(peaks=tuple(result), offset=float(popt[0]), offset_err=float(perr[0]))


@dataclass(frozen=True)
class ZeemanScanResult:
    gradient_hz_per_um: float
    zeeman_shifts_hz: np.ndarray
    separations_nm: np.ndarray
    curves: tuple[ImageCurve, ...] = ()


def zeeman_gradient_scan(zeeman_shifts_hz: Sequence[float], prep_train: PulseTrain,
                         image_train: PulseTrain, scene: LatticeScene,
                         translation_grid_nm: Sequence[float], runs_per_point: int,
                         seed, n_atoms: int | None = 400,
                         readout_error: float = DEFAULT_READOUT_ERROR,
                         jobs: int = 1) -> ZeemanScanResult:
    """Recover the addressing gradient from double-peak separations.

    Atoms are prepared at the zero crossings; a Zeeman shift moves the
    imaging resonance by -shift/gradient on either slope, so the peak
    separation is 2*shift/gradient.  A through-origin line fit of
    separation versus shift returns the gradient estimate.
    """
    shifts = np.asarray(zeeman_shifts_hz, dtype=float)
    if shifts.size == 0:
        raise ValueError("need at least one Zeeman shift")
    seps = np.empty(shifts.size)
    curves = []
    for i, dw in enumerate(shifts):
        curve = resonance_image(prep_train, image_train, translation_grid_nm,
                                runs_per_point, scene, derive_seed(_seed_entropy(seed), i),
                                n_atoms=n_atoms, readout_error=readout_error,
                                image_extra_detuning_hz=float(dw), jobs=jobs)
        fit = fit_gaussians(curve, n_peaks=2)
        seps[i] = abs(fit.peaks[1].center - fit.peaks[0].center)
        curves.append(curve)
    # separation_nm = (2 / g_hz_per_nm) * shift_hz
    slope = float(shifts @ seps) / float(shifts @ shifts)
    gradient_hz_per_um = 2.0e3 / slope
    return ZeemanScanResult(gradient_hz_per_um=gradient_hz_per_um,
                            zeeman_shifts_hz=shifts, separations_nm=seps,
                            curves=tuple(curves))


@dataclass(frozen=True)
class EomCalibration:
    volts_per_period: float
    displacements_nm: np.ndarray
    center_volts: np.ndarray
    curves: tuple[ImageCurve, ...] = ()


def calibrate_eom(voltage_grid: Sequence[float], displacements_nm: Sequence[float],
                  prep_train: PulseTrain, image_train: PulseTrain,
                  scene: LatticeScene, runs_per_point: int, seed,
                  volts_per_period_true: float = 164.0,
                  n_atoms: int | None = 400,
                  readout_error: float = DEFAULT_READOUT_ERROR,
                  jobs: int = 1) -> EomCalibration:
    """Fit EOM volts per trap period from images of displaced atoms.

    For each known displacement the image center voltage marks where the
    EOM translation matches the displacement; a line fit of center
    voltage versus displacement gives volts per trap period.
    """
    volts = np.asarray(voltage_grid, dtype=float)
    if volts.size == 0:
        raise ValueError("voltage grid is empty")
    disp = np.asarray(displacements_nm, dtype=float)
    if disp.size < 2:
        raise ValueError("need at least two displacements")
    translations = np.array([
        eom_translation(v, volts_per_period_true, scene.trap_period_nm) for v in volts])
    centers = np.empty(disp.size)
    curves = []
    for i, dx in enumerate(disp):
        curve = resonance_image(prep_train, image_train, translations, runs_per_point,
                                scene, derive_seed(_seed_entropy(seed), i),
                                n_atoms=n_atoms, readout_error=readout_error,
                                displacement_nm=float(dx), jobs=jobs)
        curve = replace(curve, eom_volts=volts)
        fit = fit_gaussians(curve, n_peaks=1, axis="volts")
        centers[i] = fit.peaks[0].center
        curves.append(curve)
    coeffs = np.polyfit(disp, centers, 1)
    volts_per_period = float(coeffs[0]) * scene.trap_period_nm
    return EomCalibration(volts_per_period=volts_per_period, displacements_nm=disp,
                          center_volts=centers, curves=tuple(curves))
