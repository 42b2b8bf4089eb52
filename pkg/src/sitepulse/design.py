"""Frequency-dependent control targets, cost functionals, phase optimization.

A target profile assigns a goal (a gate, a final state reached from
|down>, or don't-care) to each detuning band.  Costs are band averages
over uniform sample grids; the optimizer searches segment phases only,
with amplitude and duration held fixed per run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .su2 import (
    IDENTITY,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    SPIN_DOWN,
    SPIN_UP,
    TWO_PI,
    PulseSegment,
    PulseTrain,
    mat2_mul,
    segment_propagators,
    uniform_train,
)

DEFAULT_RABI_CAP_HZ = 40_000.0  # hardware amplitude limit


class DontCare:
    """Band goal placeholder: contributes nothing to any cost."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DontCare()"


DONT_CARE = DontCare()


@dataclass(frozen=True)
class GateTarget:
    """Rotation by ``angle`` about unit ``axis``, times exp(i*global_phase).

    The raw rotation is exp(-i*(angle/2) axis.sigma); global_phase lets a
    caller pin a phase convention when using the phase-sensitive metric.
    """

    axis: tuple[float, float, float]
    angle: float
    global_phase: float = 0.0

    def __post_init__(self):
        norm = math.sqrt(sum(a * a for a in self.axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"axis must be a unit vector, |axis| = {norm}")

    def unitary(self) -> np.ndarray:
        nx, ny, nz = self.axis
        half = 0.5 * self.angle
        u = (math.cos(half) * IDENTITY
             - 1j * math.sin(half) * (nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z))
        if self.global_phase:
            u = np.exp(1j * self.global_phase) * u
        return u

    @classmethod
    def identity(cls) -> "GateTarget":
        return cls((1.0, 0.0, 0.0), 0.0)

    @classmethod
    def flip_x(cls) -> "GateTarget":
        return cls((1.0, 0.0, 0.0), math.pi)

    @classmethod
    def half_x(cls) -> "GateTarget":
        return cls((1.0, 0.0, 0.0), math.pi / 2.0)

    @classmethod
    def hadamard(cls) -> "GateTarget":
        s = 1.0 / math.sqrt(2.0)
        return cls((s, 0.0, s), math.pi)


@dataclass(frozen=True)
class StateTarget:
    """Desired final state reached from |down>."""

    c_down: complex
    c_up: complex

    def __post_init__(self):
        norm = abs(self.c_down) ** 2 + abs(self.c_up) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state target must be normalized, |psi|^2 = {norm}")

    def vector(self) -> np.ndarray:
        return np.array([self.c_down, self.c_up], dtype=complex)

    @classmethod
    def up(cls) -> "StateTarget":
        return cls(0.0, 1.0)

    @classmethod
    def down(cls) -> "StateTarget":
        return cls(1.0, 0.0)


@dataclass(frozen=True)
class Band:
    """Detuning interval [lo_hz, hi_hz) with a goal."""

    lo_hz: float
    hi_hz: float
    goal: GateTarget | StateTarget | DontCare

    def __post_init__(self):
        if not self.lo_hz < self.hi_hz:
            raise ValueError(f"band requires lo < hi, got [{self.lo_hz}, {self.hi_hz}]")

    @property
    def width_hz(self) -> float:
        return self.hi_hz - self.lo_hz

    @property
    def center_hz(self) -> float:
        return 0.5 * (self.lo_hz + self.hi_hz)


@dataclass(frozen=True)
class TargetProfile:
    bands: tuple[Band, ...]
    description: str = ""

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        active = [b for b in bands if not isinstance(b.goal, DontCare)]
        if not active:
            raise ValueError("profile needs at least one non-DontCare band")
        ordered = sorted(bands, key=lambda b: b.lo_hz)
        for a, b in zip(ordered, ordered[1:]):
            if b.lo_hz < a.hi_hz:
                raise ValueError(f"bands overlap: [{a.lo_hz},{a.hi_hz}] and [{b.lo_hz},{b.hi_hz}]")

    @property
    def active_bands(self) -> tuple[Band, ...]:
        return tuple(b for b in self.bands if not isinstance(b.goal, DontCare))


def scale_profile(profile: TargetProfile, kappa: float) -> TargetProfile:
    """Stretch every band edge by kappa (the rescaled-train response)."""
    bands = tuple(Band(b.lo_hz * kappa, b.hi_hz * kappa, b.goal) for b in profile.bands)
    return TargetProfile(bands, description=profile.description)


@dataclass(frozen=True)
class DesignSpec:
    """Fixed design parameters; the optimizer searches phases only."""

    n_segments: int
    segment_duration: float          # s
    rabi_hz: float                   # on-resonance Rabi rate, Hz
    samples_per_band: int = 33
    n_restarts: int = 20
    rng_seed: int = 0
    max_iterations: int = 2000
    convergence_tol: float = 1e-8    # gradient-norm tolerance
    metric: str = "phase_insensitive"  # or "hs"
    rabi_cap_hz: float = DEFAULT_RABI_CAP_HZ
    target_cost: float | None = None  # early-stop threshold across restarts

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.segment_duration <= 0.0:
            raise ValueError("segment_duration must be > 0")
        if not 0.0 <= self.rabi_hz <= self.rabi_cap_hz:
            raise ValueError(
                f"rabi_hz = {self.rabi_hz} outside [0, {self.rabi_cap_hz}] cap")
        if self.metric not in ("phase_insensitive", "hs"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.samples_per_band < 1:
            raise ValueError("samples_per_band must be >= 1")


@dataclass(frozen=True)
class DesignResult:
    train: PulseTrain
    cost: float
    delta_hz: np.ndarray          # sample grid used by the cost
    fidelity: np.ndarray          # per-sample fidelity on that grid
    converged: bool
    restarts_used: int
    per_band_cost: tuple[float, ...] = ()


class _Objective:
    """Vectorised cost + analytic gradient for phases on a fixed grid.

    The phase derivative of each segment propagator is exact:
    U_j(phi) = Rz(phi) U_j(0) Rz(phi)^dag, hence
    dU_j/dphi = -(i/2) [sigma_z, U_j].
    """

    def __init__(self, spec: DesignSpec, profile: TargetProfile,
                 metric: str | None = None, samples_per_band: int | None = None):
        self.spec = spec
        self.metric = metric or spec.metric
        m = samples_per_band or spec.samples_per_band
        deltas = []
        band_slices = []
        goals = []
        start = 0
        for band in profile.active_bands:
            grid = np.linspace(band.lo_hz, band.hi_hz, m)
            deltas.append(grid)
            band_slices.append(slice(start, start + m))
            goals.append(band.goal)
            start += m
        self.delta_hz = np.concatenate(deltas)
        self.delta_rad = TWO_PI * self.delta_hz
        self.band_slices = band_slices
        self.goals = goals
        self.n_bands = len(goals)
        n = self.delta_rad.size
        self.weights = np.empty(n)
        self.gate_mask = np.zeros(n, dtype=bool)
        self.targets_u = np.zeros((n, 2, 2), dtype=complex)
        self.targets_psi = np.zeros((n, 2), dtype=complex)
        for sl, goal in zip(band_slices, goals):
            self.weights[sl] = 1.0 / (self.n_bands * m)
            if isinstance(goal, GateTarget):
                self.gate_mask[sl] = True
                self.targets_u[sl] = goal.unitary()
            else:
                self.targets_psi[sl] = goal.vector()
        self.duration = spec.segment_duration
        self.rabi = TWO_PI * spec.rabi_hz
        # Segment geometry depends on delta only; phases enter through
        # e^{+-i phi} factors on the off-diagonal entries.
        omega = np.hypot(self.rabi, self.delta_rad)
        theta_half = 0.5 * omega * self.duration
        s_inv = np.sin(theta_half) / np.maximum(omega, 1e-300)
        self._diag = np.cos(theta_half) + 1j * (self.delta_rad * s_inv)
        self._off = -1j * (self.rabi * s_inv)

    def _propagator_stack(self, phases: np.ndarray) -> np.ndarray:
        us = np.empty((len(phases), self.delta_rad.size, 2, 2), dtype=complex)
        e = np.exp(1j * np.asarray(phases, dtype=float))[:, None]
        us[..., 0, 0] = self._diag
        us[..., 1, 1] = self._diag.conj()
        us[..., 0, 1] = self._off * e
        us[..., 1, 0] = self._off * e.conj()
        return us

    def total_propagator(self, phases: np.ndarray) -> np.ndarray:
        us = self._propagator_stack(phases)
        u = us[0]
        for j in range(1, len(phases)):
            u = mat2_mul(us[j], u)
        return u

    def per_sample_cost(self, u_total: np.ndarray) -> np.ndarray:
        cost = np.empty(self.delta_rad.size)
        g = self.gate_mask
        if g.any():
            z = np.einsum("mij,mij->m", u_total[g].conj(), self.targets_u[g])
            if self.metric == "phase_insensitive":
                cost[g] = 1.0 - 0.5 * np.abs(z)
            else:
                cost[g] = np.sqrt(np.maximum(4.0 - 2.0 * z.real, 0.0))
        if (~g).any():
            f = np.einsum("mi,mi->m", self.targets_psi[~g].conj(), u_total[~g, :, 0])
            cost[~g] = 1.0 - np.abs(f) ** 2
        return cost

    def cost(self, phases: np.ndarray) -> float:
        u = self.total_propagator(np.asarray(phases, dtype=float))
        return float(self.per_sample_cost(u) @ self.weights)

    def per_band_cost(self, phases: np.ndarray) -> tuple[float, ...]:
        u = self.total_propagator(np.asarray(phases, dtype=float))
        c = self.per_sample_cost(u)
        return tuple(float(np.mean(c[sl])) for sl in self.band_slices)

    def per_sample_fidelity(self, phases: np.ndarray) -> np.ndarray:
        u = self.total_propagator(np.asarray(phases, dtype=float))
        fid = np.empty(self.delta_rad.size)
        g = self.gate_mask
        if g.any():
            z = np.einsum("mij,mij->m", u[g].conj(), self.targets_u[g])
            fid[g] = 0.5 * np.abs(z)
        if (~g).any():
            f = np.einsum("mi,mi->m", self.targets_psi[~g].conj(), u[~g, :, 0])
            fid[~g] = np.abs(f) ** 2
        return fid

    def cost_and_grad(self, phases: np.ndarray) -> tuple[float, np.ndarray]:
        phases = np.asarray(phases, dtype=float)
        n_seg = len(phases)
        us = self._propagator_stack(phases)
        m = self.delta_rad.size
        prefix = np.empty((n_seg + 1, m, 2, 2), dtype=complex)
        prefix[0] = IDENTITY
        for j in range(n_seg):
            prefix[j + 1] = mat2_mul(us[j], prefix[j])
        suffix = np.empty((n_seg + 1, m, 2, 2), dtype=complex)
        suffix[n_seg] = IDENTITY
        for j in range(n_seg - 1, -1, -1):
            suffix[j] = mat2_mul(suffix[j + 1], us[j])
        u_total = prefix[n_seg]

        g = self.gate_mask
        w = self.weights
        cost = self.per_sample_cost(u_total)
        total = float(cost @ w)

        # dU_j/dphi = -(i/2)[sigma_z, U_j] has only off-diagonal entries;
        # the per-segment loop is batched into one (n_seg, m, 2, 2) chain.
        du = np.zeros_like(us)
        du[..., 0, 1] = 1j * us[..., 0, 1]
        du[..., 1, 0] = -1j * us[..., 1, 0]
        dtotal = mat2_mul(suffix[1:], mat2_mul(du, prefix[:-1]))

        dcost = np.zeros((n_seg, m))
        if g.any():
            z = np.einsum("mij,mij->m", u_total[g].conj(), self.targets_u[g])
            dz = np.einsum("nmij,mij->nm", dtotal[:, g].conj(), self.targets_u[g])
            if self.metric == "phase_insensitive":
                safe = np.where(np.abs(z) > 1e-15, np.abs(z), 1.0)
                dcost[:, g] = -0.5 * (z.conj()[None, :] * dz).real / safe[None, :]
            else:
                hs = np.where(cost[g] > 1e-12, cost[g], 1.0)
                dcost[:, g] = np.where(cost[g][None, :] > 1e-12, -dz.real / hs[None, :], 0.0)
        if (~g).any():
            f = np.einsum("mi,mi->m", self.targets_psi[~g].conj(), u_total[~g, :, 0])
            dcol = dtotal[..., 0]          # action on |down>, shape (n_seg, m, 2)
            df = np.einsum("mi,nmi->nm", self.targets_psi[~g].conj(), dcol[:, ~g, :])
            dcost[:, ~g] = -2.0 * (f.conj()[None, :] * df).real
        return total, dcost @ w


def _check_band_kinds(profile: TargetProfile, kind, op_name: str):
    for band in profile.active_bands:
        if not isinstance(band.goal, kind):
            raise TypeError(
                f"{op_name} requires {kind.__name__} bands, got {type(band.goal).__name__}")


def gate_cost(phases: Sequence[float], spec: DesignSpec, profile: TargetProfile,
              metric: str | None = None) -> float:
    """Band-averaged gate distance of the phase train against the profile.

    Default metric is the phase-insensitive infidelity 1 - |Tr(U^dag W)|/2
    per sample; ``metric="hs"`` selects the Hilbert-Schmidt distance.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.size != spec.n_segments:
        raise ValueError(f"expected {spec.n_segments} phases, got {phases.size}")
    _check_band_kinds(profile, GateTarget, "gate_cost")
    return _Objective(spec, profile, metric=metric).cost(phases)


def state_cost(phases: Sequence[float], spec: DesignSpec, profile: TargetProfile) -> float:
    """Band-averaged infidelity 1 - |<psi(delta)|U|down>|^2."""
    phases = np.asarray(phases, dtype=float)
    if phases.size != spec.n_segments:
        raise ValueError(f"expected {spec.n_segments} phases, got {phases.size}")
    _check_band_kinds(profile, StateTarget, "state_cost")
    return _Objective(spec, profile).cost(phases)


def optimize_phases(spec: DesignSpec, profile: TargetProfile) -> DesignResult:
    """Multistart quasi-Newton search over segment phases.

    Deterministic given ``spec.rng_seed``: each restart draws phases
    uniformly in [0, 2*pi) and is minimized by BFGS with the analytic
    gradient; the best restart wins.
    """
    obj = _Objective(spec, profile)
    rng = np.random.default_rng(spec.rng_seed)
    best = None
    restarts_used = 0
    for _ in range(spec.n_restarts):
        x0 = rng.uniform(0.0, TWO_PI, spec.n_segments)
        res = minimize(obj.cost_and_grad, x0, jac=True, method="BFGS",
                       options={"maxiter": spec.max_iterations,
                                "gtol": spec.convergence_tol})
        restarts_used += 1
        if best is None or res.fun < best.fun:
            best = res
        if spec.target_cost is not None and best.fun <= spec.target_cost:
            break
    phases = np.mod(best.x, TWO_PI)
    train = uniform_train(phases, spec.segment_duration, spec.rabi_hz,
                          label=profile.description or "designed")
    cost = obj.cost(phases)
    return DesignResult(
        train=train,
        cost=cost,
        delta_hz=obj.delta_hz.copy(),
        fidelity=obj.per_sample_fidelity(phases),
        converged=bool(best.success),
        restarts_used=restarts_used,
        per_band_cost=obj.per_band_cost(phases),
    )


def evaluate_profile_cost(train: PulseTrain, spec: DesignSpec, profile: TargetProfile,
                          samples_per_band: int | None = None,
                          metric: str | None = None) -> float:
    """Re-evaluate a train's cost on the profile, optionally on a finer grid."""
    obj = _Objective(spec, profile, metric=metric, samples_per_band=samples_per_band)
    return obj.cost(train.phases)


def gaussian_pulse(sigma_t: float, pulse_area: float, truncation_sigmas: float = 4.0,
                   segment_dt: float | None = None) -> PulseTrain:
    """Discretised Gaussian-envelope pulse with the requested area.

    The envelope exp(-t^2 / 2 sigma_t^2) on [-k sigma, +k sigma] is cut
    into constant segments of width segment_dt (default sigma_t / 50) and
    scaled so the total rotation angle sum(rabi_i * dt) equals pulse_area.
    All phases are zero.
    """
    if sigma_t <= 0.0:
        raise ValueError("sigma_t must be > 0")
    if segment_dt is None:
        segment_dt = sigma_t / 50.0
    if segment_dt <= 0.0:
        raise ValueError("segment_dt must be > 0")
    if segment_dt >= sigma_t:
        raise ValueError(
            f"segment_dt = {segment_dt} under-resolves sigma_t = {sigma_t}")
    if truncation_sigmas <= 0.0:
        raise ValueError("truncation_sigmas must be > 0")
    span = 2.0 * truncation_sigmas * sigma_t
    n = max(int(math.ceil(span / segment_dt)), 3)
    t = (np.arange(n) - 0.5 * (n - 1)) * segment_dt
    envelope = np.exp(-0.5 * (t / sigma_t) ** 2)
    peak = pulse_area / float(envelope.sum() * segment_dt)
    segs = tuple(PulseSegment(segment_dt, peak * e, 0.0) for e in envelope)
    return PulseTrain(segs, label=f"gaussian_sigma={sigma_t:g}s_area={pulse_area:g}")


@dataclass(frozen=True)
class ResponseCurve:
    delta_hz: np.ndarray
    p_flip: np.ndarray
    fidelity: np.ndarray | None = None


def response_profile(train: PulseTrain, delta_hz: Sequence[float],
                     input_state: np.ndarray = SPIN_DOWN,
                     profile: TargetProfile | None = None) -> ResponseCurve:
    """Pointwise |<up|U(delta)|input>|^2, plus fidelity against a profile.

    With a profile given, the fidelity column holds, at each grid point
    inside a non-DontCare band, the gate or state fidelity against that
    band's goal; points outside any active band are NaN.
    """
    delta_hz = np.asarray(delta_hz, dtype=float)
    from .su2 import train_propagators

    u = train_propagators(train, TWO_PI * delta_hz)
    psi = u @ np.asarray(input_state, dtype=complex)
    p_flip = np.abs(psi[..., 1]) ** 2
    fidelity = None
    if profile is not None:
        fidelity = np.full(delta_hz.shape, np.nan)
        for band in profile.active_bands:
            mask = (delta_hz >= band.lo_hz) & (delta_hz <= band.hi_hz)
            if not mask.any():
                continue
            if isinstance(band.goal, GateTarget):
                z = np.einsum("mij,mij->m", u[mask].conj(),
                              np.broadcast_to(band.goal.unitary(), (mask.sum(), 2, 2)))
                fidelity[mask] = 0.5 * np.abs(z)
            else:
                f = np.einsum("i,mi->m", band.goal.vector().conj(), u[mask, :, 0])
                fidelity[mask] = np.abs(f) ** 2
    return ResponseCurve(delta_hz=delta_hz, p_flip=p_flip, fidelity=fidelity)
