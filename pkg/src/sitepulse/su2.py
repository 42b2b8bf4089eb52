"""Exact two-level dynamics under piecewise-constant drive.

Conventions used throughout the package:

* State vectors are ``(c_down, c_up)`` on the basis ``(|down>, |up>)``,
  with |up> at the +z pole of the Bloch sphere.  In this storage order
  sigma_z is ``diag(-1, +1)``.
* Detuning is ``delta = omega_qubit - omega_drive`` and enters the
  rotating-frame Hamiltonian as ``H = (rabi*(cos(phi) sx + sin(phi) sy)
  + delta*sz) / 2``.
* All frequencies inside this module are angular (rad/s).  File formats
  and higher-level interfaces use Hz and convert with 2*pi at the
  boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Pauli matrices in (|down>, |up>) storage order, |up> at +z.
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

SPIN_DOWN = np.array([1.0, 0.0], dtype=complex)
SPIN_UP = np.array([0.0, 1.0], dtype=complex)

PULSE_CSV_HEADER = ("duration_s", "rabi_hz", "phase_rad")


@dataclass(frozen=True)
class PulseSegment:
    """One square pulse: duration (s), Rabi rate (rad/s), phase (rad).

    The phase is stored reduced to [0, 2*pi).
    """

    duration: float
    rabi: float
    phase: float = 0.0

    def __post_init__(self):
        duration, rabi, phase = (float(self.duration), float(self.rabi), float(self.phase))
        if not (math.isfinite(duration) and math.isfinite(rabi) and math.isfinite(phase)):
            raise ValueError("segment parameters must be finite")
        if duration <= 0.0:
            raise ValueError(f"segment duration must be > 0, got {duration}")
        if rabi < 0.0:
            raise ValueError(f"segment rabi must be >= 0, got {rabi}")
        object.__setattr__(self, "duration", duration)
        object.__setattr__(self, "rabi", rabi)
        object.__setattr__(self, "phase", phase % TWO_PI)

    @classmethod
    def from_hz(cls, duration_s: float, rabi_hz: float, phase_rad: float = 0.0) -> "PulseSegment":
        return cls(duration_s, TWO_PI * rabi_hz, phase_rad)

    @property
    def rabi_hz(self) -> float:
        return self.rabi / TWO_PI


@dataclass(frozen=True)
class PulseTrain:
    """Ordered pulse segments; the first element acts first in time."""

    segments: tuple[PulseSegment, ...]
    label: str = ""

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("pulse train must contain at least one segment")
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def total_duration(self) -> float:
        return sum(seg.duration for seg in self.segments)

    @property
    def phases(self) -> np.ndarray:
        return np.array([seg.phase for seg in self.segments])


def uniform_train(phases: Iterable[float], segment_duration: float,
                  rabi_hz: float, label: str = "") -> PulseTrain:
    """Train of equal-duration, equal-amplitude segments with given phases."""
    segs = tuple(PulseSegment.from_hz(segment_duration, rabi_hz, p) for p in phases)
    return PulseTrain(segs, label=label)


def segment_propagator(seg: PulseSegment, detuning: float) -> np.ndarray:
    """Propagator exp(-i*(theta/2) q.sigma) of one square pulse.

    theta = Omega*T with Omega = sqrt(rabi^2 + detuning^2); the rotation
    axis is q = (rabi/Omega)(cos(phi), sin(phi), 0) + (detuning/Omega) z.
    A segment with Omega == 0 returns the identity exactly.

    Parameters
    ----------
    seg : PulseSegment
    detuning : float
        Angular detuning (rad/s).

    Returns
    -------
    (2, 2) complex ndarray
    """
    if not math.isfinite(detuning):
        raise ValueError("detuning must be finite")
    return _propagators_impl(seg.duration, seg.rabi, seg.phase,
                             np.asarray(detuning, dtype=float))


def segment_propagators(seg: PulseSegment, detunings: np.ndarray) -> np.ndarray:
    """Vectorised ``segment_propagator``: returns shape (..., 2, 2)."""
    detunings = np.asarray(detunings, dtype=float)
    if not np.all(np.isfinite(detunings)):
        raise ValueError("detunings must be finite")
    return _propagators_impl(seg.duration, seg.rabi, seg.phase, detunings)


def _propagators_impl(duration, rabi, phase, detunings):
    omega = np.hypot(rabi, detunings)
    theta_half = 0.5 * omega * duration
    c = np.cos(theta_half)
    s = np.sin(theta_half)
    # At omega == 0 the sine factor vanishes; the clipped divisor keeps the
    # segment an exact identity without a 0/0.
    s_inv = s / np.maximum(omega, 1e-300)
    nx_s = rabi * math.cos(phase) * s_inv
    ny_s = rabi * math.sin(phase) * s_inv
    nz_s = detunings * s_inv
    u = np.empty(np.shape(detunings) + (2, 2), dtype=complex)
    # Assembled from c*I - i*s*(nx*SX + ny*SY + nz*SZ) with SZ = diag(-1, 1).
    u[..., 0, 0] = c + 1j * nz_s
    u[..., 1, 1] = c - 1j * nz_s
    u[..., 0, 1] = -1j * (nx_s + 1j * ny_s)
    u[..., 1, 0] = -1j * (nx_s - 1j * ny_s)
    return u


def mat2_mul(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Batched 2x2 product a @ b via explicit components (faster than matmul)."""
    if out is None:
        shape = a.shape if a.shape == b.shape else np.broadcast_shapes(a.shape, b.shape)
        out = np.empty(shape, dtype=complex)
    a00, a01 = a[..., 0, 0], a[..., 0, 1]
    a10, a11 = a[..., 1, 0], a[..., 1, 1]
    b00, b01 = b[..., 0, 0], b[..., 0, 1]
    b10, b11 = b[..., 1, 0], b[..., 1, 1]
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


def _train_arrays(train: PulseTrain):
    dur = np.array([s.duration for s in train.segments])[:, None]
    rabi = np.array([s.rabi for s in train.segments])[:, None]
    e = np.exp(1j * np.array([s.phase for s in train.segments]))[:, None]
    return dur, rabi, e


def train_stack(train: PulseTrain, detunings: np.ndarray) -> np.ndarray:
    """Per-segment propagators for a detuning grid, shape (n_seg, m, 2, 2)."""
    d = np.asarray(detunings, dtype=float).ravel()
    dur, rabi, e = _train_arrays(train)
    omega = np.hypot(rabi, d[None, :])
    theta_half = 0.5 * omega * dur
    c = np.cos(theta_half)
    s = np.sin(theta_half)
    # At omega == 0 the sine factor vanishes, so a clipped divisor is safe
    # and the segment is the exact identity.
    s_inv = s / np.maximum(omega, 1e-300)
    nz_s = d[None, :] * s_inv
    off = -1j * (rabi * s_inv)
    u = np.empty((len(train.segments), d.size, 2, 2), dtype=complex)
    u[..., 0, 0] = c + 1j * nz_s
    u[..., 1, 1] = c - 1j * nz_s
    u[..., 0, 1] = off * e
    u[..., 1, 0] = off * e.conj()
    return u


def chain_product(stack: np.ndarray) -> np.ndarray:
    """Ordered product stack[-1] @ ... @ stack[0] by pairwise tree reduction."""
    while stack.shape[0] > 1:
        n = stack.shape[0]
        half = n // 2
        paired = mat2_mul(stack[1:2 * half:2], stack[0:2 * half:2])
        stack = np.concatenate([paired, stack[-1:]], axis=0) if n % 2 else paired
    return stack[0]


def train_propagator(train: PulseTrain, detuning: float) -> np.ndarray:
    """Time-ordered product U_N ... U_2 U_1 (segment 1 rightmost)."""
    u = segment_propagator(train.segments[0], detuning)
    for seg in train.segments[1:]:
        u = segment_propagator(seg, detuning) @ u
    return u


def train_propagators(train: PulseTrain, detunings: np.ndarray) -> np.ndarray:
    """Vectorised ``train_propagator`` over an array of detunings."""
    detunings = np.asarray(detunings, dtype=float)
    if not np.all(np.isfinite(detunings)):
        raise ValueError("detunings must be finite")
    u = chain_product(train_stack(train, detunings))
    return u.reshape(np.shape(detunings) + (2, 2))


def apply_unitary(u: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Matrix-vector product u @ state."""
    return np.asarray(u) @ np.asarray(state, dtype=complex)


def hs_distance(u: np.ndarray, w: np.ndarray) -> float:
    """Hilbert-Schmidt distance sqrt(Tr[(W-U)^dag (W-U)]).

    Sensitive to the global phase between the two unitaries.
    """
    return float(np.linalg.norm(np.asarray(w) - np.asarray(u)))


def phase_insensitive_fidelity(u: np.ndarray, w: np.ndarray) -> float:
    """|Tr(U^dag W)| / 2, invariant under a global phase on either side."""
    return float(abs(np.trace(np.asarray(u).conj().T @ np.asarray(w))) / 2.0)


def rescale_train(train: PulseTrain, kappa: float) -> PulseTrain:
    """Rescale amplitudes by kappa and durations by 1/kappa.

    The rescaled train reproduces the original propagator at detuning
    kappa*delta, i.e. it implements the original frequency response
    stretched by kappa.
    """
    if not (math.isfinite(kappa) and kappa > 0.0):
        raise ValueError(f"kappa must be a positive finite number, got {kappa}")
    segs = tuple(replace(seg, duration=seg.duration / kappa, rabi=seg.rabi * kappa)
                 for seg in train.segments)
    return PulseTrain(segs, label=train.label)


def shift_global_phase(train: PulseTrain, phi: float) -> PulseTrain:
    """Add phi to every segment phase (rotates the drive axes by phi)."""
    segs = tuple(replace(seg, phase=seg.phase + phi) for seg in train.segments)
    return PulseTrain(segs, label=train.label)


def _roundtrip_hz(rabi: float) -> float:
    # Pick the Hz value whose float product with 2*pi reproduces the stored
    # rad/s Rabi rate exactly, so the CSV round-trips bit for bit.
    hz = rabi / TWO_PI
    for cand in (hz, np.nextafter(hz, np.inf), np.nextafter(hz, -np.inf),
                 np.nextafter(np.nextafter(hz, np.inf), np.inf),
                 np.nextafter(np.nextafter(hz, -np.inf), -np.inf)):
        if float(cand) * TWO_PI == rabi:
            return float(cand)
    return hz


def save_pulse_csv(train: PulseTrain, path) -> None:
    """Write the exchange format: header duration_s,rabi_hz,phase_rad."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PULSE_CSV_HEADER)
        for seg in train.segments:
            writer.writerow([repr(seg.duration), repr(_roundtrip_hz(seg.rabi)),
                             repr(seg.phase)])


def load_pulse_csv(path) -> PulseTrain:
    """Read a pulse train written by :func:`save_pulse_csv`."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PULSE_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PULSE_CSV_HEADER)}")
        segs = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{i}: expected 3 columns, got {len(row)}")
            try:
                duration, rabi_hz, phase = (float(x) for x in row)
            except ValueError as exc:
                raise ValueError(f"{path}:{i}: {exc}") from None
            segs.append(PulseSegment.from_hz(duration, rabi_hz, phase))
    return PulseTrain(tuple(segs), label=path.stem)
