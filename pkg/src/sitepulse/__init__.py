"""Composite-pulse design and a virtual optical-lattice addressing experiment."""

__version__ = "0.1.0"

from .su2 import (  # noqa: F401
    PulseSegment,
    PulseTrain,
    SPIN_DOWN,
    SPIN_UP,
    apply_unitary,
    hs_distance,
    load_pulse_csv,
    phase_insensitive_fidelity,
    rescale_train,
    save_pulse_csv,
    segment_propagator,
    shift_global_phase,
    train_propagator,
    uniform_train,
)
