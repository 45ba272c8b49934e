"""Battery figures of merit: stored energy, power, coherence, entanglement.

Entanglement between charger and battery is the logarithmic negativity of
the *joint* state, log2 || rho^{T_B} ||_1 with the partial transpose taken
over the battery slots.  The same quantity evaluated on the reduced battery
state alone would be identically zero, since a density matrix has unit
trace norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NumericalCorruptionError
from .tensor import (
    HERMITIAN_TOL,
    DenseOperator,
    DensityState,
    partial_trace_matrix,
    partial_transpose_matrix,
)

IMAG_TOL = 1e-8


@dataclass
class BatteryMetrics:
    delta_E: float
    P_avg: float
    P_max: float
    E_s: float
    C: float
    S: float


def _matrix(x) -> np.ndarray:
    if isinstance(x, DensityState):
        return x.op.data
    if isinstance(x, DenseOperator):
        return x.data
    return np.asarray(x, dtype=complex)


def _real(value: complex, what: str) -> float:
    if abs(value.imag) > IMAG_TOL:
        raise NumericalCorruptionError(f"{what} has imaginary part {value.imag:.3e}")
    return float(value.real)


def stored_energy(rho_full, H_q, mode_slots=None, e0: float = 0.0) -> float:
    """Tr[H_q Tr_modes(rho)] - e0.

    ``H_q`` may act on the battery-only layout (the modes are traced out
    first) or on the full layout (used directly).
    """
    rho = _matrix(rho_full)
    h = _matrix(H_q)
    if h.shape != rho.shape:
        layout = rho_full.layout
        slots = layout.mode_slots if mode_slots is None else tuple(mode_slots)
        keep = [s for s in range(len(layout)) if s not in set(slots)]
        rho = partial_trace_matrix(rho, layout.dims, keep)
    value = complex(np.einsum("ij,ji->", h, rho))
    return _real(value, "stored energy") - e0


def average_power(delta_E: float, t: float) -> float:
    """delta_E / t, with the t = 0 value taken as 0."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return 0.0 if t == 0 else delta_E / t


def max_power(traj) -> tuple[float, float]:
    """Largest sampled average power and the earliest time it occurs."""
    if len(traj.times) == 0:
        raise InsufficientDataError("empty trajectory")
    t = np.asarray(traj.times, dtype=float)
    if "P" in traj.samples:
        p = np.asarray(traj.samples["P"], dtype=float)
    else:
        e = np.asarray(traj.samples["delta_E"], dtype=float)
        p = np.array([average_power(ei, ti) for ei, ti in zip(e, t)])
    i = int(np.argmax(p))
    return float(p[i]), float(t[i])


def l1_coherence(rho) -> float:
    """Sum of |rho_ij| over i != j in the computational product basis."""
    m = _matrix(rho)
    return float(np.sum(np.abs(m)) - np.sum(np.abs(np.diag(m))))


def log_negativity(rho_full, battery_slots) -> float:
    """log2 of the trace norm of the joint state transposed on ``battery_slots``.

    Returns 0 when the trace norm does not exceed 1 + 1e-12.
    """
    layout = rho_full.layout
    return _log_negativity(_matrix(rho_full), layout.dims, sorted(battery_slots))


def _log_negativity(rho, dims, slots) -> float:
    pt = partial_transpose_matrix(rho, dims, slots)
    err = float(np.max(np.abs(pt - pt.conj().T)))
    if err > HERMITIAN_TOL:
        raise NumericalCorruptionError(f"partial transpose not Hermitian ({err:.3e})")
    norm = float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (pt + pt.conj().T)))))
    return 0.0 if norm <= 1.0 + 1e-12 else float(np.log2(norm))


def battery_observer(layout, H_q, e0: float = 0.0, entanglement: bool = True):
    """Observer ``(t, rho) -> {delta_E, P, C, S}`` for :func:`~qbatt.engine.integrate`.

    ``H_q`` acts on the battery (qutrit) slots of ``layout``.  With no mode
    slots the state already is the battery and ``S`` is reported as 0.
    """
    h = _matrix(H_q)
    modes = layout.mode_slots
    qutrits = list(layout.qutrit_slots)
    dims = layout.dims

    def observe(t, rho):
        rho_q = partial_trace_matrix(rho, dims, qutrits) if modes else rho
        de = _real(complex(np.einsum("ij,ji->", h, rho_q)), "stored energy") - e0
        s = _log_negativity(rho, dims, qutrits) if (modes and entanglement) else 0.0
        return {
            "delta_E": de,
            "P": average_power(de, t),
            "C": l1_coherence(rho_q),
            "S": s,
        }

    return observe


def populations_observer(layout):
    """Diagonal of the state, one column per basis index (battery-only runs)."""

    def observe(t, rho):
        d = np.real(np.diag(rho))
        return {f"p{i}": float(x) for i, x in enumerate(d)}

    return observe
