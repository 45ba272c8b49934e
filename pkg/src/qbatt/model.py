"""Hamiltonians and parameter sets for the resonator-qutrits battery.

Conventions: hbar = 1, every frequency and rate in units of the resonator
frequency omega.  Coupling terms carry the explicit imaginary unit of the
transmon charge operator, so ``1j * g * (a + a^+) (S^- - S^+)`` is Hermitian
because ``S^- - S^+`` is anti-Hermitian.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidDimensionError, TruncationError
from .tensor import (
    DenseOperator,
    DensityState,
    HilbertLayout,
    boson_annihilation,
    embed,
    qutrit_lowering,
    qutrit_sz,
    site_sum,
)

DEFAULT_LEVELS = (0.0, 1.0, 1.95)


@dataclass
class ModelParams:
    """Physical parameters of the resonator-qutrits battery.

    Per-mode lists (``omega_r``, ``g``) are broadcast from length one, so a
    two-mode model can be written ``modes=2, g=[1.0]``.  When ``omega_r`` is
    left at its default the k-th mode sits at ``k * omega_r[0]``.  ``cutoff``
    defaults to ``n_photons + 4``.
    """

    N: int = 1
    modes: int = 1
    omega_r: list = field(default_factory=lambda: [1.0])
    omega_levels: tuple = DEFAULT_LEVELS
    g: list = field(default_factory=lambda: [1.0])
    J: float = 0.0
    kappa: float = 0.0
    gamma_rel: tuple = (0.0, 0.0)
    gamma_dep: tuple = (0.0, 0.0)
    n_photons: int = 2
    cutoff: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N must be a positive integer, got {self.N}")
        if self.modes not in (0, 1, 2):
            raise DomainError(f"modes must be 0, 1 or 2, got {self.modes}")
        self.N = int(self.N)
        self.omega_levels = tuple(float(w) for w in self.omega_levels)
        if len(self.omega_levels) != 3:
            raise DomainError("omega_levels needs exactly three entries")
        w0, w1, w2 = self.omega_levels
        if not w0 <= w1 <= w2:
            raise DomainError("qutrit levels must satisfy w0 <= w1 <= w2")
        self.omega_r = _per_mode(self.omega_r, self.modes, "omega_r", harmonic=True)
        self.g = _per_mode(self.g, self.modes, "g")
        self.gamma_rel = tuple(float(x) for x in self.gamma_rel)
        self.gamma_dep = tuple(float(x) for x in self.gamma_dep)
        if len(self.gamma_rel) != 2 or len(self.gamma_dep) != 2:
            raise DomainError("gamma_rel and gamma_dep need two rates each")
        for name, r in [("kappa", self.kappa), *zip(
            ("gamma01", "gamma12", "gamma11", "gamma22"),
            self.gamma_rel + self.gamma_dep,
        )]:
            if r < 0:
                raise DomainError(f"{name} must be non-negative, got {r}")
        if int(self.n_photons) != self.n_photons or self.n_photons < 0:
            raise DomainError("n_photons must be a non-negative integer")
        self.n_photons = int(self.n_photons)
        if self.cutoff is None:
            self.cutoff = self.n_photons + 4
        self.cutoff = int(self.cutoff)
        if self.modes and self.cutoff < self.n_photons + 1:
            raise TruncationError(
                f"cutoff {self.cutoff} cannot hold {self.n_photons} photons"
            )
        if self.modes and self.cutoff < 2:
            raise InvalidDimensionError("cutoff must be >= 2")

    def layout(self) -> HilbertLayout:
        return HilbertLayout.battery(self.N, (self.cutoff,) * self.modes)

    def battery_layout(self) -> HilbertLayout:
        return HilbertLayout.battery(self.N)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega_levels"] = list(self.omega_levels)
        d["gamma_rel"] = list(self.gamma_rel)
        d["gamma_dep"] = list(self.gamma_dep)
        return d


def _per_mode(values, modes, name, harmonic=False):
    if np.isscalar(values):
        values = [values]
    values = [float(v) for v in values]
    if not values:
        raise DomainError(f"{name} must not be empty")
    if len(values) == 1 and modes > 1:
        values = [values[0] * (k if harmonic else 1) for k in range(1, modes + 1)]
    if modes and len(values) != modes:
        raise DomainError(f"{name} needs {modes} entries, got {len(values)}")
    return values[:max(modes, 1)]


@dataclass
class CircuitParams:
    """Lumped-element description of the transmon chain and its resonator."""

    E_C: float
    E_J: float
    C: float
    C_0: float
    C_c: float
    C_r: float
    L_r: float
    N: int = 1


@dataclass
class DriveParams:
    """Two-tone drive of a single qutrit with a linear ramp f(t) = t / tau."""

    Omega_0: float = 0.25
    tau: float = 160.0
    omega_levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        if self.Omega_0 <= 0 or self.tau <= 0:
            raise DomainError("Omega_0 and tau must be positive")
        self.omega_levels = tuple(float(w) for w in self.omega_levels)


def _check_layout(p: ModelParams, layout: HilbertLayout, battery_only_ok=False):
    n_modes = len(layout.mode_slots)
    if len(layout.qutrit_slots) != p.N or (
        n_modes != p.modes and not (battery_only_ok and n_modes == 0)
    ):
        raise InvalidDimensionError(
            f"layout {layout.dims} does not hold {p.modes} mode(s) and {p.N} qutrit(s)"
        )
    for s in layout.mode_slots:
        if layout.dims[s] != p.cutoff:
            raise InvalidDimensionError(
                f"mode slot {s} has dimension {layout.dims[s]}, cutoff is {p.cutoff}"
            )
    if layout.mode_slots and max(layout.mode_slots) > min(layout.qutrit_slots):
        raise InvalidDimensionError("mode slots must precede qutrit slots")


def charge_quadrature(layout: HilbertLayout) -> DenseOperator:
    """Collective sum_i (S_i^- - S_i^+), anti-Hermitian."""
    s = qutrit_lowering()
    return site_sum(s - s.dag(), layout)


def build_battery_hamiltonian(p: ModelParams, layout: HilbertLayout) -> DenseOperator:
    """H_q = sum_i S_i^z - J sum_i (S_i^- - S_i^+)(S_{i+1}^- - S_{i+1}^+).

    ``layout`` may be the full layout (identity on the modes) or the
    battery-only layout.
    """
    _check_layout(p, layout, battery_only_ok=True)
    sz = qutrit_sz(*p.omega_levels)
    h = site_sum(sz, layout).data.copy()
    if p.J:
        s = qutrit_lowering()
        x = s - s.dag()
        q = layout.qutrit_slots
        for i, j in zip(q[:-1], q[1:]):
            # I^2 = -1
            h -= p.J * (embed(x, i, layout).data @ embed(x, j, layout).data)
    return DenseOperator(layout, h)


def build_charging_hamiltonian(p: ModelParams, layout: HilbertLayout) -> DenseOperator:
    """Resonator + battery + i g_k (a_k + a_k^+) sum_i (S_i^- - S_i^+)."""
    _check_layout(p, layout)
    h = build_battery_hamiltonian(p, layout).data.copy()
    xq = charge_quadrature(layout).data
    for k, slot in enumerate(layout.mode_slots):
        a = embed(boson_annihilation(p.cutoff), slot, layout).data
        h += p.omega_r[k] * (a.conj().T @ a)
        if p.g[k]:
            h += 1j * p.g[k] * ((a + a.conj().T) @ xq)
    return DenseOperator(layout, h)


def drive_envelope(t: float, tau: float) -> float:
    """Linear ramp t / tau clamped to [0, 1]."""
    return min(max(t / tau, 0.0), 1.0)


def build_drive_hamiltonian(t: float, d: DriveParams) -> DenseOperator:
    """H_0 + Omega_01(t)|0><1| + Omega_12(t)|1><2| + h.c. with resonant phases.

    The lowering projector |m><n| rotates as exp(-i w_mn t) under H_0, so the
    tone that drives it on resonance carries exp(+i w_mn t).
    """
    if t < 0:
        raise DomainError("drive time must be non-negative")
    w0, w1, w2 = d.omega_levels
    f = drive_envelope(t, d.tau)
    h = np.diag([w0, w1, w2]).astype(complex)
    h[0, 1] = d.Omega_0 * f * np.exp(1j * (w1 - w0) * t)
    h[1, 2] = d.Omega_0 * (1.0 - f) * np.exp(1j * (w2 - w1) * t)
    h[1, 0] = np.conj(h[0, 1])
    h[2, 1] = np.conj(h[1, 2])
    return DenseOperator.single(h)


def map_circuit_parameters(c: CircuitParams, k: int = 1, e: float = 1.0):
    """Transmon frequency, k-th mode frequency, coupling g_k and hopping J.

    Returns ``(omega_q, omega_rk, g_k, J)``.  The coupling capacitance ``C``
    may be zero (isolated transmons, J = 0); everything else must be positive.
    """
    if k < 1 or int(k) != k:
        raise DomainError(f"mode index must be a positive integer, got {k}")
    for name in ("E_C", "E_J", "C_0", "C_c", "C_r", "L_r", "N"):
        if getattr(c, name) <= 0:
            raise DomainError(f"{name} must be positive")
    if c.C < 0:
        raise DomainError("C must be non-negative")
    if e <= 0:
        raise DomainError("unit charge must be positive")
    omega_q = math.sqrt(16.0 * c.E_C * c.E_J)
    beta = c.C / (c.C_0 + c.C)
    c_tot = c.C_r + c.N * c.C_c
    omega_rk = k * math.pi / math.sqrt(c.L_r * c_tot)
    g_k = math.sqrt(omega_q * omega_rk * c.E_C * c.C_c ** 2 / (e ** 2 * c_tot))
    return omega_q, omega_rk, g_k, omega_q * beta / 2.0


def initial_charging_state(p: ModelParams, layout: HilbertLayout) -> DensityState:
    """|0...0> on the qutrits times Fock |n_photons> on every mode."""
    _check_layout(p, layout)
    if p.modes and p.n_photons >= p.cutoff:
        raise TruncationError(f"{p.n_photons} photons do not fit cutoff {p.cutoff}")
    levels = [p.n_photons if lab == "mode" else 0 for lab in layout.labels]
    idx = layout.flatten(levels)
    rho = np.zeros((layout.total, layout.total), dtype=complex)
    rho[idx, idx] = 1.0
    return DensityState(DenseOperator(layout, rho))


def excited_battery_state(p: ModelParams, level: int = 2) -> DensityState:
    """Every qutrit in ``level`` on the battery-only layout."""
    layout = p.battery_layout()
    idx = layout.flatten([level] * p.N)
    rho = np.zeros((layout.total, layout.total), dtype=complex)
    rho[idx, idx] = 1.0
    return DensityState(DenseOperator(layout, rho))


def levels_from_gap_ratio(ratio: float, omega_levels: Sequence[float] = DEFAULT_LEVELS):
    """Keep w0 and w2 fixed and place w1 so that (w1 - w0) / (w2 - w1) = ratio.

    Holding the total gap w02 fixed isolates the relative position of the
    middle level from the overall energy scale of the battery.
    """
    if ratio <= 0:
        raise DomainError("gap ratio must be positive")
    w0, _, w2 = omega_levels
    if w2 <= w0:
        raise DomainError("gap ratio needs w2 > w0")
    return (w0, w0 + (w2 - w0) * ratio / (1.0 + ratio), w2)
