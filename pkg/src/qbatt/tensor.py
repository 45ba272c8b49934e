"""Operators on composite resonator-mode x qutrit Hilbert spaces.

Subsystems are ordered modes first, then qutrit sites 1..N, and composite
indices are row-major over that ordering (the convention used by
``numpy.kron``).  Every module in the package relies on this ordering.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InvalidDimensionError

MODE = "mode"
QUTRIT = "qutrit"

#: max-abs entry of rho - rho^dagger tolerated by default
HERMITIAN_TOL = 1e-9
#: smallest admissible eigenvalue is -POSITIVITY_TOL
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered subsystem dimensions with a role tag per slot."""

    dims: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        labels = tuple(self.labels) if self.labels else tuple(
            QUTRIT if d == 3 else MODE for d in dims
        )
        if not dims:
            raise InvalidDimensionError("layout needs at least one slot")
        if len(labels) != len(dims):
            raise InvalidDimensionError("one label per slot is required")
        for d, lab in zip(dims, labels):
            if lab not in (MODE, QUTRIT):
                raise DomainError(f"unknown slot label {lab!r}")
            if d < 2:
                raise InvalidDimensionError(f"slot dimension {d} < 2")
            if lab == QUTRIT and d != 3:
                raise InvalidDimensionError("qutrit slots must have dimension 3")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def battery(cls, n_qutrits: int, cutoffs: Sequence[int] = ()) -> "HilbertLayout":
        """Layout with one mode slot per entry of ``cutoffs`` followed by qutrits."""
        if n_qutrits < 1:
            raise DomainError("need at least one qutrit")
        dims = tuple(cutoffs) + (3,) * n_qutrits
        labels = (MODE,) * len(cutoffs) + (QUTRIT,) * n_qutrits
        return cls(dims, labels)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def mode_slots(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.labels) if lab == MODE)

    @property
    def qutrit_slots(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.labels) if lab == QUTRIT)

    def sub(self, slots: Iterable[int]) -> "HilbertLayout":
        slots = sorted(set(slots))
        return HilbertLayout(
            tuple(self.dims[s] for s in slots), tuple(self.labels[s] for s in slots)
        )

    def flatten(self, multi_index: Sequence[int]) -> int:
        if len(multi_index) != len(self.dims):
            raise InvalidDimensionError("multi-index length does not match layout")
        return int(np.ravel_multi_index(tuple(multi_index), self.dims))

    def unflatten(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(index), self.dims))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Square complex matrix acting on ``layout``."""

    layout: HilbertLayout
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        d = self.layout.total
        if data.shape != (d, d):
            raise InvalidDimensionError(
                f"operator shape {data.shape} does not match layout dimension {d}"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def single(cls, matrix, label: str | None = None) -> "DenseOperator":
        """Wrap a matrix acting on one subsystem."""
        matrix = np.asarray(matrix, dtype=complex)
        d = matrix.shape[0]
        label = label or (QUTRIT if d == 3 else MODE)
        return cls(HilbertLayout((d,), (label,)), matrix)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.layout, self.data.conj().T)

    def hermitian_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def _check(self, other: "DenseOperator"):
        if other.layout.dims != self.layout.dims:
            raise InvalidDimensionError(
                f"layouts differ: {self.layout.dims} vs {other.layout.dims}"
            )

    def __matmul__(self, other):
        if isinstance(other, DenseOperator):
            self._check(other)
            return DenseOperator(self.layout, self.data @ other.data)
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, DenseOperator):
            self._check(other)
            return DenseOperator(self.layout, self.data + other.data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, DenseOperator):
            self._check(other)
            return DenseOperator(self.layout, self.data - other.data)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return DenseOperator(self.layout, scalar * self.data)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return DenseOperator(self.layout, -self.data)


@dataclass(frozen=True, eq=False)
class DensityState:
    """A density matrix: Hermitian, unit trace and positive within ``tolerance``."""

    op: DenseOperator
    tolerance: float = POSITIVITY_TOL

    def __post_init__(self):
        if self.tolerance < 0:
            raise DomainError("tolerance must be non-negative")
        rho = self.op.data
        tr_err = abs(np.trace(rho) - 1.0)
        if tr_err > self.tolerance:
            raise DomainError(f"trace deviates from 1 by {tr_err:.3e}")
        herm = self.op.hermitian_error()
        if herm > self.tolerance:
            raise DomainError(f"not Hermitian: max |rho - rho^+| = {herm:.3e}")
        lam = min_eigenvalue(rho)
        if lam < -self.tolerance:
            raise DomainError(f"not positive: minimum eigenvalue {lam:.3e}")

    @classmethod
    def from_matrix(cls, layout: HilbertLayout, matrix, tolerance=POSITIVITY_TOL):
        return cls(DenseOperator(layout, matrix), tolerance)

    @classmethod
    def from_ket(cls, layout: HilbertLayout, ket, tolerance=POSITIVITY_TOL):
        ket = np.asarray(ket, dtype=complex).ravel()
        ket = ket / np.linalg.norm(ket)
        return cls(DenseOperator(layout, np.outer(ket, ket.conj())), tolerance)

    @property
    def layout(self) -> HilbertLayout:
        return self.op.layout

    @property
    def data(self) -> np.ndarray:
        return self.op.data

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.data, self.data)))


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian part of ``matrix``."""
    herm = 0.5 * (matrix + matrix.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def basis_ket(layout: HilbertLayout, levels: Sequence[int]) -> np.ndarray:
    """Computational basis column vector for the per-slot ``levels``."""
    ket = np.zeros(layout.total, dtype=complex)
    ket[layout.flatten(levels)] = 1.0
    return ket


def identity(layout: HilbertLayout) -> DenseOperator:
    return DenseOperator(layout, np.eye(layout.total))


# elementary single-subsystem operators ------------------------------------


def qutrit_lowering() -> DenseOperator:
    """Truncated transmon ladder |0><1| + sqrt(2)|1><2|."""
    s = np.zeros((3, 3), dtype=complex)
    s[0, 1] = 1.0
    s[1, 2] = np.sqrt(2.0)
    return DenseOperator.single(s, QUTRIT)


def qutrit_raising() -> DenseOperator:
    return qutrit_lowering().dag()


def qutrit_sz(w0: float, w1: float, w2: float) -> DenseOperator:
    """Bare qutrit energies diag(w0, w1, w2)."""
    return DenseOperator.single(np.diag([w0, w1, w2]).astype(complex), QUTRIT)


def qutrit_transition(m: int, n: int) -> DenseOperator:
    """Single-site |m><n|."""
    if m not in (0, 1, 2) or n not in (0, 1, 2):
        raise DomainError(f"qutrit levels must be 0, 1 or 2, got ({m}, {n})")
    s = np.zeros((3, 3), dtype=complex)
    s[m, n] = 1.0
    return DenseOperator.single(s, QUTRIT)


def boson_annihilation(cutoff: int) -> DenseOperator:
    """Annihilation operator truncated to Fock states 0..cutoff-1."""
    if int(cutoff) != cutoff or cutoff < 2:
        raise InvalidDimensionError(f"cutoff must be an integer >= 2, got {cutoff}")
    cutoff = int(cutoff)
    a = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)
    return DenseOperator.single(a, MODE)


# composite-space construction ---------------------------------------------


def embed(op: DenseOperator, slot: int, layout: HilbertLayout) -> DenseOperator:
    """Place a single-subsystem operator at ``slot``; identity elsewhere."""
    if not 0 <= slot < len(layout):
        raise InvalidDimensionError(f"slot {slot} outside layout of {len(layout)} slots")
    mat = op.data if isinstance(op, DenseOperator) else np.asarray(op, dtype=complex)
    if mat.shape != (layout.dims[slot], layout.dims[slot]):
        raise InvalidDimensionError(
            f"operator of shape {mat.shape} cannot act on slot of dimension "
            f"{layout.dims[slot]}"
        )
    left = int(np.prod(layout.dims[:slot]))
    right = int(np.prod(layout.dims[slot + 1:]))
    out = np.kron(np.kron(np.eye(left), mat), np.eye(right))
    return DenseOperator(layout, out)


def site_sum(op: DenseOperator, layout: HilbertLayout) -> DenseOperator:
    """Sum of ``op`` embedded on every qutrit slot."""
    slots = layout.qutrit_slots
    if not slots:
        raise DomainError("layout has no qutrit slots")
    total = np.zeros((layout.total, layout.total), dtype=complex)
    for s in slots:
        total += embed(op, s, layout).data
    return DenseOperator(layout, total)


def collective_transition(m: int, n: int, layout: HilbertLayout) -> DenseOperator:
    """Collective operator S_mn = sum_i |m><n|_i over all qutrit sites."""
    return site_sum(qutrit_transition(m, n), layout)


# traces and expectations --------------------------------------------------


def _matrix(x) -> np.ndarray:
    if isinstance(x, DensityState):
        return x.op.data
    if isinstance(x, DenseOperator):
        return x.data
    return np.asarray(x, dtype=complex)


def _layout(x) -> HilbertLayout:
    return x.layout


def expectation(state, obs) -> complex:
    """Tr(obs . rho)."""
    if _layout(state).dims != _layout(obs).dims:
        raise InvalidDimensionError(
            f"state layout {_layout(state).dims} vs observable {_layout(obs).dims}"
        )
    return complex(np.einsum("ij,ji->", _matrix(obs), _matrix(state)))


def _check_slots(slots, layout: HilbertLayout) -> list[int]:
    slots = sorted(set(int(s) for s in slots))
    for s in slots:
        if not 0 <= s < len(layout):
            raise DomainError(f"slot {s} outside layout of {len(layout)} slots")
    return slots


def partial_trace_matrix(rho: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Reduced matrix on ``keep`` (sorted slot order) for a raw array."""
    n = len(dims)
    keep = sorted(set(keep))
    letters = string.ascii_letters
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for s in range(n):
        if s not in keep:
            col[s] = row[s]
    out = "".join(row[s] for s in keep) + "".join(col[s] for s in keep)
    expr = "".join(row) + "".join(col) + "->" + out
    reduced = np.einsum(expr, rho.reshape(tuple(dims) * 2))
    d = int(np.prod([dims[s] for s in keep]))
    return reduced.reshape(d, d)


def partial_trace(state, keep) -> DensityState:
    """Trace out every slot not listed in ``keep``."""
    layout = _layout(state)
    if not keep:
        raise DomainError("keep set must not be empty")
    keep = _check_slots(keep, layout)
    red = partial_trace_matrix(_matrix(state), layout.dims, keep)
    tol = state.tolerance if isinstance(state, DensityState) else POSITIVITY_TOL
    return DensityState(DenseOperator(layout.sub(keep), red), tol)


def partial_transpose_matrix(rho: np.ndarray, dims: Sequence[int], slots) -> np.ndarray:
    n = len(dims)
    axes = list(range(2 * n))
    for s in slots:
        axes[s], axes[n + s] = axes[n + s], axes[s]
    d = rho.shape[0]
    return rho.reshape(tuple(dims) * 2).transpose(axes).reshape(d, d)


def partial_transpose(state, subsystem) -> DenseOperator:
    """Transpose the row/column indices of the slots in ``subsystem`` only."""
    layout = _layout(state)
    slots = _check_slots(subsystem, layout)
    return DenseOperator(
        layout, partial_transpose_matrix(_matrix(state), layout.dims, slots)
    )


def trace_norm(op, tol: float = HERMITIAN_TOL) -> float:
    """Sum of absolute eigenvalues of a Hermitian operator."""
    mat = _matrix(op)
    err = float(np.max(np.abs(mat - mat.conj().T)))
    if err > tol:
        raise DomainError(f"trace norm needs a Hermitian operator (error {err:.3e})")
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T)))))
