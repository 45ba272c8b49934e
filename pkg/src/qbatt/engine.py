"""Lindblad evolution of charging and self-discharging batteries.

The generator is written as

    drho/dt = i[rho, H] + sum_k rate_k (L_k rho L_k^+ - 1/2 {L_k^+ L_k, rho})

with collective jump operators S_mn = sum_i |m><n|_i.  Operators enter as
dense matrices; :class:`LindbladGenerator` stores sparse or diagonal copies
of them internally because the jump operators and Hamiltonians of this model
have only O(D) non-zeros, which makes every product O(D^2) instead of O(D^3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InsufficientDataError, IntegrationError, InvalidDimensionError
from .tensor import (
    HERMITIAN_TOL,
    POSITIVITY_TOL,
    DenseOperator,
    DensityState,
    HilbertLayout,
    boson_annihilation,
    collective_transition,
    embed,
    min_eigenvalue,
    qutrit_transition,
)

RESONATOR_DECAY = "resonator-decay"
RELAXATION = "relaxation"
DEPHASING = "dephasing"
COLLECTIVE = "collective"
LOCAL = "local"

FIXED_RK4 = "fixed-rk4"
ADAPTIVE = "adaptive-embedded"

TRACE_TOL = 1e-9
#: a diagnostic beyond this multiple of its tolerance is flagged in the record
BREACH_FACTOR = 10.0


@dataclass(frozen=True)
class DissipatorSpec:
    """One environmental channel.

    ``rates`` is ``(kappa,)`` for resonator decay, ``(gamma01, gamma12)`` for
    relaxation and ``(gamma11, gamma22)`` for dephasing.
    """

    kind: str
    rates: tuple
    scope: str = COLLECTIVE

    def __post_init__(self):
        if self.kind not in (RESONATOR_DECAY, RELAXATION, DEPHASING):
            raise DomainError(f"unknown dissipator kind {self.kind!r}")
        if self.scope not in (COLLECTIVE, LOCAL):
            raise DomainError(f"unknown dissipator scope {self.scope!r}")
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        expected = 1 if self.kind == RESONATOR_DECAY else 2
        if len(rates) != expected:
            raise DomainError(f"{self.kind} takes {expected} rate(s), got {len(rates)}")
        if any(r < 0 for r in rates):
            raise DomainError("dissipation rates must be non-negative")
        object.__setattr__(self, "rates", rates)


def dissipators_from_params(p, include_resonator: bool = True, scope: str = COLLECTIVE):
    """The three channels of a :class:`~qbatt.model.ModelParams`."""
    specs = []
    if include_resonator and p.modes:
        specs.append(DissipatorSpec(RESONATOR_DECAY, (p.kappa,)))
    specs.append(DissipatorSpec(RELAXATION, p.gamma_rel, scope))
    specs.append(DissipatorSpec(DEPHASING, p.gamma_dep, scope))
    return specs


def jump_operators(spec: DissipatorSpec, layout: HilbertLayout):
    """List of ``(rate, DenseOperator)`` pairs realizing ``spec`` on ``layout``.

    Relaxation uses |m-1><m| with rate gamma01 (m=1) and gamma12 (m=2);
    dephasing uses the projector |m><m| with gamma11 and gamma22.  Zero-rate
    channels are dropped.
    """
    out = []
    if spec.kind == RESONATOR_DECAY:
        if spec.rates[0] == 0:
            return out
        if not layout.mode_slots:
            raise InvalidDimensionError("resonator decay needs a mode slot")
        for s in layout.mode_slots:
            a = boson_annihilation(layout.dims[s])
            out.append((spec.rates[0], embed(a, s, layout)))
        return out
    if not layout.qutrit_slots:
        raise InvalidDimensionError(f"{spec.kind} needs qutrit slots")
    if spec.kind == RELAXATION:
        pairs = [(0, 1), (1, 2)]
    else:
        pairs = [(1, 1), (2, 2)]
    for rate, (m, n) in zip(spec.rates, pairs):
        if rate == 0:
            continue
        if spec.scope == COLLECTIVE:
            out.append((rate, collective_transition(m, n, layout)))
        else:
            for s in layout.qutrit_slots:
                out.append((rate, embed(qutrit_transition(m, n), s, layout)))
    return out


def dissipator_apply(L: DenseOperator, rate: float, rho: DenseOperator) -> DenseOperator:
    """rate * (L rho L^+ - 1/2 {L^+ L, rho})."""
    if L.layout.dims != rho.layout.dims:
        raise InvalidDimensionError(f"layouts differ: {L.layout.dims} vs {rho.layout.dims}")
    if rate < 0:
        raise DomainError("rate must be non-negative")
    l, r = L.data, rho.data
    ldl = l.conj().T @ l
    out = l @ r @ l.conj().T - 0.5 * (ldl @ r + r @ ldl)
    return DenseOperator(rho.layout, rate * out)


# kernel --------------------------------------------------------------------


@numba.njit(cache=True)
def _lindblad_kernel(rho, hp, hi, hv, jp, ji, jv, jr, out):
    """out = -i Heff rho + i rho Heff^+ + sum_m r_m L_m rho L_m^+ (CSR operands).

    Jump operator m occupies ``jp[m*(D+1):(m+1)*(D+1)]`` (absolute offsets
    into ``ji``/``jv``).
    """
    d = rho.shape[0]
    tmp = np.empty(d, dtype=np.complex128)
    for i in range(d):
        row = out[i]
        row[:] = 0
        for q in range(hp[i], hp[i + 1]):
            k = hi[q]
            v = -1j * hv[q]
            for j in range(d):
                row[j] += v * rho[k, j]
        for j in range(d):
            acc = 0j
            for q in range(hp[j], hp[j + 1]):
                acc += rho[i, hi[q]] * np.conj(hv[q])
            row[j] += 1j * acc
        for m in range(jr.shape[0]):
            base = m * (d + 1)
            lo = jp[base + i]
            hi_ = jp[base + i + 1]
            if lo == hi_:
                continue
            tmp[:] = 0
            for q in range(lo, hi_):
                k = ji[q]
                v = jv[q]
                for j in range(d):
                    tmp[j] += v * rho[k, j]
            r = jr[m]
            for j in range(d):
                acc = 0j
                for q in range(jp[base + j], jp[base + j + 1]):
                    acc += tmp[ji[q]] * np.conj(jv[q])
                row[j] += r * acc
    return out


@numba.njit(cache=True, fastmath=True)
def _hermitian_block_kernel(rho, lo, hi, hp, hi_idx, hv, jp, ji, jv, jr, out):
    """Same generator for a Hermitian, block-diagonal rho in sector-sorted order.

    Row ``i`` only couples to columns ``lo[i]:hi[i]`` (its sector).  Only the
    upper triangle of each diagonal block is computed; the lower triangle is
    filled by conjugation and the off-block entries stay zero.
    """
    d = rho.shape[0]
    tmp = np.zeros(d, dtype=np.complex128)
    out[:, :] = 0
    for i in range(d):
        row = out[i]
        b = hi[i]
        for q in range(hp[i], hp[i + 1]):
            k = hi_idx[q]
            v = -1j * hv[q]
            for j in range(i, b):
                row[j] += v * rho[k, j]
        for j in range(i, b):
            acc = 0j
            for q in range(hp[j], hp[j + 1]):
                acc += rho[i, hi_idx[q]] * np.conj(hv[q])
            row[j] += 1j * acc
        for m in range(jr.shape[0]):
            base = m * (d + 1)
            s0 = jp[base + i]
            s1 = jp[base + i + 1]
            if s0 == s1:
                continue
            for q in range(s0, s1):
                k = ji[q]
                v = jv[q]
                for l in range(lo[k], hi[k]):
                    tmp[l] += v * rho[k, l]
            r = jr[m]
            for j in range(i, b):
                acc = 0j
                for q in range(jp[base + j], jp[base + j + 1]):
                    acc += tmp[ji[q]] * np.conj(jv[q])
                row[j] += r * acc
            for q in range(s0, s1):
                k = ji[q]
                for l in range(lo[k], hi[k]):
                    tmp[l] = 0
        for j in range(i + 1, b):
            out[j, i] = np.conj(row[j])
    return out


def _sector_labels(patterns, jumps, d):
    """Connected components that keep rho block-diagonal under the generator.

    ``patterns`` are matrices whose non-zeros couple two basis states (the
    effective Hamiltonian and the initial state).  Components are merged until
    every jump operator maps each component into a single component.
    """
    from scipy.sparse.csgraph import connected_components

    graph = sp.csr_matrix((d, d), dtype=bool)
    for m in patterns:
        graph = graph + sp.csr_matrix(m != 0)
    while True:
        n, labels = connected_components(graph, directed=False)
        rows, cols = [], []
        for L in jumps:
            coo = sp.coo_matrix(L)
            first = {}
            for i, k in zip(coo.row, coo.col):
                c = labels[k]
                if c in first:
                    if labels[first[c]] != labels[i]:
                        rows.append(first[c])
                        cols.append(i)
                else:
                    first[c] = i
        if not rows:
            return labels
        extra = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(d, d))
        graph = graph + extra


def _site_symmetry(layout: HilbertLayout, mats, rho0, max_sites: int = 4):
    """Orbits of the qutrit-site permutations that leave every operator invariant.

    Returns ``(orbit, weight)`` with ``orbit[x]`` the orbit of basis state
    ``x`` and ``weight[x] = 1/sqrt(|orbit|)``, or None when the only symmetry
    is the identity or ``rho0`` is not supported on the invariant subspace.
    Only permutations of at most ``max_sites`` sites are tried (all of them),
    beyond that only the reflection of the chain.
    """
    from itertools import permutations

    from scipy.sparse.csgraph import connected_components

    q = list(layout.qutrit_slots)
    if len(q) < 2:
        return None
    d = layout.total
    digits = np.array(np.unravel_index(np.arange(d), layout.dims))
    if len(q) <= max_sites:
        candidates = [p for p in permutations(q) if list(p) != q]
    else:
        candidates = [tuple(reversed(q))]
    kept = []
    for cand in candidates:
        moved = digits.copy()
        moved[q] = digits[list(cand)]
        perm = np.ravel_multi_index(tuple(moved), layout.dims)
        if all(_commutes(m, perm) for m in mats):
            kept.append(perm)
    if not kept:
        return None
    rows = np.concatenate([np.arange(d)] * len(kept))
    cols = np.concatenate(kept)
    graph = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(d, d))
    _, orbit = connected_components(graph, directed=False)
    sizes = np.bincount(orbit)
    weight = 1.0 / np.sqrt(sizes[orbit])
    q_mat = sp.csr_matrix((weight, (np.arange(d), orbit)), shape=(d, len(sizes)))
    reduced = q_mat.T @ sp.csr_matrix(rho0) @ q_mat
    back = (q_mat @ reduced @ q_mat.T).toarray()
    if np.max(np.abs(back - rho0)) > 1e-12:
        return None
    return orbit, weight


def _commutes(mat, perm) -> bool:
    m = sp.csr_matrix(mat)
    diff = m[perm][:, perm] - m
    scale = max(1.0, float(abs(m).max())) if m.nnz else 1.0
    return diff.nnz == 0 or float(abs(diff).max()) <= 1e-12 * scale


class SectorPropagator:
    """Fast right-hand side for Hermitian states in a reduced, sector-sorted basis.

    Two reductions are applied when the generator allows them.  Site
    permutations that commute with H and every jump and fix ``rho0`` confine
    the state to the span of orbit sums.  Within that span the basis is sorted
    into sectors that the generator keeps block-diagonal.  ``to_internal`` and
    ``to_external`` convert between the full and the reduced representation.
    """

    def __init__(self, generator: "LindbladGenerator", rho0: np.ndarray, reduce: bool = True):
        layout = generator.layout
        d = layout.total
        hp, hi, hv = generator.effective_hamiltonian(0.0)
        heff = sp.csr_matrix((hv, hi, hp), shape=(d, d))
        jumps = [sp.csr_matrix(L) for L in generator.jump_matrices]
        sym = _site_symmetry(layout, [heff, *jumps], rho0) if reduce else None
        if sym is not None:
            orbit, weight = sym
            n = int(orbit.max()) + 1
            q_mat = sp.csr_matrix((weight, (np.arange(d), orbit)), shape=(d, n))
            heff = (q_mat.T @ heff @ q_mat).tocsr()
            jumps = [(q_mat.T @ L @ q_mat).tocsr() for L in jumps]
            self._orbit, self._weight, self._q = orbit, weight, q_mat
            rho_r = (q_mat.T @ sp.csr_matrix(rho0) @ q_mat).toarray()
        else:
            n = d
            self._orbit = self._weight = self._q = None
            rho_r = rho0
        self.full_dim = d
        self.dim = n
        labels = _sector_labels([heff, rho_r], jumps, n)
        self.perm = np.argsort(labels, kind="stable")
        self.inverse = np.argsort(self.perm)
        sorted_labels = labels[self.perm]
        self.lo = np.searchsorted(sorted_labels, sorted_labels, side="left").astype(np.int64)
        self.hi = np.searchsorted(sorted_labels, sorted_labels, side="right").astype(np.int64)
        self.n_sectors = int(sorted_labels.max()) + 1 if n else 0
        p = self.perm
        self._heff = _csr(heff.toarray()[np.ix_(p, p)])
        ptrs, idx, vals = [], [], []
        offset = 0
        for L in jumps:
            cp, ci, cv = _csr(L.toarray()[np.ix_(p, p)])
            ptrs.append(cp + offset)
            idx.append(ci)
            vals.append(cv)
            offset += len(cv)
        self._jp = np.concatenate(ptrs) if ptrs else np.zeros(0, dtype=np.int64)
        self._ji = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        self._jv = np.concatenate(vals) if vals else np.zeros(0, dtype=np.complex128)
        self._jr = generator._jr

    @property
    def reduced(self) -> bool:
        """True when the state lives on a proper subspace (so rho has exact zeros)."""
        return self.dim < self.full_dim

    def to_internal(self, rho: np.ndarray) -> np.ndarray:
        if self._q is not None:
            rho = (self._q.T @ sp.csr_matrix(rho) @ self._q).toarray()
        return np.ascontiguousarray(rho[np.ix_(self.perm, self.perm)], dtype=np.complex128)

    def to_external(self, rho: np.ndarray) -> np.ndarray:
        rho = rho[np.ix_(self.inverse, self.inverse)]
        if self._q is not None:
            o, w = self._orbit, self._weight
            rho = rho[np.ix_(o, o)] * np.outer(w, w)
        return np.ascontiguousarray(rho)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        out = np.empty_like(rho)
        return self.into(rho, out)

    def kernel_args(self):
        hp, hi, hv = self._heff
        return (self.lo, self.hi, hp, hi, hv, self._jp, self._ji, self._jv, self._jr)

    def into(self, rho: np.ndarray, out: np.ndarray) -> np.ndarray:
        hp, hi, hv = self._heff
        return _hermitian_block_kernel(
            rho, self.lo, self.hi, hp, hi, hv, self._jp, self._ji, self._jv, self._jr, out
        )


def _csr(mat: np.ndarray):
    m = sp.csr_matrix(np.asarray(mat, dtype=complex))
    m.sort_indices()
    return (
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.complex128),
    )


class LindbladGenerator:
    """Callable ``(t, rho) -> drho/dt`` for a fixed set of jump operators.

    ``hamiltonian`` is either a matrix or a callable ``t -> matrix`` (used by
    the driven-qutrit model).  The map is linear over arbitrary complex
    matrices; Hermiticity of rho is not assumed.
    """

    def __init__(self, hamiltonian, jumps: Sequence[tuple], layout: HilbertLayout):
        self.layout = layout
        d = layout.total
        decay = np.zeros((d, d), dtype=complex)
        self.jump_matrices = []
        ptrs, idx, vals, rates = [], [], [], []
        offset = 0
        for rate, L in jumps:
            mat = L.data if isinstance(L, DenseOperator) else np.asarray(L, dtype=complex)
            if mat.shape != (d, d):
                raise InvalidDimensionError("jump operator does not match layout")
            if rate < 0:
                raise DomainError("rate must be non-negative")
            if rate == 0:
                continue
            decay += rate * (mat.conj().T @ mat)
            self.jump_matrices.append(mat)
            p, i, v = _csr(mat)
            ptrs.append(p + offset)
            idx.append(i)
            vals.append(v)
            rates.append(float(rate))
            offset += len(v)
        self.n_jumps = len(rates)
        self._jp = np.concatenate(ptrs) if ptrs else np.zeros(0, dtype=np.int64)
        self._ji = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        self._jv = np.concatenate(vals) if vals else np.zeros(0, dtype=np.complex128)
        self._jr = np.asarray(rates, dtype=float)
        self._decay = decay
        if callable(hamiltonian):
            self._h_of_t = hamiltonian
            self._heff = None
        else:
            h = hamiltonian.data if isinstance(hamiltonian, DenseOperator) else hamiltonian
            h = np.asarray(h, dtype=complex)
            if h.shape != (d, d):
                raise InvalidDimensionError("Hamiltonian does not match layout")
            self._h_of_t = None
            self._heff = _csr(h - 0.5j * decay)

    def effective_hamiltonian(self, t: float):
        """CSR triple of H(t) - i/2 sum_k r_k L_k^+ L_k."""
        if self._heff is not None:
            return self._heff
        h = self._h_of_t(t)
        h = h.data if isinstance(h, DenseOperator) else np.asarray(h, dtype=complex)
        return _csr(h - 0.5j * self._decay)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        hp, hi, hv = self.effective_hamiltonian(t)
        rho = np.ascontiguousarray(rho, dtype=np.complex128)
        out = np.empty_like(rho)
        return _lindblad_kernel(rho, hp, hi, hv, self._jp, self._ji, self._jv, self._jr, out)

    def sector_propagator(self, rho0: np.ndarray) -> SectorPropagator | None:
        """Block-restricted Hermitian right-hand side, or None for a time-dependent H."""
        if self._h_of_t is not None:
            return None
        return SectorPropagator(self, rho0)


def _hamiltonian_layout(H) -> HilbertLayout:
    if isinstance(H, DenseOperator):
        return H.layout
    raise InvalidDimensionError("Hamiltonian must be a DenseOperator")


def charging_generator(H, dissipators: Iterable[DissipatorSpec], layout=None):
    """Generator of the charging master equation for ``H`` (operator or t -> operator)."""
    if layout is None:
        layout = _hamiltonian_layout(H)
    jumps = [j for spec in dissipators for j in jump_operators(spec, layout)]
    return LindbladGenerator(H, jumps, layout)


def self_discharge_generator(H_q, dissipators: Iterable[DissipatorSpec]):
    """Generator on the battery-only layout; resonator channels are rejected."""
    layout = _hamiltonian_layout(H_q)
    if layout.mode_slots:
        raise InvalidDimensionError("self-discharge acts on the battery-only layout")
    dissipators = list(dissipators)
    for spec in dissipators:
        if spec.kind == RESONATOR_DECAY:
            raise DomainError("self-discharge has no resonator channel")
    return charging_generator(H_q, dissipators, layout)


def charging_rhs(rho, t: float, H, dissipators) -> DenseOperator:
    """i[rho, H] plus every dissipator, evaluated once."""
    H_t = H(t) if callable(H) else H
    if rho.layout.dims != H_t.layout.dims:
        raise InvalidDimensionError(f"layouts differ: {rho.layout.dims} vs {H_t.layout.dims}")
    gen = charging_generator(H_t, dissipators)
    return DenseOperator(rho.layout, gen(t, _data(rho)))


def self_discharge_rhs(rho, H_q, dissipators) -> DenseOperator:
    if rho.layout.dims != H_q.layout.dims:
        raise InvalidDimensionError(f"layouts differ: {rho.layout.dims} vs {H_q.layout.dims}")
    gen = self_discharge_generator(H_q, dissipators)
    return DenseOperator(rho.layout, gen(0.0, _data(rho)))


def _data(x):
    if isinstance(x, DensityState):
        return x.op.data
    if isinstance(x, DenseOperator):
        return x.data
    return np.asarray(x, dtype=complex)


# integration ---------------------------------------------------------------


@dataclass
class IntegratorConfig:
    """Step control and sampling of :func:`integrate`.

    Samples are taken every ``record_every * dt`` time units for both
    methods; the adaptive stepper shortens steps to land on sample times.
    """

    method: str = ADAPTIVE
    dt: float = 1e-2
    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    t_end: float = 20.0
    record_every: int = 10
    hermitize: bool = True
    store_states: bool = False
    min_step: float = 1e-12
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in (FIXED_RK4, ADAPTIVE):
            raise DomainError(f"unknown integration method {self.method!r}")
        if self.dt <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0:
            raise DomainError("dt and tolerances must be positive")
        if self.t_end < 0:
            raise DomainError("t_end must be non-negative")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise DomainError("record_every must be a positive integer")
        self.record_every = int(self.record_every)

    @property
    def sample_interval(self) -> float:
        return self.record_every * self.dt


@dataclass
class TrajectoryRecord:
    """Sampled time series of observables and state diagnostics."""

    times: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    diagnostics: dict = field(
        default_factory=lambda: {"trace_err": [], "herm_err": [], "min_eig": []}
    )
    states: list | None = None
    flags: list = field(default_factory=list)
    steps: int = 0
    rhs_evals: int = 0
    failed: bool = False
    final_state: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        if name in self.samples:
            return np.asarray(self.samples[name])
        return np.asarray(self.diagnostics[name])

    def append(self, t, values: dict, diag: dict, state=None):
        self.times.append(float(t))
        for k, v in values.items():
            self.samples.setdefault(k, []).append(v)
        for k, v in diag.items():
            self.diagnostics[k].append(v)
        if self.states is not None and state is not None:
            self.states.append(state.copy())


Observer = Callable[[float, np.ndarray], dict]


def _sample_times(t0: float, t_end: float, interval: float) -> np.ndarray:
    n = int(math.floor((t_end - t0) / interval + 1e-9))
    times = t0 + interval * np.arange(n + 1)
    if t_end - times[-1] > 1e-12 * max(1.0, abs(t_end)):
        times = np.append(times, t_end)
    return times


# Fused stage arithmetic.  ``lo[i]:hi[i]`` is the column range of row i that
# can be non-zero; entries outside it are never written and stay zero.


@numba.njit(cache=True, fastmath=True)
def _stage(y, ks, n, coef, lo, hi, out):
    """out = y + sum_{m<n} coef[m] ks[m]."""
    for i in range(y.shape[0]):
        for j in range(lo[i], hi[i]):
            acc = y[i, j]
            for m in range(n):
                c = coef[m]
                if c != 0.0:
                    acc += c * ks[m, i, j]
            out[i, j] = acc


@numba.njit(cache=True)
def _error_norm(y, y_new, ks, ecoef, atol, rtol, lo, hi):
    """max_ij |sum_m ecoef[m] ks[m]| / (atol + rtol max(|y|, |y_new|))."""
    worst = 0.0
    for i in range(y.shape[0]):
        for j in range(lo[i], hi[i]):
            e = 0j
            for m in range(ks.shape[0]):
                c = ecoef[m]
                if c != 0.0:
                    e += c * ks[m, i, j]
            a = y[i, j]
            b = y_new[i, j]
            mag = max(a.real * a.real + a.imag * a.imag, b.real * b.real + b.imag * b.imag)
            sc = atol + rtol * np.sqrt(mag)
            r = (e.real * e.real + e.imag * e.imag) / (sc * sc)
            if r > worst:
                worst = r
    return np.sqrt(worst)


@numba.njit(cache=True)
def _hermitize(y, lo, hi, apply):
    """Largest |y - y^+| entry; symmetrize in place when ``apply``."""
    worst = 0.0
    for i in range(y.shape[0]):
        for j in range(max(i, lo[i]), hi[i]):
            a = y[i, j]
            b = y[j, i]
            r = abs(a - np.conj(b))
            if r > worst:
                worst = r
            if apply:
                m = 0.5 * (a + np.conj(b))
                y[i, j] = m
                y[j, i] = np.conj(m)
    return worst


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
_A_PAD = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_PAD[_i, :len(_row)] = _row


@numba.njit(cache=True)
def _copy_blocks(src, dst, lo, hi):
    for i in range(src.shape[0]):
        for j in range(lo[i], hi[i]):
            dst[i, j] = src[i, j]


@numba.njit(cache=True)
def _dopri_segment(y, spare, tmp, ks, t, t_next, h, atol, rtol, a_pad, c, e, hermitize,
                   min_step, max_steps, steps, k1_valid,
                   lo, hi, hp, hidx, hv, jp, ji, jv, jr):
    """Adaptive steps from t to exactly t_next, fully compiled.

    Returns (y, spare, t, h, steps, evals, herm, failed); ``y`` and ``spare``
    swap roles on every accepted step.
    """
    evals = 0
    herm = 0.0
    coef = np.zeros(7)
    if not k1_valid:
        _hermitian_block_kernel(y, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[0])
        evals += 1
    while t < t_next:
        h_try = min(h, t_next - t)
        last = h_try == t_next - t
        for i in range(1, 7):
            for m in range(i):
                coef[m] = h_try * a_pad[i, m]
            target = spare if i == 6 else tmp
            _stage(y, ks, i, coef, lo, hi, target)
            _hermitian_block_kernel(target, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[i])
            evals += 1
        err = _error_norm(y, spare, ks, h_try * e, atol, rtol, lo, hi)
        if err <= 1.0:
            t = t_next if last else t + h_try
            y, spare = spare, y
            _copy_blocks(ks[6], ks[0], lo, hi)
            herm = max(herm, _hermitize(y, lo, hi, hermitize))
            if hermitize:
                _hermitize(ks[0], lo, hi, True)
            steps += 1
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            if not last or fac < 1.0:
                h = h_try * fac
        else:
            h = h_try * max(0.2, 0.9 * err ** -0.2)
        if h < min_step or steps > max_steps:
            return y, spare, t, h, steps, evals, herm, True
    return y, spare, t, h, steps, evals, herm, False


@numba.njit(cache=True)
def _rk4_segment(y, spare, tmp, ks, t, n, hs, hermitize,
                 lo, hi, hp, hidx, hv, jp, ji, jv, jr):
    """``n`` classical RK4 steps of size ``hs``; returns (y, spare, herm)."""
    herm = 0.0
    half = np.array([hs / 2])
    mid = np.array([0.0, hs / 2])
    full = np.array([0.0, 0.0, hs])
    final = np.array([hs / 6, hs / 3, hs / 3, hs / 6])
    for _ in range(n):
        _hermitian_block_kernel(y, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[0])
        _stage(y, ks, 1, half, lo, hi, tmp)
        _hermitian_block_kernel(tmp, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[1])
        _stage(y, ks, 2, mid, lo, hi, tmp)
        _hermitian_block_kernel(tmp, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[2])
        _stage(y, ks, 3, full, lo, hi, tmp)
        _hermitian_block_kernel(tmp, lo, hi, hp, hidx, hv, jp, ji, jv, jr, ks[3])
        _stage(y, ks, 4, final, lo, hi, spare)
        y, spare = spare, y
        herm = max(herm, _hermitize(y, lo, hi, hermitize))
    return y, spare, herm


class _Stepper:
    """Preallocated RK4 / Dormand-Prince stages over the block pattern."""

    def __init__(self, f, d, lo, hi):
        self.f = f
        self.lo, self.hi = lo, hi
        self.ks = np.zeros((7, d, d), dtype=np.complex128)
        self.buf = [np.zeros((d, d), dtype=np.complex128) for _ in range(2)]
        self.k1_valid = False

    def _eval(self, t, y, m):
        self.f(t, y, self.ks[m])

    def rk4(self, t, y, h):
        ks, lo, hi = self.ks, self.lo, self.hi
        tmp, out = self.buf
        self._eval(t, y, 0)
        _stage(y, ks, 1, np.array([h / 2]), lo, hi, tmp)
        self._eval(t + h / 2, tmp, 1)
        _stage(y, ks, 2, np.array([0.0, h / 2]), lo, hi, tmp)
        self._eval(t + h / 2, tmp, 2)
        _stage(y, ks, 3, np.array([0.0, 0.0, h]), lo, hi, tmp)
        self._eval(t + h, tmp, 3)
        _stage(y, ks, 4, np.array([h / 6, h / 3, h / 3, h / 6]), lo, hi, out)
        self.buf = [tmp, y]
        return out

    def dopri(self, t, y, h):
        """Fifth-order candidate and its scaled-error inputs; k7 is kept for FSAL."""
        ks, lo, hi = self.ks, self.lo, self.hi
        tmp, out = self.buf
        if not self.k1_valid:
            self._eval(t, y, 0)
            self.k1_valid = True
        for i in range(1, 7):
            target = out if i == 6 else tmp
            _stage(y, ks, i, h * _A_PAD[i, :i], lo, hi, target)
            self._eval(t + _C[i] * h, target, i)
        return out

    def error(self, y, y_new, h, atol, rtol):
        return _error_norm(y, y_new, self.ks, h * _E, atol, rtol, self.lo, self.hi)

    def accept(self, y_old, y_new):
        # the old state buffer becomes scratch space
        self.buf = [self.buf[0], y_old]
        self.ks[0] = self.ks[6]


def integrate(
    rhs,
    rho0,
    cfg: IntegratorConfig,
    observers: Sequence[Observer] = (),
    t0: float = 0.0,
    stop_when: Callable[[TrajectoryRecord], bool] | None = None,
) -> TrajectoryRecord:
    """Evolve ``rho0`` from ``t0`` to ``cfg.t_end`` and sample observers.

    ``rhs(t, rho)`` must return drho/dt as an array.  Diagnostics per sample
    are the trace error, the largest Hermiticity error seen before
    symmetrization since the previous sample, and the minimum eigenvalue.
    ``stop_when`` is consulted after every sample and ends the run early
    when it returns True.

    Raises
    ------
    IntegrationError
        Adaptive step size fell below ``cfg.min_step``; the partial record and
        last accepted state travel on the exception.
    """
    if not isinstance(rho0, DensityState):
        rho0 = DensityState(rho0 if isinstance(rho0, DenseOperator)
                            else DenseOperator.single(rho0))
    rho = np.ascontiguousarray(rho0.op.data, dtype=np.complex128).copy()
    d = rho.shape[0]
    record = TrajectoryRecord(states=[] if cfg.store_states else None)
    times = _sample_times(t0, cfg.t_end, cfg.sample_interval)

    # Hermitian, sector-restricted fast path for time-independent generators
    prop = None
    if cfg.hermitize and hasattr(rhs, "sector_propagator"):
        prop = rhs.sector_propagator(rho)
    if prop is not None:
        rho = prop.to_internal(rho)
        lo, hi = prop.lo, prop.hi
        external = prop.to_external
        blocks = sorted(set(zip(lo.tolist(), hi.tolist())))

        def kernel(t, y, out):
            prop.into(y, out)
    else:
        lo = np.zeros(d, dtype=np.int64)
        hi = np.full(d, d, dtype=np.int64)
        external = None
        blocks = None

        def kernel(t, y, out):
            out[...] = rhs(t, y)

    evals = 0

    def f(t, y, out):
        nonlocal evals
        evals += 1
        kernel(t, y, out)

    def lowest(y):
        if blocks is None:
            return min_eigenvalue(y)
        low = min(float(np.linalg.eigvalsh(y[a:b, a:b])[0]) for a, b in blocks)
        # the complement of the reduced space carries exact zero eigenvalues
        return min(low, 0.0) if prop.reduced else low

    def out(y):
        return y.copy() if external is None else external(y)

    herm_seen = float(np.max(np.abs(rho - rho.conj().T)))

    def add_herm(value):
        nonlocal herm_seen
        herm_seen = max(herm_seen, value)

    def sample(t, y):
        nonlocal herm_seen
        values = {}
        ext = out(y)
        for obs in observers:
            values.update(obs(t, ext))
        diag = {
            "trace_err": float(abs(np.trace(y) - 1.0)),
            "herm_err": herm_seen,
            "min_eig": lowest(y),
        }
        _flag(record, t, diag)
        record.append(t, values, diag, ext)
        herm_seen = 0.0
        return stop_when is not None and stop_when(record)

    def accept(y):
        nonlocal herm_seen
        herm_seen = max(herm_seen, _hermitize(y, lo, hi, cfg.hermitize))

    sample.herm = add_herm
    t = float(times[0])
    if sample(t, rho):
        record.final_state = out(rho)
        return _finish(record, evals)

    stepper = _Stepper(f, rho.shape[0], lo, hi)
    h = cfg.dt
    if prop is not None:
        return _integrate_compiled(prop, rho, times, cfg, sample, out, record, stepper)
    for t_next in times[1:]:
        if cfg.method == FIXED_RK4:
            n = max(1, int(math.ceil((t_next - t) / cfg.dt - 1e-9)))
            hs = (t_next - t) / n
            for i in range(n):
                rho = stepper.rk4(t + i * hs, rho, hs)
                accept(rho)
                record.steps += 1
            t = float(t_next)
        else:
            while t < t_next:
                h_try = min(h, t_next - t)
                last = h_try == t_next - t
                y_new = stepper.dopri(t, rho, h_try)
                err_norm = stepper.error(rho, y_new, h_try, cfg.abs_tol, cfg.rel_tol)
                if err_norm <= 1.0:
                    t = float(t_next) if last else t + h_try
                    stepper.accept(rho, y_new)
                    rho = y_new
                    accept(rho)
                    if cfg.hermitize:
                        _hermitize(stepper.ks[0], lo, hi, True)
                    record.steps += 1
                    fac = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
                    if not last or fac < 1.0:
                        h = h_try * fac
                else:
                    h = h_try * max(0.2, 0.9 * err_norm ** -0.2)
                if h < cfg.min_step or record.steps > cfg.max_steps:
                    record.failed = True
                    record.final_state = rho = out(rho)
                    record.rhs_evals = evals
                    raise IntegrationError(
                        f"adaptive step underflow at t={t:.6g} (h={h:.3e})",
                        last_time=t, last_state=rho, record=record,
                    )
        if sample(t, rho):
            break
    record.final_state = out(rho)
    return _finish(record, evals)


def _integrate_compiled(prop, rho, times, cfg, sample, out, record, stepper):
    """Sample loop of :func:`integrate` with every step inside numba."""
    args = prop.kernel_args()
    ks = stepper.ks
    tmp, spare = stepper.buf
    t = float(times[0])
    h = cfg.dt
    evals = 0
    k1_valid = False
    for t_next in times[1:]:
        t_next = float(t_next)
        if cfg.method == FIXED_RK4:
            n = max(1, int(math.ceil((t_next - t) / cfg.dt - 1e-9)))
            hs = (t_next - t) / n
            rho, spare, herm = _rk4_segment(rho, spare, tmp, ks, t, n, hs, cfg.hermitize, *args)
            record.steps += n
            evals += 4 * n
            t = t_next
        else:
            rho, spare, t, h, steps, n_eval, herm, failed = _dopri_segment(
                rho, spare, tmp, ks, t, t_next, h, cfg.abs_tol, cfg.rel_tol,
                _A_PAD, np.asarray(_C), _E, cfg.hermitize, cfg.min_step,
                cfg.max_steps, record.steps, k1_valid, *args)
            k1_valid = True
            record.steps = steps
            evals += n_eval
            if failed:
                record.failed = True
                record.final_state = state = out(rho)
                record.rhs_evals = evals
                raise IntegrationError(
                    f"adaptive step underflow at t={t:.6g} (h={h:.3e})",
                    last_time=t, last_state=state, record=record,
                )
        sample.herm(herm)
        if sample(t, rho):
            break
    record.final_state = out(rho)
    return _finish(record, evals)


def _finish(record, evals):
    record.rhs_evals = evals
    return record


def _flag(record, t, diag):
    if diag["trace_err"] > BREACH_FACTOR * TRACE_TOL:
        record.flags.append(f"t={t:.6g}: trace error {diag['trace_err']:.3e}")
    if diag["herm_err"] > BREACH_FACTOR * HERMITIAN_TOL:
        record.flags.append(f"t={t:.6g}: hermiticity error {diag['herm_err']:.3e}")
    if diag["min_eig"] < -BREACH_FACTOR * POSITIVITY_TOL:
        record.flags.append(f"t={t:.6g}: minimum eigenvalue {diag['min_eig']:.3e}")


# steady state ---------------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    is_steady: bool
    E_s: float
    t_steady: float


def detect_steady_state(
    traj: TrajectoryRecord, window: float = 10.0, tol: float = 1e-4, key: str = "delta_E"
) -> SteadyState:
    """First time the trailing ``window`` of ``key`` is flat to ``tol`` (relative).

    The plateau test is ``max - min < tol * max(1, |value|)`` over the samples
    in ``[t - window, t]``.  ``E_s`` is the mean over the final window of the
    record whether or not a plateau was found; ``t_steady`` is NaN when none
    was.
    """
    t = np.asarray(traj.times, dtype=float)
    if len(t) < 2 or t[-1] - t[0] < window - 1e-12:
        raise InsufficientDataError(
            f"trajectory spans {t[-1] - t[0] if len(t) else 0:.4g}, window is {window}"
        )
    y = np.asarray(traj.samples[key], dtype=float)
    tail = t >= t[-1] - window - 1e-12
    e_s = float(np.mean(y[tail]))
    lo = 0
    for i in range(len(t)):
        if t[i] - t[0] < window - 1e-12:
            continue
        while t[lo] < t[i] - window - 1e-12:
            lo += 1
        seg = y[lo:i + 1]
        if seg.max() - seg.min() < tol * max(1.0, abs(y[i])):
            return SteadyState(True, e_s, float(t[i]))
    return SteadyState(False, e_s, float("nan"))
