import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbatt.engine import IntegratorConfig, TrajectoryRecord, charging_generator, integrate
from qbatt.engine import dissipators_from_params
from qbatt.errors import InsufficientDataError, NumericalCorruptionError
from qbatt.model import (
    ModelParams,
    build_battery_hamiltonian,
    build_charging_hamiltonian,
    excited_battery_state,
    initial_charging_state,
)
from qbatt.observables import (
    average_power,
    battery_observer,
    l1_coherence,
    log_negativity,
    max_power,
    stored_energy,
)
from qbatt.tensor import DenseOperator, DensityState, HilbertLayout, basis_ket


def trajectory(times, powers):
    rec = TrajectoryRecord()
    for t, p in zip(times, powers):
        rec.append(t, {"P": p, "delta_E": p * t}, {"trace_err": 0, "herm_err": 0, "min_eig": 0})
    return rec


def bell_mode_qutrit():
    layout = HilbertLayout((2, 3))
    ket = basis_ket(layout, (0, 0)) + basis_ket(layout, (1, 1))
    return DensityState.from_ket(layout, ket)


# energy and power


def test_stored_energy_initial_and_excited():
    p = ModelParams(N=2, modes=1, J=0.0)
    layout = p.layout()
    h_q = build_battery_hamiltonian(p, p.battery_layout())
    assert stored_energy(initial_charging_state(p, layout), h_q) == 0.0
    q = ModelParams(N=3, modes=0, J=0.0)
    h = build_battery_hamiltonian(q, q.layout())
    assert stored_energy(excited_battery_state(q), h) == pytest.approx(1.95 * 3)


def test_stored_energy_full_layout_operator():
    p = ModelParams(N=1, modes=1, J=0.0, n_photons=1)
    layout = p.layout()
    full = build_battery_hamiltonian(p, layout)
    assert stored_energy(initial_charging_state(p, layout), full) == 0.0


def test_stored_energy_rejects_complex():
    layout = HilbertLayout((3,))
    rho = DensityState.from_matrix(layout, np.eye(3) / 3)
    h = DenseOperator(layout, 1j * np.eye(3))
    with pytest.raises(NumericalCorruptionError):
        stored_energy(rho, h)


def test_uncoupled_run_stores_nothing():
    p = ModelParams(N=1, modes=1, g=[0.0], J=0.0)
    layout = p.layout()
    gen = charging_generator(build_charging_hamiltonian(p, layout), dissipators_from_params(p))
    h_q = build_battery_hamiltonian(p, p.battery_layout())
    rec = integrate(gen, initial_charging_state(p, layout), IntegratorConfig(t_end=5.0),
                    [battery_observer(layout, h_q)])
    assert np.allclose(rec.samples["delta_E"], 0.0, atol=1e-14)
    assert np.allclose(rec.samples["P"], 0.0, atol=1e-14)


def test_average_power():
    assert average_power(2.0, 4.0) == 0.5
    assert average_power(3.0, 0.0) == 0.0
    assert average_power(0.0, 7.0) == 0.0
    with pytest.raises(ValueError):
        average_power(1.0, -1.0)


def test_max_power():
    t = np.linspace(0, 1, 5)
    assert max_power(trajectory(t, t)) == (1.0, 1.0)
    assert max_power(trajectory(t, np.zeros(5))) == (0.0, 0.0)
    assert max_power(trajectory(t, [0, 2, 1, 2, 0])) == (2.0, 0.25)
    with pytest.raises(InsufficientDataError):
        max_power(TrajectoryRecord())


def test_max_power_sampling_refinement():
    p = ModelParams(N=1, modes=1, g=[1.0], J=0.0)
    layout = p.layout()
    gen = charging_generator(build_charging_hamiltonian(p, layout), [])
    h_q = build_battery_hamiltonian(p, p.battery_layout())
    obs = [battery_observer(layout, h_q)]
    coarse = integrate(gen, initial_charging_state(p, layout),
                       IntegratorConfig(t_end=20.0, record_every=10), obs)
    fine = integrate(gen, initial_charging_state(p, layout),
                     IntegratorConfig(t_end=20.0, record_every=1), obs)
    assert max_power(coarse)[0] == pytest.approx(max_power(fine)[0], rel=1e-2)


# coherence


def test_coherence_examples():
    assert l1_coherence(np.diag([0.2, 0.3, 0.5])) == 0.0
    plus = np.array([1, 1, 0]) / np.sqrt(2)
    assert l1_coherence(np.outer(plus, plus)) == pytest.approx(1.0)
    even = np.ones(3) / np.sqrt(3)
    assert l1_coherence(np.outer(even, even)) == pytest.approx(2.0)


@settings(max_examples=30)
@given(st.integers(0, 2**16))
def test_coherence_phase_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = x @ x.conj().T
    rho /= np.trace(rho)
    u = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, 3)))
    assert l1_coherence(u @ rho @ u.conj().T) == pytest.approx(l1_coherence(rho), abs=1e-10)
    assert l1_coherence(rho) >= 0


# entanglement


def test_negativity_product_and_bell():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    a = a @ a.conj().T
    a /= np.trace(a)
    prod = DensityState.from_matrix(HilbertLayout((2, 3)), np.kron(a, np.diag([0.5, 0.5, 0])))
    assert log_negativity(prod, {1}) == 0.0
    assert log_negativity(bell_mode_qutrit(), {1}) == pytest.approx(1.0)


def test_negativity_initial_state():
    p = ModelParams(N=2, modes=2, g=[1.0], n_photons=1, cutoff=3)
    layout = p.layout()
    assert log_negativity(initial_charging_state(p, layout), layout.qutrit_slots) == 0.0


@settings(max_examples=20)
@given(st.integers(0, 2**16))
def test_negativity_bipartition_symmetric(seed):
    rng = np.random.default_rng(seed)
    layout = HilbertLayout((3, 3))
    ket = rng.normal(size=9) + 1j * rng.normal(size=9)
    rho = DensityState.from_ket(layout, ket)
    assert log_negativity(rho, {0}) == pytest.approx(log_negativity(rho, {1}), abs=1e-10)
    assert log_negativity(rho, {1}) >= 0


def test_observer_keys_and_battery_only():
    p = ModelParams(N=1, modes=0)
    layout = p.layout()
    h = build_battery_hamiltonian(p, layout)
    obs = battery_observer(layout, h)
    vals = obs(2.0, excited_battery_state(p).data)
    assert vals == {"delta_E": pytest.approx(1.95), "P": pytest.approx(0.975), "C": 0.0, "S": 0.0}


def test_closed_battery_energy_constant():
    p = ModelParams(N=2, modes=0, J=1.0)
    layout = p.layout()
    h = build_battery_hamiltonian(p, layout)
    ket = np.zeros(9, dtype=complex)
    ket[layout.flatten((1, 0))] = 1
    ket[layout.flatten((2, 2))] = 1j
    rec = integrate(charging_generator(h, []), DensityState.from_ket(layout, ket),
                    IntegratorConfig(t_end=10.0), [battery_observer(layout, h)])
    assert np.ptp(rec.samples["delta_E"]) < 1e-8
