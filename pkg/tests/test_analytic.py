import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbatt.analytic import RateParams, analytic_energy, analytic_populations
from qbatt.errors import DomainError
from qbatt.runner.validation import self_discharge_single

P = RateParams(0.1, 0.2)
rates = st.floats(1e-3, 2.0)
levels = st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)).map(
    lambda x: tuple(sorted(x)))


def test_initial_populations():
    assert analytic_populations(0.0, P) == (0.0, 0.0, 1.0)
    assert analytic_energy(0.0, P) == pytest.approx(1.95)


def test_top_level_decay():
    assert analytic_populations(5.0, P)[2] == pytest.approx(math.exp(-1), abs=1e-15)


def test_full_decay():
    assert abs(analytic_energy(1e4, P) - 0.0) < 1e-8


def test_energy_matches_populations_example():
    pops = analytic_populations(5.0, P)
    assert analytic_energy(5.0, P) == pytest.approx(np.dot((0, 1, 1.95), pops), abs=1e-14)


def test_negative_time():
    with pytest.raises(DomainError):
        analytic_populations(-1.0, P)
    with pytest.raises(DomainError):
        analytic_energy(-0.1, P)
    with pytest.raises(DomainError):
        RateParams(-0.1, 0.2)


def test_derived_frequencies():
    assert (P.omega01, P.omega12, P.omega02) == pytest.approx((1.0, 0.95, 1.95))


@settings(max_examples=100)
@given(st.floats(0, 200), rates, rates)
def test_populations_sum_and_range(t, g01, g12):
    pops = analytic_populations(t, RateParams(g01, g12))
    assert abs(sum(pops) - 1) < 1e-14
    assert all(-1e-15 <= x <= 1 + 1e-15 for x in pops)


@settings(max_examples=100)
@given(st.floats(0, 100), rates, rates, levels)
def test_energy_is_level_weighted(t, g01, g12, w):
    p = RateParams(g01, g12, w)
    e = analytic_energy(t, p)
    # the closed form divides by g01 - g12, so round-off grows near the degenerate point
    cond = 1.0 if p.degenerate else max(1.0, max(g01, g12) / abs(g01 - g12))
    assert e == pytest.approx(np.dot(w, analytic_populations(t, p)), abs=1e-13 * cond)


@settings(max_examples=30)
@given(rates, rates, levels)
def test_energy_non_increasing(g01, g12, w):
    p = RateParams(g01, g12, w)
    e = [analytic_energy(t, p) for t in np.linspace(0, 60, 400)]
    assert np.all(np.diff(e) <= 1e-12)


@pytest.mark.parametrize("t", [0.5, 5.0, 30.0])
def test_degenerate_branch_continuity(t):
    g = 0.2
    below = RateParams(g * (1 - 1e-8), g)
    at = RateParams(g, g)
    above = RateParams(g * (1 + 1e-8), g)
    assert at.degenerate and not below.degenerate
    for a, b in ((below, at), (at, above)):
        assert np.allclose(analytic_populations(t, a), analytic_populations(t, b), atol=1e-6)
        assert analytic_energy(t, a) == pytest.approx(analytic_energy(t, b), abs=1e-6)


def test_degenerate_formula():
    g, t = 0.3, 4.0
    r11, r22, r33 = analytic_populations(t, RateParams(g, g))
    assert r22 == pytest.approx(g * t * math.exp(-g * t))
    assert r11 == pytest.approx(1 - math.exp(-g * t) - g * t * math.exp(-g * t))


def test_engine_reproduces_oracle():
    rec = self_discharge_single()
    for i, t in enumerate(rec.times):
        exact = analytic_populations(t, P)
        got = [rec.samples[f"p{k}"][i] for k in range(3)]
        assert np.allclose(got, exact, atol=1e-6)
    e = np.asarray(rec.samples["delta_E"])
    assert np.all(np.diff(e) <= 1e-10)
