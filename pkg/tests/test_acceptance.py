"""The ten acceptance criteria at their stated tolerances and sizes.

Each test prints one PASS/FAIL line (collected again in the terminal summary).
The CPTP scan runs last so it covers every trajectory the other checks made.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from qbatt.runner import validation as v


def run(check, suite, tag=""):
    res = check(suite)
    line = res.line() + tag
    ACCEPTANCE_LINES[(res.number, tag)] = line
    print(line)
    assert not res.skipped
    assert res.passed, line


def test_1_analytic_oracle(suite):
    run(v.check_analytic, suite)


def test_3_closed_system(suite):
    run(v.check_closed_system, suite)


def test_4_cross_integrator(suite):
    run(v.check_cross_integrator, suite)


@pytest.mark.slow
def test_5_fock_cutoff(suite):
    run(v.check_cutoff, suite)


@pytest.mark.slow
def test_6_rate_ordering(suite):
    run(v.check_rate_ordering, suite)


def test_6_fast_variant():
    run(v.check_rate_ordering, v.Suite(fast=True), " [validate --fast]")


@pytest.mark.slow
def test_7_self_discharge_ordering(suite):
    run(v.check_self_discharge_ordering, suite)


@pytest.mark.slow
def test_8_resources(suite):
    run(v.check_resources, suite)


def test_9_single_cell(suite):
    run(v.check_single_cell, suite)


def test_10_determinism(suite):
    run(v.check_determinism, suite)


@pytest.mark.slow
def test_2_cptp(suite):
    run(v.check_cptp, suite)
