import numpy as np
import pytest

from qbatt.engine import detect_steady_state
from qbatt.runner import default_params
from qbatt.runner.scenarios import run_charging, run_drive, run_self_discharge


@pytest.mark.slow
def test_n3_plateau_matches_long_horizon(suite):
    cfg = default_params("charge-resonator-qutrits")
    short = suite.run(cfg)
    assert short.steady.is_steady
    long_cfg = cfg.copy()
    long_cfg.integrator.t_end = 200.0
    long = run_charging(long_cfg)
    tail = detect_steady_state(long.record, cfg.steady.window, cfg.steady.tol)
    assert short.steady.E_s == pytest.approx(tail.E_s, rel=1e-2)


def test_drive_charges_adiabatically():
    res = run_drive(default_params("charge-qutrit-drive"))
    e = np.asarray(res.record.samples["delta_E"])
    # the ramp ends with most population transferred to |2>
    assert e[-1] > 0.8 * 1.95
    assert e[0] == 0.0


def test_self_discharge_from_excited_state():
    cfg = default_params("self-discharge")
    cfg.model.N = 1
    cfg.model.n_photons = 2
    cfg.model.cutoff = 6
    cfg.discharge.initial = "excited"
    cfg.discharge.t_end = 20.0
    res = run_self_discharge(cfg)
    assert res.charge_record is None
    assert res.record.samples["delta_E"][0] == pytest.approx(1.95)
    assert res.E_eval < 1.95
    assert np.all(np.diff(res.record.samples["delta_E"]) <= 1e-10)
