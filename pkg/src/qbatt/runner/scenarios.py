"""Scenario assembly: default parameter sets, single runs and sweeps."""

from __future__ import annotations

import bisect
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import __version__
from ..engine import (
    DEPHASING,
    RELAXATION,
    IntegratorConfig,
    SteadyState,
    TrajectoryRecord,
    charging_generator,
    detect_steady_state,
    dissipators_from_params,
    integrate,
    self_discharge_generator,
)
from ..errors import ConfigError, InsufficientDataError
from ..model import (
    DriveParams,
    ModelParams,
    build_battery_hamiltonian,
    build_charging_hamiltonian,
    build_drive_hamiltonian,
    excited_battery_state,
    initial_charging_state,
    levels_from_gap_ratio,
)
from ..observables import BatteryMetrics, battery_observer, max_power
from ..tensor import DenseOperator, DensityState, HilbertLayout, partial_trace_matrix
from .config import (
    SCENARIOS,
    DischargeConfig,
    ScenarioConfig,
    SteadyConfig,
    SweepConfig,
)

THREADS_ENV = "QBATT_THREADS"

def default_params(kind: str) -> ScenarioConfig:
    """Parameter set for a scenario kind (frequencies and rates in units of omega)."""
    if kind not in SCENARIOS:
        raise ConfigError(f"unknown scenario {kind!r}", "scenario")
    levels = (0.0, 1.0, 1.95)
    if kind == "charge-resonator-qutrits":
        return ScenarioConfig(
            scenario=kind,
            model=ModelParams(N=3, modes=1, g=[1.0], J=1.0, kappa=0.1,
                              gamma_rel=(0.1, 0.2), gamma_dep=(0.1, 0.2),
                              n_photons=6, omega_levels=levels),
            integrator=IntegratorConfig(t_end=60.0),
            steady=SteadyConfig(),
        )
    if kind == "charge-single-cell":
        return ScenarioConfig(
            scenario=kind,
            model=ModelParams(N=1, modes=1, g=[1.0], J=0.0, n_photons=2,
                              omega_levels=levels),
            # closed pure-state run: tight tolerances keep purity and the
            # zero eigenvalues within 1e-8
            integrator=IntegratorConfig(t_end=20.0, abs_tol=1e-11, rel_tol=1e-10),
        )
    if kind == "charge-qutrit-drive":
        omega0 = 0.25
        return ScenarioConfig(
            scenario=kind,
            model=ModelParams(N=1, modes=0, J=0.0, omega_levels=levels),
            drive=DriveParams(Omega_0=omega0, tau=40.0 / omega0, omega_levels=levels),
            integrator=IntegratorConfig(t_end=40.0 / omega0),
        )
    if kind == "self-discharge":
        return ScenarioConfig(
            scenario=kind,
            model=ModelParams(N=3, modes=1, g=[1.0], J=1.0, kappa=0.1,
                              gamma_rel=(0.1, 0.2), gamma_dep=(0.0, 0.0),
                              n_photons=6, omega_levels=levels),
            integrator=IntegratorConfig(t_end=50.0),
            discharge=DischargeConfig(),
        )
    if kind == "rate-sweep":
        cfg = default_params("charge-resonator-qutrits")
        cfg.scenario = kind
        cfg.model = replace_model(cfg.model, kappa=0.0, gamma_rel=(0.1, 0.2),
                                  gamma_dep=(0.0, 0.0))
        cfg.integrator = IntegratorConfig(t_end=200.0)
        cfg.steady = SteadyConfig(stop_when_steady=True)
        cfg.sweep = SweepConfig(axis="gamma01", values=[0.02, 0.05, 0.1, 0.2])
        return cfg
    if kind == "gap-sweep":
        cfg = default_params("self-discharge")
        cfg.scenario = kind
        cfg.sweep = SweepConfig(axis="gap_ratio", values=[0.8, 1.0, 1.25, 1.5],
                                base="self-discharge")
        return cfg
    # validate: the suite builds its own configs; this only carries the defaults
    return ScenarioConfig(scenario=kind)


def replace_model(p: ModelParams, **changes) -> ModelParams:
    """Copy of ``p`` with ``changes`` applied and validated again."""
    d = p.to_dict()
    d.update(changes)
    if ("n_photons" in changes or "N" in changes) and "cutoff" not in changes:
        d["cutoff"] = None
    if "modes" in changes:
        d.setdefault("omega_r", p.omega_r[:1])
        if "omega_r" not in changes:
            d["omega_r"] = p.omega_r[:1]
        if "g" not in changes:
            d["g"] = p.g[:1]
    return ModelParams(**d)


# results ----------------------------------------------------------------------


@dataclass
class SweepTable:
    axis: str
    values: list
    E_s: list
    P_max: list
    t_steady: list
    #: E_d at the evaluation time, self-discharge sweeps only
    E_d: list | None = None
    metadata: dict = field(default_factory=dict)

    def rows(self):
        extra = self.E_d if self.E_d is not None else [None] * len(self.values)
        return list(zip(self.values, self.E_s, self.P_max, self.t_steady, extra))


@dataclass
class RunResult:
    config: ScenarioConfig
    record: TrajectoryRecord | None = None
    #: charging phase that prepared a self-discharge run
    charge_record: TrajectoryRecord | None = None
    steady: SteadyState | None = None
    metrics: BatteryMetrics | None = None
    table: SweepTable | None = None
    E_eval: float | None = None
    wall_time: float = 0.0
    #: (cutoff, E_s) pairs tried by the cutoff guard
    cutoff_history: list = field(default_factory=list)


# single runs ------------------------------------------------------------------


def _steady(record, cfg: ScenarioConfig) -> SteadyState | None:
    try:
        return detect_steady_state(record, cfg.steady.window, cfg.steady.tol)
    except InsufficientDataError:
        return None


def _stop_rule(cfg: ScenarioConfig):
    if not cfg.steady.stop_when_steady:
        return None
    s = cfg.steady
    state = {"t_hit": None}

    def stop(record):
        # same test as detect_steady_state, applied only at the newest sample
        times = record.times
        t = times[-1]
        if state["t_hit"] is None and t - times[0] >= s.window - 1e-12:
            start = bisect.bisect_left(times, t - s.window - 1e-12)
            seg = record.samples["delta_E"][start:]
            if max(seg) - min(seg) < s.tol * max(1.0, abs(seg[-1])):
                state["t_hit"] = t
        return state["t_hit"] is not None and t >= state["t_hit"] + s.extra - 1e-12

    return stop


def _metrics(record, steady) -> BatteryMetrics:
    p_max, _ = max_power(record)
    last = -1
    return BatteryMetrics(
        delta_E=record.samples["delta_E"][last],
        P_avg=record.samples["P"][last],
        P_max=p_max,
        E_s=steady.E_s if steady is not None else float("nan"),
        C=record.samples["C"][last],
        S=record.samples["S"][last],
    )


def _charge(cfg: ScenarioConfig, integ: IntegratorConfig, stop=None):
    p = cfg.model
    layout = p.layout()
    H = build_charging_hamiltonian(p, layout)
    H_q = build_battery_hamiltonian(p, p.battery_layout())
    gen = charging_generator(H, dissipators_from_params(p))
    rho0 = initial_charging_state(p, layout)
    return integrate(gen, rho0, integ, [battery_observer(layout, H_q)], stop_when=stop)


def run_charging(cfg: ScenarioConfig) -> RunResult:
    """Resonator-qutrits charging (one or two modes, any N)."""
    start = time.perf_counter()
    record = _charge(cfg, cfg.integrator, _stop_rule(cfg))
    steady = _steady(record, cfg)
    history = []
    guard = cfg.convergence
    if guard.cutoff_guard and cfg.model.modes:
        history.append((cfg.model.cutoff, _e_s(steady)))
        while True:
            cutoff = cfg.model.cutoff + guard.step
            if cutoff > guard.max_cutoff:
                record.flags.append(f"cutoff not converged below {guard.max_cutoff}")
                break
            cfg = cfg.copy()
            cfg.model = replace_model(cfg.model, cutoff=cutoff)
            record = _charge(cfg, cfg.integrator, _stop_rule(cfg))
            steady = _steady(record, cfg)
            history.append((cutoff, _e_s(steady)))
            if abs(history[-1][1] - history[-2][1]) < guard.tol:
                break
    return RunResult(cfg, record=record, steady=steady, metrics=_metrics(record, steady),
                     wall_time=time.perf_counter() - start, cutoff_history=history)


def _e_s(steady):
    return steady.E_s if steady is not None else float("nan")


def run_drive(cfg: ScenarioConfig) -> RunResult:
    """Single qutrit charged by the two ramped classical tones."""
    start = time.perf_counter()
    d = cfg.drive or DriveParams(omega_levels=cfg.model.omega_levels)
    p = replace_model(cfg.model, N=1, modes=0, omega_levels=d.omega_levels)
    layout = p.battery_layout()
    H_q = build_battery_hamiltonian(p, layout)
    specs = dissipators_from_params(p, include_resonator=False)
    gen = charging_generator(lambda t: build_drive_hamiltonian(t, d), specs, layout)
    rho0 = DensityState(DenseOperator(layout, _ground(layout)))
    record = integrate(gen, rho0, cfg.integrator, [battery_observer(layout, H_q)],
                       stop_when=_stop_rule(cfg))
    steady = _steady(record, cfg)
    return RunResult(cfg, record=record, steady=steady, metrics=_metrics(record, steady),
                     wall_time=time.perf_counter() - start)


def _ground(layout: HilbertLayout) -> np.ndarray:
    rho = np.zeros((layout.total, layout.total), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def run_self_discharge(cfg: ScenarioConfig) -> RunResult:
    """Charge for ``t_charge`` (or start from |2...2>), then discharge without the charger.

    The charging phase uses every rate of the model; the discharge phase keeps
    relaxation and dephasing and drops the resonator.  ``E_eval`` is the
    battery energy at ``discharge.t_eval`` after disconnection.
    """
    start = time.perf_counter()
    p = cfg.model
    dis = cfg.discharge or DischargeConfig()
    charge_record = None
    if dis.initial == "charged":
        integ = replace(cfg.integrator, t_end=dis.t_charge, store_states=False)
        charge_record = _charge(cfg, integ)
        full = p.layout()
        rho_q = partial_trace_matrix(charge_record.final_state, full.dims,
                                     list(full.qutrit_slots))
        rho0 = DensityState(DenseOperator(p.battery_layout(), rho_q))
    else:
        rho0 = excited_battery_state(p, level=2)
    layout = p.battery_layout()
    H_q = build_battery_hamiltonian(p, layout)
    specs = [s for s in dissipators_from_params(p, include_resonator=False)
             if s.kind in (RELAXATION, DEPHASING)]
    gen = self_discharge_generator(H_q, specs)
    integ = replace(cfg.integrator, t_end=dis.t_end)
    record = integrate(gen, rho0, integ, [battery_observer(layout, H_q)])
    e_eval = float(np.interp(dis.t_eval, record.times, record.samples["delta_E"]))
    steady = _steady(charge_record, cfg) if charge_record is not None else None
    metrics = _metrics(charge_record, steady) if charge_record is not None else None
    return RunResult(cfg, record=record, charge_record=charge_record, steady=steady,
                     metrics=metrics, E_eval=e_eval,
                     wall_time=time.perf_counter() - start)


# sweeps -----------------------------------------------------------------------


def apply_axis(cfg: ScenarioConfig, axis: str, value, tie_rates: bool = True) -> ScenarioConfig:
    """Copy of ``cfg`` with one sweep parameter set."""
    out = cfg.copy()
    p = out.model
    v = float(value)
    if axis == "kappa":
        out.model = replace_model(p, kappa=v)
    elif axis in ("gamma01", "gamma12"):
        r01, r12 = p.gamma_rel
        if axis == "gamma01":
            rates = (v, 2.0 * v if tie_rates else r12)
        else:
            rates = (r01, v)
        out.model = replace_model(p, gamma_rel=rates)
    elif axis in ("gamma11", "gamma22"):
        r11, r22 = p.gamma_dep
        if axis == "gamma11":
            rates = (v, 2.0 * v if tie_rates else r22)
        else:
            rates = (r11, v)
        out.model = replace_model(p, gamma_dep=rates)
    elif axis == "g":
        out.model = replace_model(p, g=[v] * max(p.modes, 1))
    elif axis == "J":
        out.model = replace_model(p, J=v)
    elif axis == "gap_ratio":
        levels = levels_from_gap_ratio(v, p.omega_levels)
        out.model = replace_model(p, omega_levels=levels)
        if out.drive is not None:
            out.drive = replace(out.drive, omega_levels=levels)
    elif axis in ("cutoff", "n_photons", "N"):
        if v != int(v):
            raise ConfigError(f"{axis} must be an integer, got {value}", "sweep.values")
        n = int(v)
        if axis == "cutoff":
            out.model = replace_model(p, cutoff=n)
        elif axis == "n_photons":
            out.model = replace_model(p, n_photons=n)
        else:
            out.model = replace_model(p, N=n, n_photons=2 * n)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}", "sweep.axis")
    return out


RUNNERS = {
    "charge-resonator-qutrits": run_charging,
    "charge-single-cell": run_charging,
    "charge-qutrit-drive": run_drive,
    "self-discharge": run_self_discharge,
}


def _sweep_point(point_cfg: ScenarioConfig):
    res = RUNNERS[point_cfg.scenario](point_cfg)
    st = res.steady
    e_s = st.E_s if st is not None else float("nan")
    t_s = st.t_steady if st is not None else float("nan")
    p_max = res.metrics.P_max if res.metrics is not None else float("nan")
    return e_s, p_max, t_s, res.E_eval


def worker_count(n_tasks: int) -> int:
    """Sweep parallelism, capped by ``QBATT_THREADS`` when set."""
    cap = os.environ.get(THREADS_ENV)
    if cap is not None:
        try:
            limit = int(cap)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
        if limit < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
    else:
        limit = os.cpu_count() or 1
    return max(1, min(limit, n_tasks))


def run_sweep(cfg: ScenarioConfig) -> RunResult:
    """Run the sweep's base scenario at every axis value; rows sorted by value."""
    sw = cfg.sweep
    if sw is None or not sw.values:
        raise ConfigError("sweep values must not be empty", "sweep.values")
    start = time.perf_counter()
    values = sorted(float(v) for v in sw.values)
    points = []
    for v in values:
        base = cfg.copy()
        base.scenario = sw.base
        base.sweep = None
        if sw.base == "self-discharge" and base.discharge is None:
            base.discharge = DischargeConfig()
        points.append(apply_axis(base, sw.axis, v, sw.tie_rates))
    workers = worker_count(len(points))
    if workers == 1:
        results = [_sweep_point(pc) for pc in points]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map keeps submission order, so the merge is index-ordered
            results = list(pool.map(_sweep_point, points))
    table = SweepTable(
        axis=sw.axis,
        values=values,
        E_s=[r[0] for r in results],
        P_max=[r[1] for r in results],
        t_steady=[r[2] for r in results],
        E_d=[r[3] for r in results] if sw.base == "self-discharge" else None,
        metadata={"config": cfg.to_dict(), "version": __version__},
    )
    wall = time.perf_counter() - start
    table.metadata["wall_time"] = wall
    return RunResult(cfg, table=table, wall_time=wall)


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Dispatch on ``cfg.scenario``; sweep kinds go through :func:`run_sweep`."""
    if cfg.scenario in ("rate-sweep", "gap-sweep") or (
        cfg.sweep is not None and cfg.scenario not in RUNNERS
    ):
        return run_sweep(cfg)
    if cfg.scenario in RUNNERS:
        return RUNNERS[cfg.scenario](cfg)
    raise ConfigError(f"scenario {cfg.scenario!r} is not runnable here", "scenario")
