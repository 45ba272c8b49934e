"""Oracle and property checks behind ``qbatt validate``.

Each ``check_*`` function returns a :class:`CheckResult`.  Runs shared between
checks (the N=3 charging run serves three of them) are memoised on a
:class:`Suite` so the full suite integrates every configuration once.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analytic import RateParams, analytic_energy, analytic_populations
from ..engine import (
    ADAPTIVE,
    FIXED_RK4,
    IntegratorConfig,
    charging_generator,
    dissipators_from_params,
    integrate,
    self_discharge_generator,
)
from ..model import (
    ModelParams,
    build_battery_hamiltonian,
    build_charging_hamiltonian,
    excited_battery_state,
    initial_charging_state,
)
from ..observables import battery_observer, populations_observer
from ..tensor import HERMITIAN_TOL, POSITIVITY_TOL
from .scenarios import (
    RunResult,
    apply_axis,
    default_params,
    replace_model,
    run_charging,
    run_drive,
    run_self_discharge,
)

TRACE_LIMIT = 1e-9


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    skipped: bool = False

    def line(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"{status} [{self.number}] {self.name}: {self.detail} ({self.seconds:.1f} s)"


@dataclass
class Suite:
    """Memoised scenario runs keyed by their resolved config JSON."""

    fast: bool = False
    runs: dict = field(default_factory=dict)

    def run(self, cfg) -> RunResult:
        key = cfg.to_json()
        if key not in self.runs:
            runner = {
                "charge-resonator-qutrits": run_charging,
                "charge-single-cell": run_charging,
                "charge-qutrit-drive": run_drive,
                "self-discharge": run_self_discharge,
            }[cfg.scenario]
            self.runs[key] = runner(cfg)
        return self.runs[key]

    def records(self):
        for res in self.runs.values():
            for rec in (res.record, res.charge_record):
                if rec is not None:
                    yield res.config, rec


# shared configurations ----------------------------------------------------------


def self_discharge_single(method=ADAPTIVE):
    """N=1 relaxation-only self-discharge from |2> (the analytic case)."""
    p = ModelParams(N=1, modes=0, J=0.0, gamma_rel=(0.1, 0.2), gamma_dep=(0.0, 0.0))
    layout = p.battery_layout()
    H_q = build_battery_hamiltonian(p, layout)
    gen = self_discharge_generator(H_q, dissipators_from_params(p, include_resonator=False))
    cfg = IntegratorConfig(method=method, t_end=50.0, record_every=10)
    obs = [battery_observer(layout, H_q), populations_observer(layout)]
    return integrate(gen, excited_battery_state(p), cfg, obs)


def closed_single_cell(method=ADAPTIVE, **tol):
    """N=1, g=1, zero rates, |0> x |2>, with purity and total-energy observers."""
    cfg = default_params("charge-single-cell")
    p = cfg.model
    layout = p.layout()
    H = build_charging_hamiltonian(p, layout)
    H_q = build_battery_hamiltonian(p, p.battery_layout())
    gen = charging_generator(H, dissipators_from_params(p))
    hm = H.data

    def totals(t, rho):
        return {
            "E_total": float(np.real(np.einsum("ij,ji->", hm, rho))),
            "purity": float(np.real(np.einsum("ij,ji->", rho, rho))),
        }

    integ = IntegratorConfig(method=method, t_end=20.0, record_every=10, **tol)
    return integrate(gen, initial_charging_state(p, layout), integ,
                     [battery_observer(layout, H_q), totals])


def n3_charging(cutoff=None):
    cfg = default_params("charge-resonator-qutrits")
    if cutoff is not None:
        cfg.model = replace_model(cfg.model, cutoff=cutoff)
    return cfg


def rate_sweep_configs(n: int):
    """Relaxation-only sweep points and the dephasing-only reference for ``n`` qutrits."""
    base = default_params("rate-sweep")
    base.scenario = "charge-resonator-qutrits"
    base.sweep = None
    base.model = replace_model(base.model, N=n, n_photons=2 * n)
    points = [apply_axis(base, "gamma01", v) for v in (0.02, 0.05, 0.1, 0.2)]
    dephasing = apply_axis(apply_axis(base, "gamma01", 0.0), "gamma11", 0.1)
    return points, dephasing


def self_discharge_configs():
    base = default_params("self-discharge")
    by_rate = [apply_axis(base, "gamma11", v) for v in (0.0, 0.05, 0.1, 0.2)]
    fixed = apply_axis(base, "gamma11", 0.1)
    by_gap = [apply_axis(fixed, "gap_ratio", r) for r in GAP_RATIOS]
    return by_rate, by_gap


GAP_RATIOS = (0.8, 1.0, 1.25, 1.5)


def single_cell_variants():
    """One-mode, two-mode and driven single cells at matched amplitude 0.25."""
    one = default_params("charge-single-cell")
    one.model = replace_model(one.model, g=[0.25])
    two = one.copy()
    two.model = replace_model(one.model, modes=2, g=[0.25])
    drive = default_params("charge-qutrit-drive")
    return one, two, drive


# checks -------------------------------------------------------------------------


def _timed(number, name, fn):
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(number, name, bool(passed), detail, time.perf_counter() - start)


def check_analytic(suite: Suite) -> CheckResult:
    self_discharge_single()  # loads the compiled kernels so the timing covers the run only

    def body():
        start = time.perf_counter()
        rec = self_discharge_single()
        elapsed = time.perf_counter() - start
        rp = RateParams(0.1, 0.2)
        err_p = err_e = 0.0
        for i, t in enumerate(rec.times):
            exact = analytic_populations(t, rp)
            got = (rec.samples["p0"][i], rec.samples["p1"][i], rec.samples["p2"][i])
            err_p = max(err_p, max(abs(a - b) for a, b in zip(exact, got)))
            err_e = max(err_e, abs(analytic_energy(t, rp) - rec.samples["delta_E"][i]))
        ok = err_p < 1e-6 and err_e < 1e-6 and elapsed < 1.0
        return ok, f"population err {err_p:.2e}, energy err {err_e:.2e}, runtime {elapsed:.2f} s"

    return _timed(1, "analytic self-discharge oracle", body)


def check_closed_system(suite: Suite) -> CheckResult:
    cfg = default_params("charge-single-cell")
    closed_single_cell(**_tol(cfg))  # compile warm-up

    def body():
        start = time.perf_counter()
        rec = closed_single_cell(**_tol(cfg))
        elapsed = time.perf_counter() - start
        purity = np.asarray(rec.samples["purity"])
        energy = np.asarray(rec.samples["E_total"])
        de = np.asarray(rec.samples["delta_E"])
        running = np.maximum.accumulate(de)
        dips = bool(np.any((running > 0) & (de < 0.5 * running)))
        dev_p = float(np.max(np.abs(purity - 1.0)))
        dev_e = float(np.ptp(energy))
        ok = dev_p <= 1e-8 and dev_e <= 1e-8 and np.ptp(de) > 0 and dips and elapsed < 5.0
        return ok, (f"purity dev {dev_p:.2e}, energy drift {dev_e:.2e}, "
                    f"oscillates {dips}, runtime {elapsed:.2f} s")

    return _timed(3, "closed-system unitarity and oscillation", body)


def _tol(cfg):
    return {"abs_tol": cfg.integrator.abs_tol, "rel_tol": cfg.integrator.rel_tol}


def check_cross_integrator(suite: Suite) -> CheckResult:
    def body():
        diffs = {}
        for label, make in (("self-discharge N=1", self_discharge_single),
                            ("closed single cell", closed_single_cell)):
            a = make(method=FIXED_RK4)
            b = make(method=ADAPTIVE)
            diffs[label] = max(
                float(np.max(np.abs(np.asarray(a.samples[k]) - np.asarray(b.samples[k]))))
                for k in ("delta_E", "C", "S")
            )
        ok = all(v < 1e-6 for v in diffs.values())
        return ok, ", ".join(f"{k}: {v:.2e}" for k, v in diffs.items())

    return _timed(4, "fixed-rk4 vs adaptive", body)


def check_cutoff(suite: Suite) -> CheckResult:
    if suite.fast:
        return CheckResult(5, "Fock cutoff convergence", True, "N=3 only", skipped=True)

    def body():
        base = n3_charging()
        n = base.model.n_photons
        lo = suite.run(n3_charging(n + 4)).steady
        hi = suite.run(n3_charging(n + 8)).steady
        delta = abs(hi.E_s - lo.E_s)
        return delta < 1e-6, (f"E_s(cutoff {n + 4}) = {lo.E_s:.8f}, "
                              f"E_s(cutoff {n + 8}) = {hi.E_s:.8f}, change {delta:.2e}")

    return _timed(5, "Fock cutoff convergence", body)


def check_rate_ordering(suite: Suite) -> CheckResult:
    n = 2 if suite.fast else 3
    budget = 30.0 if suite.fast else 600.0

    def body():
        start = time.perf_counter()
        points, dephasing = rate_sweep_configs(n)
        es = [suite.run(c).steady.E_s for c in points]
        e_dep = suite.run(dephasing).steady.E_s
        elapsed = time.perf_counter() - start
        monotone = all(b <= a for a, b in zip(es, es[1:]))
        robust = e_dep > es[2]
        ok = monotone and robust and elapsed < budget
        return ok, (f"N={n} E_s over gamma01 (0.02, 0.05, 0.1, 0.2) = "
                    f"({', '.join(f'{e:.5f}' for e in es)}), dephasing-only {e_dep:.5f}, "
                    f"runtime {elapsed:.0f} s")

    return _timed(6, "stable energy vs decay rate", body)


def check_self_discharge_ordering(suite: Suite) -> CheckResult:
    if suite.fast:
        return CheckResult(7, "self-discharge vs dephasing and gap", True, "N=3 only",
                           skipped=True)

    def body():
        by_rate, by_gap = self_discharge_configs()
        e_rate = [suite.run(c).E_eval for c in by_rate]
        e_gap = [suite.run(c).E_eval for c in by_gap]
        ok = all(b >= a for a, b in zip(e_rate, e_rate[1:])) and all(
            b >= a for a, b in zip(e_gap, e_gap[1:]))
        return ok, (f"E_d(20) over gamma11 = ({', '.join(f'{e:.4f}' for e in e_rate)}); "
                    f"over gap ratio {GAP_RATIOS} = ({', '.join(f'{e:.4f}' for e in e_gap)})")

    return _timed(7, "self-discharge vs dephasing and gap", body)


def _first_charge_has_resource(rec):
    de, c, s = (np.asarray(rec.samples[k]) for k in ("delta_E", "C", "S"))
    zero_start = abs(de[0]) <= 1e-12 and abs(c[0]) <= 1e-12 and abs(s[0]) <= 1e-12
    idx = np.flatnonzero(de > 1e-6)
    if idx.size == 0:
        return zero_start, "never charged"
    i = idx[0]
    return zero_start and (c[i] > 1e-6 or s[i] > 1e-6), (
        f"first charged sample t={rec.times[i]:.3g} has C={c[i]:.2e}, S={s[i]:.2e}")


def check_resources(suite: Suite) -> CheckResult:
    def body():
        notes, ok = [], True
        charging = [default_params("charge-single-cell")] + list(single_cell_variants()[:2])
        if not suite.fast:
            charging.append(n3_charging())
        for cfg in charging:
            good, note = _first_charge_has_resource(suite.run(cfg).record)
            ok &= good
            notes.append(f"N={cfg.model.N} modes={cfg.model.modes} g={cfg.model.g[0]}: {note}")
        if not suite.fast:
            res = suite.run(n3_charging())
            st = res.steady
            if st is None or not st.is_steady:
                ok = False
                notes.append("N=3 dephasing run never steady")
            else:
                t = np.asarray(res.record.times)
                s = np.asarray(res.record.samples["S"])
                after = s[t > st.t_steady]
                worst = float(after.max()) if after.size else 0.0
                ok &= worst < 1e-3
                notes.append(f"after t_steady={st.t_steady:.3g}: max S = {worst:.2e}")
        return ok, "; ".join(notes)

    return _timed(8, "coherence/entanglement and energy", body)


def check_single_cell(suite: Suite) -> CheckResult:
    def body():
        one, two, drive = single_cell_variants()
        p1 = suite.run(one).metrics.P_max
        p2 = suite.run(two).metrics.P_max
        pd = suite.run(drive).metrics.P_max
        return p1 > pd and p2 > p1, (
            f"P_max drive {pd:.4g} < one-mode {p1:.4g} < two-mode {p2:.4g}")

    return _timed(9, "single-cell power ordering", body)


def check_determinism(suite: Suite) -> CheckResult:
    def body():
        cfg = default_params("charge-single-cell")
        cfg.integrator.t_end = 5.0
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
            outputs = []
            out = Path(tmp) / "out"
            for _ in range(2):
                proc = subprocess.run(
                    [sys.executable, "-m", "qbatt.runner.cli", "simulate",
                     "--config", str(path), "--out", str(out), "--svg"],
                    capture_output=True, text=True,
                )
                if proc.returncode != 0:
                    return False, f"simulate exited {proc.returncode}: {proc.stderr.strip()}"
                outputs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        same = outputs[0] == outputs[1] and bool(outputs[0])
        return same, f"{len(outputs[0])} files, byte-identical {same}"

    return _timed(10, "deterministic simulate output", body)


def check_cptp(suite: Suite) -> CheckResult:
    """Runs every shipped scenario (through the other checks) and scans diagnostics."""

    def body():
        for kind in ("charge-single-cell", "charge-qutrit-drive"):
            suite.run(default_params(kind))
        if not suite.fast:
            suite.run(default_params("charge-resonator-qutrits"))
            suite.run(default_params("self-discharge"))
        worst = {"trace_err": 0.0, "herm_err": 0.0, "min_eig": math.inf}
        count = 0
        for _, rec in suite.records():
            count += 1
            d = rec.diagnostics
            worst["trace_err"] = max(worst["trace_err"], max(d["trace_err"]))
            worst["herm_err"] = max(worst["herm_err"], max(d["herm_err"]))
            worst["min_eig"] = min(worst["min_eig"], min(d["min_eig"]))
        ok = (worst["trace_err"] < TRACE_LIMIT and worst["herm_err"] < HERMITIAN_TOL
              and worst["min_eig"] > -POSITIVITY_TOL)
        return ok, (f"{count} trajectories: max trace err {worst['trace_err']:.1e}, "
                    f"max hermiticity err {worst['herm_err']:.1e}, "
                    f"min eigenvalue {worst['min_eig']:.1e}")

    return _timed(2, "CPTP diagnostics on every scenario", body)


#: execution order; the CPTP scan runs last so it sees every trajectory
CHECKS = (
    check_analytic,
    check_closed_system,
    check_cross_integrator,
    check_cutoff,
    check_rate_ordering,
    check_self_discharge_ordering,
    check_resources,
    check_single_cell,
    check_determinism,
    check_cptp,
)


def run_suite(fast: bool = False, stream=None, suite: Suite | None = None) -> list[CheckResult]:
    suite = suite or Suite(fast=fast)
    results = []
    for check in CHECKS:
        res = check(suite)
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    results.sort(key=lambda r: r.number)
    return results
