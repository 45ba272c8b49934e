"""Command line entry point.

Exit codes: 0 success, 1 config error, 2 integration failure, 3 validation
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigError, FileError, IntegrationError, QBattError
from .config import SCENARIOS, SWEEP_AXES, SweepConfig, load_config
from .output import emit_csv, write_outputs
from .scenarios import RUNNERS, default_params, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION, EXIT_VALIDATION = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qbatt", description="Resonator-qutrits quantum battery simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", help="output directory (overrides output_dir)")
    sim.add_argument("--svg", action="store_true", help="also write SVG charts")

    sw = sub.add_parser("sweep", help="sweep one parameter of a scenario")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out")
    sw.add_argument("--svg", action="store_true")

    val = sub.add_parser("validate", help="run the oracle and property checks")
    val.add_argument("--fast", action="store_true", help="N<=2 checks only")

    de = sub.add_parser("defaults", help="print the default config of a scenario")
    de.add_argument("--scenario", required=True)
    return ap


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as numbers", "values") from None
    if not values:
        raise ConfigError("sweep values must not be empty", "values")
    return values


def _simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.scenario == "validate":
        return _validate(fast=False)
    if args.out:
        cfg.output_dir = args.out
    if args.svg:
        cfg.emit_svg = True
    return _run_and_write(cfg)


def _run_and_write(cfg) -> int:
    try:
        result = run_scenario(cfg)
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        if exc.record is not None and len(exc.record):
            stem = cfg.label or cfg.scenario
            path = Path(cfg.output_dir) / f"{stem}_partial.csv"
            emit_csv(exc.record, path, {"failed": True, **cfg.to_dict()})
            print(f"partial record: {path}", file=sys.stderr)
        return EXIT_INTEGRATION
    files = write_outputs(result, cfg.output_dir, cfg.emit_svg)
    for rec in (result.record, result.charge_record):
        for flag in (rec.flags if rec is not None else []):
            print(f"warning: {flag}", file=sys.stderr)
    _summary(result)
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def _summary(result):
    if result.metrics is not None:
        m = result.metrics
        print(f"delta_E={m.delta_E:.6g} P_max={m.P_max:.6g} E_s={m.E_s:.6g} "
              f"C={m.C:.6g} S={m.S:.6g}")
    if result.steady is not None:
        s = result.steady
        print(f"steady={s.is_steady} t_steady={s.t_steady:.6g}")
    for cutoff, e_s in result.cutoff_history:
        print(f"cutoff {cutoff}: E_s={e_s:.10g}")
    if result.E_eval is not None:
        print(f"E_d(t_eval)={result.E_eval:.6g}")
    if result.table is not None:
        t = result.table
        for v, e, p, ts, ed in t.rows():
            extra = f" E_d={ed:.6g}" if ed is not None else ""
            print(f"{t.axis}={v:.6g} E_s={e:.6g} P_max={p:.6g} t_steady={ts:.6g}{extra}")


def _sweep(args) -> int:
    cfg = load_config(args.config)
    values = _parse_values(args.values)
    base = cfg.scenario if cfg.scenario in RUNNERS else (
        cfg.sweep.base if cfg.sweep is not None else "charge-resonator-qutrits")
    tie = cfg.sweep.tie_rates if cfg.sweep is not None else True
    cfg.sweep = SweepConfig(axis=args.axis, values=values, tie_rates=tie, base=base)
    cfg.scenario = "rate-sweep" if args.axis != "gap_ratio" else "gap-sweep"
    if args.out:
        cfg.output_dir = args.out
    if args.svg:
        cfg.emit_svg = True
    return _run_and_write(cfg)


def _validate(fast: bool) -> int:
    from .validation import run_suite

    results = run_suite(fast=fast, stream=sys.stdout)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def _defaults(args) -> int:
    if args.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {args.scenario!r}; "
                          f"choose from {', '.join(SCENARIOS)}", "scenario")
    print(json.dumps(default_params(args.scenario).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _simulate(args)
        if args.command == "sweep":
            return _sweep(args)
        if args.command == "validate":
            return _validate(args.fast)
        return _defaults(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except QBattError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
