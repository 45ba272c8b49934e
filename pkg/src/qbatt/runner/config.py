"""JSON scenario configuration with strict key checking.

A config document looks like::

    {
      "scenario": "charge-resonator-qutrits",
      "model": {"N": 3, "J": 1.0, "g": [1.0], "kappa": 0.1, ...},
      "integrator": {"method": "adaptive-embedded", "t_end": 20.0, ...},
      "steady": {"window": 10.0, "tol": 1e-4},
      "output_dir": "out",
      "emit_svg": false
    }

Unknown keys anywhere are rejected with the dotted path of the offending
field, so a misspelt rate name never silently falls back to its default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..engine import IntegratorConfig
from ..errors import ConfigError, QBattError
from ..model import DriveParams, ModelParams

SCENARIOS = (
    "charge-resonator-qutrits",
    "charge-single-cell",
    "charge-qutrit-drive",
    "self-discharge",
    "rate-sweep",
    "gap-sweep",
    "validate",
)

#: sweep axes and the model fields they set
SWEEP_AXES = (
    "kappa",
    "gamma01",
    "gamma12",
    "gamma11",
    "gamma22",
    "g",
    "J",
    "gap_ratio",
    "cutoff",
    "n_photons",
    "N",
)


@dataclass
class SteadyConfig:
    window: float = 10.0
    tol: float = 1e-4
    #: end the run at the first plateau (plus ``extra`` time units)
    stop_when_steady: bool = False
    extra: float = 0.0


@dataclass
class DischargeConfig:
    """Self-discharge phase: start from the charged battery or from |2...2>."""

    initial: str = "charged"
    t_charge: float = 20.0
    t_end: float = 50.0
    t_eval: float = 20.0


@dataclass
class ConvergenceConfig:
    """Fock cutoff guard: rerun with ``cutoff + step`` until E_s moves by < ``tol``."""

    cutoff_guard: bool = False
    tol: float = 1e-6
    step: int = 4
    max_cutoff: int = 24


@dataclass
class SweepConfig:
    axis: str = "gamma01"
    values: list = field(default_factory=list)
    #: keep gamma12 = 2 gamma01 and gamma22 = 2 gamma11 while sweeping
    tie_rates: bool = True
    #: scenario each sweep point runs
    base: str = "charge-resonator-qutrits"


@dataclass
class ScenarioConfig:
    scenario: str = "charge-resonator-qutrits"
    model: ModelParams = field(default_factory=ModelParams)
    drive: DriveParams | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    steady: SteadyConfig = field(default_factory=SteadyConfig)
    discharge: DischargeConfig | None = None
    sweep: SweepConfig | None = None
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    output_dir: str = "out"
    emit_svg: bool = False
    label: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario,
            "label": self.label,
            "model": self.model.to_dict(),
            "integrator": _plain(self.integrator),
            "steady": _plain(self.steady),
            "convergence": _plain(self.convergence),
            "output_dir": self.output_dir,
            "emit_svg": self.emit_svg,
            "seed": self.seed,
        }
        if self.drive is not None:
            d["drive"] = _plain(self.drive)
            d["drive"]["omega_levels"] = list(self.drive.omega_levels)
        if self.discharge is not None:
            d["discharge"] = _plain(self.discharge)
        if self.sweep is not None:
            d["sweep"] = _plain(self.sweep)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def copy(self) -> "ScenarioConfig":
        return copy.deepcopy(self)


def _plain(obj) -> dict:
    return {f.name: copy.deepcopy(getattr(obj, f.name)) for f in fields(obj)}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}" if path else key)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (QBattError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validate a parsed JSON document into a :class:`ScenarioConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    known = {f.name for f in fields(ScenarioConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", key)
    scenario = data.get("scenario", "charge-resonator-qutrits")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}", "scenario")
    from .scenarios import default_params

    cfg = default_params(scenario)
    nested = {
        "model": ModelParams,
        "drive": DriveParams,
        "integrator": IntegratorConfig,
        "steady": SteadyConfig,
        "discharge": DischargeConfig,
        "sweep": SweepConfig,
        "convergence": ConvergenceConfig,
    }
    for key, cls in nested.items():
        if key not in data:
            continue
        if data[key] is None and key in ("drive", "discharge", "sweep"):
            setattr(cfg, key, None)
            continue
        if not isinstance(data[key], dict):
            raise ConfigError("expected an object", key)
        base = getattr(cfg, key)
        merged = _plain(base) if base is not None else {}
        for k in data[key]:
            if k not in {f.name for f in fields(cls)}:
                raise ConfigError(f"unknown key {k!r}", f"{key}.{k}")
        merged.update(data[key])
        if key == "model" and "cutoff" not in data[key] and (
            "n_photons" in data[key] or "N" in data[key]
        ):
            merged["cutoff"] = None
        if key == "model" and "modes" in data[key]:
            # per-mode lists inherited from the defaults are rebroadcast
            for name in ("omega_r", "g"):
                if name not in data[key] and merged.get(name):
                    merged[name] = list(merged[name])[:1]
        setattr(cfg, key, _build(cls, merged, key))
    for key in ("output_dir", "emit_svg", "label", "seed", "scenario"):
        if key in data:
            setattr(cfg, key, data[key])
    if not isinstance(cfg.emit_svg, bool):
        raise ConfigError("must be true or false", "emit_svg")
    conv = cfg.convergence
    if not isinstance(conv.cutoff_guard, bool):
        raise ConfigError("must be true or false", "convergence.cutoff_guard")
    if not conv.tol > 0 or int(conv.step) != conv.step or conv.step < 1:
        raise ConfigError("tol must be positive and step a positive integer", "convergence")
    if cfg.discharge is not None and cfg.discharge.initial not in ("charged", "excited"):
        raise ConfigError("must be 'charged' or 'excited'", "discharge.initial")
    if cfg.sweep is not None:
        if cfg.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {cfg.sweep.axis!r}", "sweep.axis")
        if scenario in ("rate-sweep", "gap-sweep") and not cfg.sweep.values:
            raise ConfigError("sweep values must not be empty", "sweep.values")
        if cfg.sweep.base not in SCENARIOS[:4]:
            raise ConfigError(f"cannot sweep scenario {cfg.sweep.base!r}", "sweep.base")
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(data)
