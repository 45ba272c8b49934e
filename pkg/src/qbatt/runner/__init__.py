"""Config-driven scenarios, file outputs, the validation suite and the CLI."""

from .config import ScenarioConfig, config_from_dict, load_config
from .scenarios import RunResult, SweepTable, default_params, run_scenario

__all__ = [
    "RunResult",
    "ScenarioConfig",
    "SweepTable",
    "config_from_dict",
    "default_params",
    "load_config",
    "run_scenario",
]
