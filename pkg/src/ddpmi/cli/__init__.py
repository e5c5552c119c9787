"""Command-line scenario runner.

Canned scenarios live in ``ddpmi/cli/scenarios``; any of them can be named
by file stem instead of a path.
"""

from ddpmi.cli.config import ConfigError, ScenarioConfig, dump_scenario, load_scenario, parse_scenario
from ddpmi.cli.runner import run_scenario, run_sweep, simulate

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "dump_scenario",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "run_sweep",
    "simulate",
]
