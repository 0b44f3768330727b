"""Built-in experiment scenarios and the configuration file format."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .schema import (
    Problem,
    ScenarioSpec,
    build_problem,
    build_system,
    parse_scenario,
    serialize_scenario,
    solver_config,
)

BUILTIN = ("hallway", "intersection", "collision_avoidance")


def builtin_text(name: str) -> str:
    if name not in BUILTIN:
        raise KeyError(f"no built-in scenario {name!r}; choose from {', '.join(BUILTIN)}")
    return resources.files(__package__).joinpath("data", f"{name}.yaml").read_text()


def load_builtin(name: str) -> ScenarioSpec:
    return parse_scenario(builtin_text(name))


def load_scenario(source: str | Path) -> ScenarioSpec:
    """Parse a scenario file, or a built-in by name when no such file exists."""
    path = Path(source)
    if path.is_file():
        return parse_scenario(path.read_text())
    if str(source) in BUILTIN:
        return load_builtin(str(source))
    raise FileNotFoundError(f"scenario file not found: {source}")


__all__ = [
    "BUILTIN",
    "Problem",
    "ScenarioSpec",
    "build_problem",
    "build_system",
    "builtin_text",
    "load_builtin",
    "load_scenario",
    "parse_scenario",
    "serialize_scenario",
    "solver_config",
]
