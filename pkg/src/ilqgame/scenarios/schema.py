"""Scenario configuration: YAML documents validated into solver problems."""

from __future__ import annotations

import math
from typing import Annotated, Literal, NamedTuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .. import cost as costs
from ..dynamics import (
    Bicycle5D,
    DubinsConstantSpeed3D,
    MultiPlayerSystem,
    TimeDiscretization,
    Unicycle4D,
)
from ..errors import InvalidArgumentError, ScenarioError
from ..solver import SolverConfig

PositiveFloat = Annotated[float, Field(gt=0)]
Weight = Annotated[float, Field(ge=0)]
Point = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- player models ---

class UnicycleModel(_Strict):
    kind: Literal["unicycle4d"]


class BicycleModel(_Strict):
    kind: Literal["bicycle5d"]
    wheelbase: PositiveFloat = 2.5


class DubinsModel(_Strict):
    kind: Literal["dubins3d"]
    speed: PositiveFloat = 1.0


ModelSpec = Annotated[Union[UnicycleModel, BicycleModel, DubinsModel], Field(discriminator="kind")]


def _make_model(spec):
    if spec.kind == "unicycle4d":
        return Unicycle4D()
    if spec.kind == "bicycle5d":
        return Bicycle5D(spec.wheelbase)
    return DubinsConstantSpeed3D(spec.speed)


# --- cost terms ---

class WallTerm(_Strict):
    kind: Literal["Wall"]
    weight: Weight
    d_hall: PositiveFloat | None = None


class ProximityTerm(_Strict):
    kind: Literal["Proximity"]
    weight: Weight
    other: int
    d_prox: PositiveFloat


class GoalTerm(_Strict):
    kind: Literal["Goal"]
    weight: Weight
    t_goal: Annotated[float, Field(ge=0)]
    goal: Point | None = None


class ControlTerm(_Strict):
    kind: Literal["ControlQuadratic"]
    weight: Weight
    diag: tuple[PositiveFloat, ...]
    player: int | None = None


class LaneCenterTerm(_Strict):
    kind: Literal["LaneCenter"]
    weight: Weight
    lane: str


class LaneBoundaryTerm(_Strict):
    kind: Literal["LaneBoundary"]
    weight: Weight
    lane: str
    d_lane: PositiveFloat | None = None


class NominalSpeedTerm(_Strict):
    kind: Literal["NominalSpeed"]
    weight: Weight
    v_ref: float


class SpeedBoundsTerm(_Strict):
    kind: Literal["SpeedBounds"]
    weight: Weight
    v_min: float
    v_max: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.v_min > self.v_max:
            raise ValueError(f"v_min {self.v_min} exceeds v_max {self.v_max}")
        return self


CostTerm = Annotated[
    Union[WallTerm, ProximityTerm, GoalTerm, ControlTerm, LaneCenterTerm, LaneBoundaryTerm,
          NominalSpeedTerm, SpeedBoundsTerm],
    Field(discriminator="kind"),
]


class Regularization(_Strict):
    state: Annotated[float, Field(ge=0)] = 0.0
    control: Annotated[float, Field(ge=0)] = 0.0


class PlayerSpec(_Strict):
    name: str
    model: ModelSpec
    initial_state: tuple[float, ...]
    goal: Point | None = None
    costs: tuple[CostTerm, ...] = Field(min_length=1)
    regularization: Regularization = Regularization()


# --- global sections ---

class TimeSpec(_Strict):
    dt: PositiveFloat
    horizon: PositiveFloat


class SolverSpec(_Strict):
    eta: Annotated[float, Field(gt=0, le=1)] = 0.01
    tolerance: PositiveFloat = 0.01
    max_iterations: Annotated[int, Field(ge=1)] = 100
    step_policy: Literal["fixed", "decay"] = "fixed"
    decay_rate: Annotated[float, Field(gt=0, le=1)] = 0.95
    eps_initial: PositiveFloat = 1e-4
    eps_growth: Annotated[float, Field(gt=1)] = 10.0
    eps_max: PositiveFloat = 1.0
    divergence_retries: Annotated[int, Field(ge=0)] = 5


class GeometrySpec(_Strict):
    d_hall: PositiveFloat | None = None
    lanes: dict[str, tuple[Point, ...]] = {}
    d_lane: PositiveFloat | None = None

    @model_validator(mode="after")
    def _lanes_long_enough(self):
        for name, pts in self.lanes.items():
            if len(pts) < 2:
                raise ValueError(f"lane {name!r} needs at least two points")
        return self


class Range(_Strict):
    low: float
    high: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.low > self.high:
            raise ValueError(f"low {self.low} exceeds high {self.high}")
        return self


class MonteCarloSpec(_Strict):
    amplitude: Range = Range(low=0.0, high=1.0)
    frequency: Range = Range(low=0.0, high=0.5)
    phase: Range = Range(low=0.0, high=2 * math.pi)
    cluster_threshold: PositiveFloat = 10.0
    min_cluster_size: Annotated[int, Field(ge=1)] = 2


class Disturbance(_Strict):
    """Scripted turn: the player's first control channel is overridden so its
    heading changes by ``heading_change`` spread over ``duration`` seconds."""

    time: Annotated[float, Field(ge=0)]
    player: int
    heading_change: float
    duration: PositiveFloat = 0.5


class RecedingSpec(_Strict):
    episode: PositiveFloat = 20.0
    replan: PositiveFloat = 0.25
    disturbances: tuple[Disturbance, ...] = ()


class ScenarioSpec(_Strict):
    name: str
    time: TimeSpec
    solver: SolverSpec = SolverSpec()
    geometry: GeometrySpec = GeometrySpec()
    players: tuple[PlayerSpec, ...] = Field(min_length=1)
    montecarlo: MonteCarloSpec = MonteCarloSpec()
    receding: RecedingSpec | None = None


def _check_consistency(spec: ScenarioSpec) -> None:
    """Cross-field checks; raises ScenarioError with a dotted field path."""
    n_players = len(spec.players)
    geom = spec.geometry
    for i, player in enumerate(spec.players):
        base = f"players.{i}"
        model = _make_model(player.model)
        if len(player.initial_state) != model.state_dim:
            raise ScenarioError(
                f"expected {model.state_dim} entries for {player.model.kind}, "
                f"got {len(player.initial_state)}",
                field=f"{base}.initial_state",
            )
        for j, term in enumerate(player.costs):
            where = f"{base}.costs.{j}"
            if isinstance(term, WallTerm):
                d_hall = term.d_hall or geom.d_hall
                if d_hall is None:
                    raise ScenarioError("Wall needs d_hall here or under geometry", field=f"{where}.d_hall")
            elif isinstance(term, ProximityTerm):
                if not 0 <= term.other < n_players or term.other == i:
                    raise ScenarioError(f"invalid other-player index {term.other}", field=f"{where}.other")
            elif isinstance(term, GoalTerm):
                if term.goal is None and player.goal is None:
                    raise ScenarioError("Goal term without a goal position", field=f"{where}.goal")
            elif isinstance(term, ControlTerm):
                target = i if term.player is None else term.player
                if not 0 <= target < n_players:
                    raise ScenarioError(f"invalid player index {target}", field=f"{where}.player")
                m = _make_model(spec.players[target].model).control_dim
                if len(term.diag) != m:
                    raise ScenarioError(f"expected {m} diagonal entries, got {len(term.diag)}",
                                        field=f"{where}.diag")
            elif isinstance(term, (LaneCenterTerm, LaneBoundaryTerm)):
                if term.lane not in geom.lanes:
                    raise ScenarioError(f"unknown lane {term.lane!r}", field=f"{where}.lane")
                if isinstance(term, LaneBoundaryTerm) and (term.d_lane or geom.d_lane) is None:
                    raise ScenarioError("LaneBoundary needs d_lane here or under geometry",
                                        field=f"{where}.d_lane")
            elif isinstance(term, (NominalSpeedTerm, SpeedBoundsTerm)):
                if model.speed_index is None:
                    raise ScenarioError(f"{player.model.kind} has no speed state", field=f"{where}.kind")
        if geom.d_hall is not None and abs(player.initial_state[1]) > geom.d_hall:
            raise ScenarioError(
                f"initial p_y {player.initial_state[1]} lies outside the hallway",
                field=f"{base}.initial_state",
            )
    if spec.receding is not None:
        for j, dist in enumerate(spec.receding.disturbances):
            if not 0 <= dist.player < n_players:
                raise ScenarioError(f"invalid player index {dist.player}",
                                    field=f"receding.disturbances.{j}.player")
    TimeDiscretization(spec.time.dt, spec.time.horizon)


# --- parsing and line lookup ---

def _locate(root, path) -> int | None:
    """1-based line of the deepest node along ``path`` in a composed YAML tree."""
    node, line = root, None
    if node is None:
        return None
    line = node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = (k, v)
                    break
            if nxt is None:
                return line
            node = nxt[1]
            line = nxt[0].start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            if key >= len(node.value):
                return line
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _error_path(loc, data) -> list:
    """Strip discriminator tags pydantic inserts into union locations."""
    path, cursor = [], data
    for part in loc:
        if isinstance(cursor, dict) and part in cursor:
            path.append(part)
            cursor = cursor[part]
        elif isinstance(cursor, list) and isinstance(part, int) and part < len(cursor):
            path.append(part)
            cursor = cursor[part]
        elif isinstance(cursor, dict) and isinstance(part, str) and part not in cursor:
            if part == cursor.get("kind") or part.startswith("function-"):
                continue
            path.append(part)
            cursor = None
        else:
            path.append(part)
            cursor = None
    return path


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                            line=None if mark is None else mark.line + 1) from exc
    if not isinstance(data, dict):
        raise ScenarioError("a scenario document must be a mapping", line=1)
    try:
        spec = ScenarioSpec.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _error_path(err["loc"], data)
        raise ScenarioError(
            err["msg"], field=".".join(str(p) for p in path), line=_locate(root, path)
        ) from exc
    try:
        _check_consistency(spec)
    except ScenarioError as exc:
        path = [int(p) if p.isdigit() else p for p in exc.field.split(".")] if exc.field else []
        raise ScenarioError(exc.message, field=exc.field, line=_locate(root, path)) from None
    except InvalidArgumentError as exc:
        raise ScenarioError(str(exc), field="time", line=_locate(root, ["time"])) from exc
    return spec


def serialize_scenario(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(spec.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


# --- problem assembly ---

class Problem(NamedTuple):
    system: MultiPlayerSystem
    costs: list
    x0: np.ndarray
    config: SolverConfig


def build_system(spec: ScenarioSpec) -> MultiPlayerSystem:
    return MultiPlayerSystem(tuple(_make_model(p.model) for p in spec.players))


def _primitive(term, i, player, system, spec):
    pos = system.position_indices(i)
    geom = spec.geometry
    if isinstance(term, WallTerm):
        return costs.Wall(term.weight, pos[1], term.d_hall or geom.d_hall)
    if isinstance(term, ProximityTerm):
        return costs.Proximity(term.weight, pos, system.position_indices(term.other), term.d_prox)
    if isinstance(term, GoalTerm):
        goal = term.goal if term.goal is not None else player.goal
        return costs.Goal(term.weight, pos, tuple(goal), term.t_goal, spec.time.horizon)
    if isinstance(term, ControlTerm):
        return costs.ControlQuadratic(term.weight, i if term.player is None else term.player, term.diag)
    if isinstance(term, LaneCenterTerm):
        return costs.LaneCenter(term.weight, pos, costs.Polyline(geom.lanes[term.lane]))
    if isinstance(term, LaneBoundaryTerm):
        return costs.LaneBoundary(term.weight, pos, costs.Polyline(geom.lanes[term.lane]),
                                  term.d_lane or geom.d_lane)
    if isinstance(term, NominalSpeedTerm):
        return costs.NominalSpeed(term.weight, system.speed_index(i), term.v_ref)
    if isinstance(term, SpeedBoundsTerm):
        return costs.SpeedBounds(term.weight, system.speed_index(i), term.v_min, term.v_max)
    raise TypeError(f"unhandled cost term {term!r}")


def solver_config(spec: ScenarioSpec, horizon: float | None = None) -> SolverConfig:
    td = TimeDiscretization(spec.time.dt, spec.time.horizon if horizon is None else horizon)
    return SolverConfig(td, **spec.solver.model_dump())


def build_problem(spec: ScenarioSpec) -> Problem:
    system = build_system(spec)
    player_costs = []
    for i, player in enumerate(spec.players):
        prims = tuple(_primitive(t, i, player, system, spec) for t in player.costs)
        reg = player.regularization
        player_costs.append(costs.PlayerCost(i, prims, reg.state, reg.control))
    x0 = np.concatenate([np.asarray(p.initial_state, dtype=float) for p in spec.players])
    return Problem(system, player_costs, x0, solver_config(spec))
