"""Receding-horizon simulation with warm-started re-solves.

All agents execute the converged game strategies between replans; scripted
disturbances override one player's turn rate over a time window.  When the
replan interval is not a multiple of dt the final step of each window is a
partial zero-order-hold step, and the warm start shifts by the number of
grid boundaries crossed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import _rk4
from ..errors import DegenerateGeometryError, DivergenceError, EpisodeError, InvalidArgumentError, SolveFailure
from ..lqgame import AffineStrategy, control_slices
from ..scenarios import build_problem
from ..scenarios.schema import Disturbance, ScenarioSpec
from ..solver import OperatingPoint, SolverConfig, ilq_solve
from .montecarlo import pairwise_min_distance

# times are compared on a grid rounded to this many decimals
_DIGITS = 9


@dataclass
class ReplanRecord:
    index: int
    time: float
    state: np.ndarray
    solve_time: float
    iterations: int
    converged: bool
    planned: np.ndarray
    max_alpha: list = field(default_factory=list)  # per solver iteration


@dataclass
class Segment:
    """Controls held constant over [start, start + duration] from ``state``."""

    start: float
    duration: float
    state: np.ndarray
    controls: np.ndarray


@dataclass
class RecedingHorizonLog:
    scenario: str
    episode_length: float
    replan_interval: float
    replans: list[ReplanRecord] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)
    final_state: np.ndarray | None = None
    min_distance: float = math.inf

    @property
    def times(self) -> np.ndarray:
        return np.array([s.start for s in self.segments] + [self.episode_length])

    @property
    def states(self) -> np.ndarray:
        """Executed trace sampled at every segment boundary."""
        return np.vstack([s.state for s in self.segments] + [self.final_state])

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.replans)

    @property
    def solve_times(self) -> np.ndarray:
        return np.array([r.solve_time for r in self.replans])

    def summary(self) -> dict:
        t = self.solve_times
        return {
            "scenario": self.scenario,
            "episode_length": self.episode_length,
            "replan_interval": self.replan_interval,
            "replans": len(self.replans),
            "all_converged": self.all_converged,
            "max_iterations": max((r.iterations for r in self.replans), default=0),
            "mean_solve_time": float(t.mean()) if t.size else 0.0,
            "max_solve_time": float(t.max()) if t.size else 0.0,
            "min_distance": self.min_distance,
        }

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "episode_length": self.episode_length,
            "replan_interval": self.replan_interval,
            "replans": [
                {
                    "index": r.index, "time": r.time, "state": r.state.tolist(),
                    "solve_time": r.solve_time, "iterations": r.iterations,
                    "converged": r.converged, "planned": r.planned.tolist(),
                    "max_alpha": list(r.max_alpha),
                }
                for r in self.replans
            ],
            "segments": [
                {"start": s.start, "duration": s.duration, "state": s.state.tolist(),
                 "controls": s.controls.tolist()}
                for s in self.segments
            ],
            "final_state": None if self.final_state is None else self.final_state.tolist(),
            "min_distance": self.min_distance,
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecedingHorizonLog":
        log = cls(d["scenario"], d["episode_length"], d["replan_interval"])
        for r in d["replans"]:
            log.replans.append(ReplanRecord(
                r["index"], r["time"], np.asarray(r["state"]), r["solve_time"],
                r["iterations"], r["converged"], np.asarray(r["planned"]), list(r.get("max_alpha", [])),
            ))
        for s in d["segments"]:
            log.segments.append(Segment(s["start"], s["duration"], np.asarray(s["state"]),
                                        np.asarray(s["controls"])))
        log.final_state = None if d["final_state"] is None else np.asarray(d["final_state"])
        log.min_distance = d["min_distance"]
        return log


def _grid_index(t: float, dt: float) -> int:
    return int(math.floor(round(t / dt, _DIGITS)))


def _breakpoints(start: float, stop: float, dt: float, disturbances) -> list[float]:
    """Segment boundaries in [start, stop]: plan grid points and disturbance edges."""
    points = {round(start, _DIGITS), round(stop, _DIGITS)}
    k = 1
    while round(start + k * dt, _DIGITS) < round(stop, _DIGITS):
        points.add(round(start + k * dt, _DIGITS))
        k += 1
    for d in disturbances:
        for edge in (d.time, d.time + d.duration):
            if start < edge < stop:
                points.add(round(edge, _DIGITS))
    return sorted(points)


def _override(controls: list[np.ndarray], t: float, disturbances) -> list[np.ndarray]:
    for d in disturbances:
        if d.time - 1e-9 <= t < d.time + d.duration - 1e-9:
            controls[d.player] = controls[d.player].copy()
            controls[d.player][0] = d.heading_change / d.duration
    return controls


def execute_window(
    system,
    plan: OperatingPoint,
    feedback: AffineStrategy,
    x: np.ndarray,
    start: float,
    stop: float,
    dt: float,
    disturbances: tuple[Disturbance, ...] = (),
) -> tuple[list[Segment], np.ndarray]:
    """Run u = u_hat - P (x - x_hat) from ``x`` over [start, stop].

    Plan index j covers [start + j dt, start + (j + 1) dt); each segment
    re-evaluates the feedback at its own start state.
    """
    slices = control_slices(system.control_dims)
    u_hat = np.concatenate(plan.us, axis=1)
    P = np.concatenate(feedback.P, axis=1)
    points = _breakpoints(start, stop, dt, disturbances)
    segments = []
    for a, b in zip(points[:-1], points[1:]):
        j = min(_grid_index(a - start, dt), plan.num_steps - 1)
        u = u_hat[j] - P[j] @ (x - plan.xs[j])
        per_player = _override([u[s] for s in slices], a, disturbances)
        u = np.concatenate(per_player)
        segments.append(Segment(a, b - a, x.copy(), u))
        x = _rk4(system, x, [u[s].tolist() for s in slices], b - a)
        if not np.isfinite(x).all():
            raise DivergenceError("executed trajectory became non-finite", time_index=j)
    return segments, x


def reintegrate(system, segments: list[Segment]) -> np.ndarray:
    """States at each segment end, integrated from the logged controls."""
    slices = control_slices(system.control_dims)
    out = []
    for seg in segments:
        out.append(_rk4(system, seg.state, [seg.controls[s].tolist() for s in slices], seg.duration))
    return np.array(out)


def run_receding_horizon(
    spec: ScenarioSpec,
    episode_length: float | None = None,
    replan_interval: float | None = None,
    config: SolverConfig | None = None,
) -> RecedingHorizonLog:
    """Simulate an episode, re-solving the game from the executed state at every replan."""
    problem = build_problem(spec)
    system, costs = problem.system, problem.costs
    config = config or problem.config
    receding = spec.receding
    episode_length = episode_length if episode_length is not None else (
        receding.episode if receding else spec.time.horizon)
    replan_interval = replan_interval if replan_interval is not None else (
        receding.replan if receding else spec.time.dt)
    disturbances = receding.disturbances if receding else ()
    if not episode_length > 0 or not replan_interval > 0:
        raise InvalidArgumentError("episode length and replan interval must be positive")
    dt = config.dt
    if replan_interval > config.discretization.horizon:
        raise InvalidArgumentError(
            f"replan interval {replan_interval} s exceeds the {config.discretization.horizon} s horizon"
        )

    log = RecedingHorizonLog(spec.name, float(episode_length), float(replan_interval))
    x = np.array(problem.x0, dtype=float)
    strategy = anchor = None
    num_replans = int(math.ceil(round(episode_length / replan_interval, _DIGITS)))
    for index in range(num_replans):
        t = round(index * replan_interval, _DIGITS)
        stop = round(min(t + replan_interval, episode_length), _DIGITS)
        start_clock = time.perf_counter()
        try:
            result = ilq_solve(system, costs, x, config, initial_strategy=strategy, anchor=anchor)
        except (DivergenceError, SolveFailure, DegenerateGeometryError) as exc:
            raise EpisodeError(f"solve at t={t:g} s failed: {exc}", replan_index=index) from exc
        solve_time = time.perf_counter() - start_clock
        plan = result.operating_point
        log.replans.append(ReplanRecord(index, t, x.copy(), solve_time, result.iterations,
                                        result.converged, plan.xs.copy(), result.alpha_history.tolist()))
        try:
            segments, x = execute_window(system, plan, result.strategies, x, t, stop, dt, disturbances)
        except DivergenceError as exc:
            raise EpisodeError(f"execution failed: {exc}", replan_index=index) from exc
        log.segments.extend(segments)
        shift = _grid_index(stop, dt) - _grid_index(t, dt)
        strategy = result.strategies.shifted(shift)
        anchor = plan.shifted(shift)

    log.final_state = x
    log.min_distance = pairwise_min_distance(system, log.states) if system.num_players > 1 else math.inf
    return log
