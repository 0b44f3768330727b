"""Iterative LQ game solver.

Each iteration rolls the nonlinear system out under the current affine
strategies, linearizes and quadraticizes about the resulting trajectory,
solves the LQ game for new candidate strategies and damps their affine
terms by the step size before the next rollout.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cost import PlayerCost, evaluate_total_cost
from .dynamics import (
    MultiPlayerSystem,
    TimeDiscretization,
    _rk4,
    discretize,
    linearize_trajectory,
)
from .errors import DivergenceError, InvalidArgumentError, SolveFailure
from .lqgame import AffineStrategy, LQGameStage, ValueApprox, control_slices, solve_lq_game

log = logging.getLogger(__name__)


@dataclass
class OperatingPoint:
    """A trajectory iterate: states (K, n) and per-player controls (K, m_i)."""

    xs: np.ndarray
    us: list

    @property
    def x0(self) -> np.ndarray:
        return self.xs[0]

    @property
    def num_steps(self) -> int:
        return self.xs.shape[0]

    def controls_at(self, k: int) -> list[np.ndarray]:
        return [u[k] for u in self.us]

    def shifted(self, steps: int) -> "OperatingPoint":
        """Drop the first ``steps`` entries, holding the final state and control."""
        from .lqgame import _shift

        return OperatingPoint(_shift(self.xs, steps), [_shift(u, steps) for u in self.us])


@dataclass
class SolverConfig:
    discretization: TimeDiscretization
    eta: float = 0.01
    tolerance: float = 0.01
    max_iterations: int = 100
    step_policy: str = "fixed"
    decay_rate: float = 0.95
    eps_initial: float = 1e-4
    eps_growth: float = 10.0
    eps_max: float = 1.0
    divergence_retries: int = 5

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise InvalidArgumentError(f"step size must lie in (0, 1], got {self.eta}")
        if not self.tolerance > 0:
            raise InvalidArgumentError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")
        if self.step_policy not in ("fixed", "decay"):
            raise InvalidArgumentError(f"unknown step policy {self.step_policy!r}")
        if self.step_policy == "decay" and not 0 < self.decay_rate <= 1:
            raise InvalidArgumentError(f"decay rate must lie in (0, 1], got {self.decay_rate}")

    @property
    def dt(self) -> float:
        return self.discretization.dt

    def step_size(self, update_index: int) -> float:
        if self.step_policy == "decay":
            return self.eta * self.decay_rate**update_index
        return self.eta


@dataclass
class IterationRecord:
    iteration: int
    costs: list[float]
    max_alpha: float
    trajectory_change: float
    wall_time: float
    eta: float
    regularization: float = 0.0


@dataclass
class SolveResult:
    converged: bool
    strategies: AffineStrategy
    operating_point: OperatingPoint
    iterations: int
    diagnostics: list[IterationRecord] = field(default_factory=list)
    eta: float = 0.0

    @property
    def final_costs(self) -> list[float]:
        return self.diagnostics[-1].costs

    @property
    def alpha_history(self) -> np.ndarray:
        return np.array([rec.max_alpha for rec in self.diagnostics])

    @property
    def total_time(self) -> float:
        return float(sum(rec.wall_time for rec in self.diagnostics))


def open_loop_operating_point(
    system: MultiPlayerSystem, x0, controls: Sequence[np.ndarray], dt: float
) -> OperatingPoint:
    """Roll out fixed control sequences (no feedback)."""
    controls = [np.asarray(u, dtype=float).reshape(len(controls[0]), -1) for u in controls]
    K = controls[0].shape[0]
    placeholder = OperatingPoint(np.zeros((K, system.n)), controls)
    zero = AffineStrategy.zeros(K, system.n, system.control_dims)
    return compute_operating_point(system, x0, placeholder, zero, 0.0, dt)


def compute_operating_point(
    system: MultiPlayerSystem,
    x0,
    anchor: OperatingPoint,
    strategies: AffineStrategy,
    eta: float,
    dt: float,
) -> OperatingPoint:
    """Roll out u_i = u_hat_i - P_i (x - x_hat) - eta * alpha_i with RK4."""
    x = np.array(x0, dtype=float)
    if x.shape != (system.n,):
        raise InvalidArgumentError(f"initial state has shape {x.shape}, expected ({system.n},)")
    K = anchor.num_steps
    if strategies.num_steps != K:
        raise InvalidArgumentError(
            f"strategies cover {strategies.num_steps} steps, anchor covers {K}"
        )
    slices = control_slices(system.control_dims)
    u_hat = np.concatenate(anchor.us, axis=1)
    P = np.concatenate(strategies.P, axis=1)
    alpha = np.concatenate(strategies.alpha, axis=1)
    x_hat = anchor.xs
    feedforward = u_hat - eta * alpha

    xs = np.empty((K, system.n))
    us = np.empty((K, u_hat.shape[1]))
    for k in range(K):
        if not np.isfinite(x).all():
            raise DivergenceError("rollout produced a non-finite state", time_index=k)
        xs[k] = x
        u = feedforward[k] - P[k] @ (x - x_hat[k])
        us[k] = u
        if k + 1 < K:
            ul = u.tolist()
            x = _rk4(system, x, [ul[s] for s in slices], dt)
    if not np.isfinite(us).all():
        bad = int(np.flatnonzero(~np.isfinite(us).all(axis=1))[0])
        raise DivergenceError("rollout produced a non-finite control", time_index=bad)
    return OperatingPoint(xs, [us[:, s] for s in slices])


def build_lq_approximation(
    system: MultiPlayerSystem,
    costs: Sequence[PlayerCost],
    op: OperatingPoint,
    dt: float,
) -> list[LQGameStage]:
    """Linearized dynamics and quadraticized costs at every step of ``op``."""
    if len(costs) != system.num_players:
        raise InvalidArgumentError(
            f"got {len(costs)} player costs for {system.num_players} players"
        )
    K = op.num_steps
    ts = np.round(np.arange(K) * dt, 12)
    A_c, B_c = linearize_trajectory(system, op.xs, op.us)
    A_d, B_d = discretize(A_c, B_c, dt)
    B = np.concatenate(B_d, axis=2)
    slices = control_slices(system.control_dims)
    M = B.shape[2]
    n_players = system.num_players

    Q = np.empty((K, n_players, system.n, system.n))
    l = np.empty((K, n_players, system.n))
    R = np.zeros((K, n_players, M, M))
    r = np.empty((K, n_players, M))
    for i, cost in enumerate(costs):
        quad = cost.quadraticize_trajectory(ts, op.xs, op.us)
        Q[:, i] = quad.Q
        l[:, i] = quad.l
        for j, s in enumerate(slices):
            R[:, i, s, s] = quad.R[j]
            r[:, i, s] = quad.r[j]
    return [LQGameStage(A_d[k], B[k], Q[k], l[k], R[k], r[k], slices) for k in range(K)]


def check_convergence(current: OperatingPoint, previous: OperatingPoint, tolerance: float) -> bool:
    """True iff the largest state change is at most ``tolerance``."""
    if current.xs.shape != previous.xs.shape:
        raise InvalidArgumentError(
            f"trajectory shapes differ: {current.xs.shape} vs {previous.xs.shape}"
        )
    return bool(np.max(np.abs(current.xs - previous.xs)) <= tolerance)


def _trajectory_change(current: OperatingPoint, previous: OperatingPoint | None) -> float:
    if previous is None:
        return float("inf")
    return float(np.max(np.abs(current.xs - previous.xs)))


def _solve_with_regularization(system, costs, op, config) -> tuple[AffineStrategy, float]:
    eps = 0.0
    while True:
        active = costs if eps == 0.0 else [
            c.regularized(max(c.eps_state, eps), max(c.eps_control, eps)) for c in costs
        ]
        stages = build_lq_approximation(system, active, op, config.dt)
        n_players = system.num_players
        terminal = ValueApprox(
            np.zeros((n_players, system.n, system.n)), np.zeros((n_players, system.n))
        )
        try:
            return solve_lq_game(stages, terminal), eps
        except SolveFailure as exc:
            eps = config.eps_initial if eps == 0.0 else eps * config.eps_growth
            if eps > config.eps_max * (1 + 1e-12):
                raise
            log.debug("LQ solve failed (%s); retrying with regularization %g", exc, eps)


def ilq_solve(
    system: MultiPlayerSystem,
    costs: Sequence[PlayerCost],
    x0,
    config: SolverConfig,
    initial_controls: Sequence[np.ndarray] | None = None,
    initial_strategy: AffineStrategy | None = None,
    anchor: OperatingPoint | None = None,
    callback: Callable[[int, OperatingPoint, AffineStrategy], None] | None = None,
) -> SolveResult:
    """Run iterative LQ games from ``x0``.

    Initialization is open-loop ``initial_controls`` (zeros when omitted),
    or a warm start given as ``initial_strategy`` together with the
    ``anchor`` trajectory it was computed about.

    Iteration 0 rolls out the initialization; iteration k >= 1 rolls out
    the strategies from iteration k - 1 and is compared against it.
    ``callback(k, trajectory, candidate)`` is invoked after each LQ solve.
    """
    dt = config.dt
    K = config.discretization.num_steps
    x0 = np.asarray(x0, dtype=float)
    if (initial_strategy is None) != (anchor is None):
        raise InvalidArgumentError("a warm start needs both a strategy and its anchor")
    if initial_strategy is None:
        if initial_controls is None:
            initial_controls = [np.zeros((K, m)) for m in system.control_dims]
        controls = [np.asarray(u, dtype=float).reshape(K, m)
                    for u, m in zip(initial_controls, system.control_dims)]
        anchor = OperatingPoint(np.zeros((K, system.n)), controls)
        strategy = AffineStrategy.zeros(K, system.n, system.control_dims)
    else:
        strategy = initial_strategy
    if anchor.num_steps != K:
        raise InvalidArgumentError(f"initialization covers {anchor.num_steps} steps, horizon has {K}")

    previous: OperatingPoint | None = None
    records: list[IterationRecord] = []
    converged = False
    op = anchor
    for iteration in range(config.max_iterations + 1):
        start = time.perf_counter()
        eta = config.step_size(max(iteration - 1, 0))
        for attempt in range(config.divergence_retries + 1):
            try:
                op = compute_operating_point(system, x0, anchor, strategy, eta, dt)
                break
            except DivergenceError as exc:
                if attempt == config.divergence_retries:
                    raise DivergenceError(str(exc), exc.time_index, iteration) from exc
                eta *= 0.5
        change = _trajectory_change(op, previous)
        strategy, eps = _solve_with_regularization(system, costs, op, config)
        anchor = op
        record = IterationRecord(
            iteration=iteration,
            costs=[evaluate_total_cost(c, op, dt) for c in costs],
            max_alpha=strategy.max_alpha_norm(),
            trajectory_change=change,
            wall_time=time.perf_counter() - start,
            eta=eta,
            regularization=eps,
        )
        records.append(record)
        if callback is not None:
            callback(iteration, op, strategy)
        if previous is not None and check_convergence(op, previous, config.tolerance):
            converged = True
            break
        previous = op

    return SolveResult(
        converged=converged,
        strategies=strategy,
        operating_point=op,
        iterations=records[-1].iteration,
        diagnostics=records,
        eta=config.step_size(records[-1].iteration),
    )
