"""Multi-player kinematic models, RK4 integration and Jacobian linearization.

Players are dynamically decoupled: the joint state is the concatenation of
each player's state block (player-major, in player order) and the joint
vector field is the concatenation of the per-player fields.  Coupling
between players enters only through costs.

Per-point evaluation works on plain floats for speed inside rollouts; the
Jacobians are computed batched over a leading time axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalInputError


@dataclass(frozen=True)
class Unicycle4D:
    """State (p_x, p_y, theta, v), controls (omega, a)."""

    kind: ClassVar[str] = "unicycle4d"
    state_dim: ClassVar[int] = 4
    control_dim: ClassVar[int] = 2
    speed_index: ClassVar[int | None] = 3

    def derivative(self, x: Sequence[float], u: Sequence[float]) -> tuple[float, ...]:
        theta, v = x[2], x[3]
        return (v * math.cos(theta), v * math.sin(theta), u[0], u[1])

    def jacobians(self, xs: np.ndarray, us: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = xs.shape[0]
        theta, v = xs[:, 2], xs[:, 3]
        c, s = np.cos(theta), np.sin(theta)
        A = np.zeros((k, 4, 4))
        A[:, 0, 2] = -v * s
        A[:, 0, 3] = c
        A[:, 1, 2] = v * c
        A[:, 1, 3] = s
        B = np.zeros((k, 4, 2))
        B[:, 2, 0] = 1.0
        B[:, 3, 1] = 1.0
        return A, B


@dataclass(frozen=True)
class Bicycle5D:
    """State (p_x, p_y, theta, phi, v), controls (psi, a); ``wheelbase`` is L."""

    wheelbase: float = 1.0

    kind: ClassVar[str] = "bicycle5d"
    state_dim: ClassVar[int] = 5
    control_dim: ClassVar[int] = 2
    speed_index: ClassVar[int | None] = 4

    def __post_init__(self):
        if not self.wheelbase > 0:
            raise InvalidArgumentError(f"wheelbase must be positive, got {self.wheelbase}")

    def derivative(self, x: Sequence[float], u: Sequence[float]) -> tuple[float, ...]:
        theta, phi, v = x[2], x[3], x[4]
        return (
            v * math.cos(theta),
            v * math.sin(theta),
            v * math.tan(phi) / self.wheelbase,
            u[0],
            u[1],
        )

    def jacobians(self, xs: np.ndarray, us: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = xs.shape[0]
        theta, phi, v = xs[:, 2], xs[:, 3], xs[:, 4]
        c, s = np.cos(theta), np.sin(theta)
        tan_phi = np.tan(phi)
        A = np.zeros((k, 5, 5))
        A[:, 0, 2] = -v * s
        A[:, 0, 4] = c
        A[:, 1, 2] = v * c
        A[:, 1, 4] = s
        A[:, 2, 3] = v * (1.0 + tan_phi**2) / self.wheelbase
        A[:, 2, 4] = tan_phi / self.wheelbase
        B = np.zeros((k, 5, 2))
        B[:, 3, 0] = 1.0
        B[:, 4, 1] = 1.0
        return A, B


@dataclass(frozen=True)
class DubinsConstantSpeed3D:
    """State (p_x, p_y, theta), control (omega); travels at fixed ``speed``."""

    speed: float = 1.0

    kind: ClassVar[str] = "dubins3d"
    state_dim: ClassVar[int] = 3
    control_dim: ClassVar[int] = 1
    speed_index: ClassVar[int | None] = None

    def __post_init__(self):
        if not self.speed > 0:
            raise InvalidArgumentError(f"speed must be positive, got {self.speed}")

    def derivative(self, x: Sequence[float], u: Sequence[float]) -> tuple[float, ...]:
        theta = x[2]
        return (self.speed * math.cos(theta), self.speed * math.sin(theta), u[0])

    def jacobians(self, xs: np.ndarray, us: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = xs.shape[0]
        theta = xs[:, 2]
        A = np.zeros((k, 3, 3))
        A[:, 0, 2] = -self.speed * np.sin(theta)
        A[:, 1, 2] = self.speed * np.cos(theta)
        B = np.zeros((k, 3, 1))
        B[:, 2, 0] = 1.0
        return A, B


PlayerModel = Unicycle4D | Bicycle5D | DubinsConstantSpeed3D

MODEL_KINDS: dict[str, type] = {
    Unicycle4D.kind: Unicycle4D,
    Bicycle5D.kind: Bicycle5D,
    DubinsConstantSpeed3D.kind: DubinsConstantSpeed3D,
}


@dataclass(frozen=True)
class TimeDiscretization:
    dt: float
    horizon: float

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.num_steps < 1:
            raise InvalidArgumentError(
                f"horizon {self.horizon} s shorter than one step of {self.dt} s"
            )

    @property
    def num_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def times(self) -> np.ndarray:
        # rounding keeps k*dt free of representation error in indicator tests
        return np.round(np.arange(self.num_steps) * self.dt, 12)


@dataclass(frozen=True)
class MultiPlayerSystem:
    players: tuple

    state_slices: tuple = field(init=False, repr=False)
    control_dims: tuple = field(init=False, repr=False)
    n: int = field(init=False, repr=False)

    def __post_init__(self):
        players = tuple(self.players)
        if not players:
            raise InvalidArgumentError("a system needs at least one player")
        slices, start = [], 0
        for model in players:
            slices.append(slice(start, start + model.state_dim))
            start += model.state_dim
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "state_slices", tuple(slices))
        object.__setattr__(self, "control_dims", tuple(m.control_dim for m in players))
        object.__setattr__(self, "n", start)

    @property
    def num_players(self) -> int:
        return len(self.players)

    @property
    def state_layout(self) -> dict[int, range]:
        return {i: range(s.start, s.stop) for i, s in enumerate(self.state_slices)}

    def position_indices(self, player: int) -> tuple[int, int]:
        start = self.state_slices[player].start
        return start, start + 1

    def heading_index(self, player: int) -> int:
        return self.state_slices[player].start + 2

    def speed_index(self, player: int) -> int | None:
        local = self.players[player].speed_index
        return None if local is None else self.state_slices[player].start + local

    def check(self, x, u_all) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise InvalidArgumentError(f"state has shape {x.shape}, expected ({self.n},)")
        if len(u_all) != self.num_players:
            raise InvalidArgumentError(
                f"got controls for {len(u_all)} players, expected {self.num_players}"
            )
        us = []
        for i, (u, m) in enumerate(zip(u_all, self.control_dims)):
            u = np.atleast_1d(np.asarray(u, dtype=float))
            if u.shape != (m,):
                raise InvalidArgumentError(
                    f"player {i} control has shape {u.shape}, expected ({m},)"
                )
            us.append(u)
        return x, us

    def _f(self, x: np.ndarray, u_all) -> np.ndarray:
        xl = x.tolist()
        out: list[float] = []
        for model, sl, u in zip(self.players, self.state_slices, u_all):
            out.extend(model.derivative(xl[sl], u))
        return np.array(out)


def evaluate(system: MultiPlayerSystem, t: float, x, u_all) -> np.ndarray:
    """Joint vector field f(t, x, u_1..u_N).  The models are time-invariant."""
    x, us = system.check(x, u_all)
    return system._f(x, us)


def _rk4(system: MultiPlayerSystem, x: np.ndarray, u_all, dt: float) -> np.ndarray:
    f = system._f
    k1 = f(x, u_all)
    k2 = f(x + 0.5 * dt * k1, u_all)
    k3 = f(x + 0.5 * dt * k2, u_all)
    k4 = f(x + dt * k3, u_all)
    return x + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def integrate_step(system: MultiPlayerSystem, t: float, x, u_all, dt: float) -> np.ndarray:
    """One classical RK4 step with controls held over [t, t + dt]."""
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    x, us = system.check(x, u_all)
    if not np.all(np.isfinite(x)):
        raise NumericalInputError("state contains non-finite entries")
    for i, u in enumerate(us):
        if not np.all(np.isfinite(u)):
            raise NumericalInputError(f"player {i} control contains non-finite entries")
    return _rk4(system, x, us, dt)


def linearize_trajectory(
    system: MultiPlayerSystem, xs: np.ndarray, us: Sequence[np.ndarray]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Continuous-time Jacobians along a trajectory.

    ``xs`` is (K, n) and ``us[i]`` is (K, m_i).  Returns A of shape (K, n, n)
    and one (K, n, m_i) array per player.
    """
    xs = np.asarray(xs, dtype=float)
    k = xs.shape[0]
    A = np.zeros((k, system.n, system.n))
    Bs = []
    for model, sl, u in zip(system.players, system.state_slices, us):
        Ai, Bi = model.jacobians(xs[:, sl], np.asarray(u, dtype=float).reshape(k, -1))
        A[:, sl, sl] = Ai
        B = np.zeros((k, system.n, model.control_dim))
        B[:, sl, :] = Bi
        Bs.append(B)
    return A, Bs


def linearize(system: MultiPlayerSystem, t: float, x, u_all) -> tuple[np.ndarray, list[np.ndarray]]:
    """Continuous-time Jacobians D_x f and D_{u_i} f at a single point."""
    x, us = system.check(x, u_all)
    A, Bs = linearize_trajectory(system, x[None, :], [u[None, :] for u in us])
    return A[0], [B[0] for B in Bs]


def discretize(A_cont: np.ndarray, B_cont: Sequence[np.ndarray], dt: float):
    """Forward-Euler discretization: (I + dt A, dt B_i).  Accepts batched arrays."""
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    A_cont = np.asarray(A_cont, dtype=float)
    n = A_cont.shape[-1]
    A_disc = np.eye(n) + dt * A_cont
    return A_disc, [dt * np.asarray(B, dtype=float) for B in B_cont]
