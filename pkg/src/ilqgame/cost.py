"""Running costs built from weighted semi-quadratic primitives.

Every primitive is evaluated batched over a time axis: ``ts`` is (K,),
``xs`` is (K, n) and ``us[j]`` is (K, m_j).  Primitives address the joint
state by absolute index, so a cost is bound to a system layout when it is
built (see :mod:`ilqgame.scenarios`).

Quadraticization returns exact gradients and Hessians of the weighted sum,
without the mixed state/control and control/control partials.  Indicator
boundaries take the inactive branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError

_GEOM_EPS = 1e-12


@dataclass
class QuadraticCostApprox:
    """Per-step derivatives of one player's running cost.

    Arrays carry a leading time axis: Q (K, n, n), l (K, n),
    R[j] (K, m_j, m_j), r[j] (K, m_j).
    """

    Q: np.ndarray
    l: np.ndarray
    R: list[np.ndarray]
    r: list[np.ndarray]

    @classmethod
    def zeros(cls, k: int, n: int, control_dims: Sequence[int]) -> "QuadraticCostApprox":
        return cls(
            Q=np.zeros((k, n, n)),
            l=np.zeros((k, n)),
            R=[np.zeros((k, m, m)) for m in control_dims],
            r=[np.zeros((k, m)) for m in control_dims],
        )

    def at(self, k: int) -> "QuadraticCostApprox":
        return QuadraticCostApprox(
            Q=self.Q[k], l=self.l[k], R=[R[k] for R in self.R], r=[r[k] for r in self.r]
        )


def _check_weight(weight: float) -> None:
    if not weight >= 0:
        raise InvalidArgumentError(f"cost weight must be nonnegative, got {weight}")


@dataclass(frozen=True)
class Wall:
    """(|p_y| - d_hall)^2 outside the hallway."""

    weight: float
    y_index: int
    d_hall: float

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.d_hall > 0:
            raise InvalidArgumentError(f"d_hall must be positive, got {self.d_hall}")

    def value(self, ts, xs, us):
        excess = np.abs(xs[:, self.y_index]) - self.d_hall
        return self.weight * np.where(excess > 0, excess, 0.0) ** 2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        y = xs[:, self.y_index]
        excess = np.abs(y) - self.d_hall
        active = excess > 0
        i = self.y_index
        acc.l[:, i] += np.where(active, 2.0 * self.weight * excess * np.sign(y), 0.0)
        acc.Q[:, i, i] += np.where(active, 2.0 * self.weight, 0.0)


@dataclass(frozen=True)
class Proximity:
    """(d_prox - ||p_i - p_j||)^2 when two players are closer than d_prox."""

    weight: float
    pos: tuple[int, int]
    other_pos: tuple[int, int]
    d_prox: float

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.d_prox > 0:
            raise InvalidArgumentError(f"d_prox must be positive, got {self.d_prox}")

    def _offsets(self, xs):
        diff = xs[:, list(self.pos)] - xs[:, list(self.other_pos)]
        return diff, np.hypot(diff[:, 0], diff[:, 1])

    def value(self, ts, xs, us):
        _, dist = self._offsets(xs)
        gap = self.d_prox - dist
        return self.weight * np.where(gap > 0, gap, 0.0) ** 2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        diff, dist = self._offsets(xs)
        active = dist < self.d_prox
        if not np.any(active):
            return
        degenerate = active & (dist <= _GEOM_EPS)
        if np.any(degenerate):
            raise DegenerateGeometryError(
                "proximity cost at zero inter-player distance",
                time_index=int(np.flatnonzero(degenerate)[0]),
            )
        ks = np.flatnonzero(active)
        d = dist[ks]
        e = diff[ks] / d[:, None]
        gap = self.d_prox - d
        w = self.weight
        grad = (-2.0 * w * gap)[:, None] * e
        outer = e[:, :, None] * e[:, None, :]
        H = 2.0 * w * outer + (-2.0 * w * gap / d)[:, None, None] * (np.eye(2) - outer)
        pi, pj = list(self.pos), list(self.other_pos)
        acc.l[ks[:, None], pi] += grad
        acc.l[ks[:, None], pj] -= grad
        for a, rows in ((1.0, pi), (-1.0, pj)):
            for b, cols in ((1.0, pi), (-1.0, pj)):
                acc.Q[ks[:, None, None], np.array(rows)[:, None], np.array(cols)[None, :]] += a * b * H


@dataclass(frozen=True)
class Goal:
    """||p - p_goal||^2, active only during the last ``t_goal`` seconds."""

    weight: float
    pos: tuple[int, int]
    goal: tuple[float, float]
    t_goal: float
    horizon: float

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.t_goal >= 0:
            raise InvalidArgumentError(f"t_goal must be nonnegative, got {self.t_goal}")

    def _active(self, ts):
        return np.asarray(ts) > self.horizon - self.t_goal

    def value(self, ts, xs, us):
        diff = xs[:, list(self.pos)] - np.asarray(self.goal)
        return self.weight * np.where(self._active(ts), np.sum(diff**2, axis=1), 0.0)

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        ks = np.flatnonzero(self._active(ts))
        if ks.size == 0:
            return
        p = list(self.pos)
        diff = xs[ks][:, p] - np.asarray(self.goal)
        acc.l[ks[:, None], p] += 2.0 * self.weight * diff
        for i in p:
            acc.Q[ks, i, i] += 2.0 * self.weight


@dataclass(frozen=True)
class ControlQuadratic:
    """u_j^T diag(R) u_j for one player's control."""

    weight: float
    player: int
    diag: tuple[float, ...]

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.diag or not all(d > 0 for d in self.diag):
            raise InvalidArgumentError(f"control weights must be positive, got {self.diag}")

    def value(self, ts, xs, us):
        u = us[self.player]
        return self.weight * (u**2 @ np.asarray(self.diag))

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        diag = np.asarray(self.diag)
        acc.r[self.player] += 2.0 * self.weight * us[self.player] * diag
        m = len(diag)
        acc.R[self.player][:, np.arange(m), np.arange(m)] += 2.0 * self.weight * diag


@dataclass(frozen=True)
class Polyline:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise InvalidArgumentError("a polyline needs at least two 2-D points")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 0):
            raise InvalidArgumentError("polyline has a zero-length segment")

    def project(self, p: np.ndarray):
        """Nearest-segment geometry for points ``p`` of shape (K, 2).

        Returns (distance, offset p - nearest point, segment unit normal,
        vertex-region flag).  Raises exactly at an interior vertex.
        """
        pts = np.asarray(self.points, dtype=float)
        a, b = pts[:-1], pts[1:]
        seg = b - a
        seg_len2 = np.sum(seg**2, axis=1)
        rel = p[:, None, :] - a[None, :, :]
        t_raw = np.einsum("ksd,sd->ks", rel, seg) / seg_len2
        t = np.clip(t_raw, 0.0, 1.0)
        nearest = a[None] + t[:, :, None] * seg[None]
        offsets = p[:, None, :] - nearest
        dists = np.hypot(offsets[..., 0], offsets[..., 1])
        best = np.argmin(dists, axis=1)
        rows = np.arange(p.shape[0])

        interior = pts[1:-1]
        if interior.size:
            to_vertex = np.linalg.norm(p[:, None, :] - interior[None], axis=2)
            kink = np.any(to_vertex <= _GEOM_EPS, axis=1)
            if np.any(kink):
                raise DegenerateGeometryError(
                    "lane cost evaluated exactly at a polyline kink",
                    time_index=int(np.flatnonzero(kink)[0]),
                )

        tb = t_raw[rows, best]
        direction = seg[best] / np.sqrt(seg_len2[best])[:, None]
        normal = np.stack([-direction[:, 1], direction[:, 0]], axis=1)
        vertex_region = (tb < 0.0) | (tb > 1.0)
        return dists[rows, best], offsets[rows, best], normal, vertex_region


@dataclass(frozen=True)
class LaneCenter:
    """Squared distance to a lane centerline."""

    weight: float
    pos: tuple[int, int]
    lane: Polyline

    def __post_init__(self):
        _check_weight(self.weight)

    def value(self, ts, xs, us):
        dist, *_ = self.lane.project(xs[:, list(self.pos)])
        return self.weight * dist**2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        p = list(self.pos)
        dist, offset, normal, vertex = self.lane.project(xs[:, p])
        w = self.weight
        acc.l[:, p] += 2.0 * w * offset
        H = 2.0 * w * normal[:, :, None] * normal[:, None, :]
        H[vertex] = 2.0 * w * np.eye(2)
        acc.Q[:, np.array(p)[:, None], np.array(p)[None, :]] += H


@dataclass(frozen=True)
class LaneBoundary:
    """(d - d_lane)^2 once the distance to the centerline exceeds d_lane."""

    weight: float
    pos: tuple[int, int]
    lane: Polyline
    d_lane: float

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.d_lane > 0:
            raise InvalidArgumentError(f"d_lane must be positive, got {self.d_lane}")

    def value(self, ts, xs, us):
        dist, *_ = self.lane.project(xs[:, list(self.pos)])
        excess = dist - self.d_lane
        return self.weight * np.where(excess > 0, excess, 0.0) ** 2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        p = list(self.pos)
        dist, offset, normal, vertex = self.lane.project(xs[:, p])
        active = dist > self.d_lane
        if not np.any(active):
            return
        ks = np.flatnonzero(active)
        d = dist[ks]
        e = offset[ks] / d[:, None]
        excess = d - self.d_lane
        w = self.weight
        outer = e[:, :, None] * e[:, None, :]
        H = 2.0 * w * outer
        # curvature of the distance itself is nonzero only around a vertex
        curv = np.where(vertex[ks], excess / d, 0.0)
        H += 2.0 * w * curv[:, None, None] * (np.eye(2) - outer)
        acc.l[ks[:, None], p] += (2.0 * w * excess)[:, None] * e
        acc.Q[ks[:, None, None], np.array(p)[:, None], np.array(p)[None, :]] += H


@dataclass(frozen=True)
class NominalSpeed:
    weight: float
    v_index: int
    v_ref: float

    def __post_init__(self):
        _check_weight(self.weight)

    def value(self, ts, xs, us):
        return self.weight * (xs[:, self.v_index] - self.v_ref) ** 2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        i = self.v_index
        acc.l[:, i] += 2.0 * self.weight * (xs[:, i] - self.v_ref)
        acc.Q[:, i, i] += 2.0 * self.weight


@dataclass(frozen=True)
class SpeedBounds:
    weight: float
    v_index: int
    v_min: float
    v_max: float

    def __post_init__(self):
        _check_weight(self.weight)
        if not self.v_min <= self.v_max:
            raise InvalidArgumentError(f"v_min {self.v_min} exceeds v_max {self.v_max}")

    def _excess(self, v):
        above = v - self.v_max
        below = v - self.v_min
        return np.where(above > 0, above, np.where(below < 0, below, 0.0))

    def value(self, ts, xs, us):
        return self.weight * self._excess(xs[:, self.v_index]) ** 2

    def accumulate(self, ts, xs, us, acc: QuadraticCostApprox):
        i = self.v_index
        excess = self._excess(xs[:, i])
        acc.l[:, i] += 2.0 * self.weight * excess
        acc.Q[:, i, i] += np.where(excess != 0, 2.0 * self.weight, 0.0)


CostPrimitive = (
    Wall | Proximity | Goal | ControlQuadratic | LaneCenter | LaneBoundary | NominalSpeed | SpeedBounds
)


@dataclass(frozen=True)
class PlayerCost:
    """One player's running cost g_i: a sum of weighted primitives.

    ``eps_state`` and ``eps_control`` are added as scaled identities to the
    state Hessian and every control Hessian after quadraticization.
    """

    player: int
    primitives: tuple = field(default_factory=tuple)
    eps_state: float = 0.0
    eps_control: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise InvalidArgumentError(f"player {self.player} cost has no primitives")
        if self.eps_state < 0 or self.eps_control < 0:
            raise InvalidArgumentError("regularization must be nonnegative")

    def regularized(self, eps_state: float, eps_control: float) -> "PlayerCost":
        return PlayerCost(self.player, self.primitives, eps_state, eps_control)

    def running_costs(self, ts, xs, us) -> np.ndarray:
        """g_i at every time step, shape (K,)."""
        xs = np.asarray(xs, dtype=float)
        total = np.zeros(xs.shape[0])
        for prim in self.primitives:
            total += prim.value(ts, xs, us)
        return total

    def quadraticize_trajectory(self, ts, xs, us) -> QuadraticCostApprox:
        xs = np.asarray(xs, dtype=float)
        k, n = xs.shape
        dims = [u.shape[1] for u in us]
        acc = QuadraticCostApprox.zeros(k, n, dims)
        for prim in self.primitives:
            prim.accumulate(ts, xs, us, acc)
        acc.Q = 0.5 * (acc.Q + np.swapaxes(acc.Q, 1, 2))
        if self.eps_state:
            acc.Q += self.eps_state * np.eye(n)
        for j, m in enumerate(dims):
            acc.R[j] = 0.5 * (acc.R[j] + np.swapaxes(acc.R[j], 1, 2))
            if self.eps_control:
                acc.R[j] += self.eps_control * np.eye(m)
        return acc


def _point_batch(t, x, u_all):
    xs = np.asarray(x, dtype=float)[None, :]
    us = [np.atleast_1d(np.asarray(u, dtype=float))[None, :] for u in u_all]
    return np.array([t], dtype=float), xs, us


def evaluate_running_cost(cost: PlayerCost, t: float, x, u_all) -> float:
    ts, xs, us = _point_batch(t, x, u_all)
    return float(cost.running_costs(ts, xs, us)[0])


def evaluate_total_cost(cost: PlayerCost, op, dt: float) -> float:
    """Left-endpoint quadrature of the running cost along an operating point."""
    ts = np.round(np.arange(op.xs.shape[0]) * dt, 12)
    return float(np.sum(cost.running_costs(ts, op.xs, op.us)) * dt)


def quadraticize(cost: PlayerCost, t: float, x, u_all) -> QuadraticCostApprox:
    """Single-point quadratic approximation (arrays without the time axis)."""
    ts, xs, us = _point_batch(t, x, u_all)
    return cost.quadraticize_trajectory(ts, xs, us).at(0)
