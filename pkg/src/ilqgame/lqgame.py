"""Feedback Nash equilibria of discrete-time, finite-horizon LQ games.

Conventions for one stage (deviation coordinates, time index k)::

    x[k+1] = A x + sum_j B_j u_j
    cost_i = 1/2 x'Q_i x + l_i'x + sum_j (1/2 u_j'R_ij u_j + r_ij'u_j)
    u_i    = -P_i x - alpha_i

and every player's value is V_i(x) = 1/2 x'Z_i x + zeta_i'x + c_i.

Control blocks are stored stacked: ``B`` is (n, M) with M = sum m_i and
player i owning columns ``slices[i]``; ``R[i]`` is player i's (M, M)
block-diagonal control Hessian and ``r[i]`` its (M,) control gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.linalg.lapack import dgecon, dgetrf, dgetrs

from .errors import InvalidArgumentError, SolveFailure

RCOND_MIN = 1e-12


def control_slices(control_dims: Sequence[int]) -> tuple[slice, ...]:
    out, start = [], 0
    for m in control_dims:
        out.append(slice(start, start + m))
        start += m
    return tuple(out)


@dataclass
class LQGameStage:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray  # (N, n, n)
    l: np.ndarray  # (N, n)
    R: np.ndarray  # (N, M, M), block diagonal
    r: np.ndarray  # (N, M)
    slices: tuple

    @classmethod
    def from_blocks(cls, A, Bs, Qs, ls, Rs, rs) -> "LQGameStage":
        """Build from per-player blocks; ``Rs[i][j]`` is R_ij and ``rs[i][j]`` is r_ij."""
        A = np.asarray(A, dtype=float)
        Bs = [np.asarray(B, dtype=float).reshape(A.shape[0], -1) for B in Bs]
        dims = [B.shape[1] for B in Bs]
        n_players = len(Bs)
        if len(Qs) != n_players or len(ls) != n_players or len(Rs) != n_players or len(rs) != n_players:
            raise InvalidArgumentError("per-player cost terms do not match the number of players")
        R = np.stack([
            block_diag(*[np.asarray(Rs[i][j], dtype=float).reshape(dims[j], dims[j]) for j in range(n_players)])
            for i in range(n_players)
        ])
        r = np.stack([
            np.concatenate([np.asarray(rs[i][j], dtype=float).reshape(dims[j]) for j in range(n_players)])
            for i in range(n_players)
        ])
        return cls(
            A=A,
            B=np.concatenate(Bs, axis=1),
            Q=np.stack([np.asarray(Q, dtype=float) for Q in Qs]),
            l=np.stack([np.asarray(v, dtype=float) for v in ls]),
            R=R,
            r=r,
            slices=control_slices(dims),
        )

    @property
    def num_players(self) -> int:
        return len(self.slices)

    def B_i(self, i: int) -> np.ndarray:
        return self.B[:, self.slices[i]]

    def R_ij(self, i: int, j: int) -> np.ndarray:
        sj = self.slices[j]
        return self.R[i, sj, sj]

    def r_ij(self, i: int, j: int) -> np.ndarray:
        return self.r[i, self.slices[j]]


@dataclass
class ValueApprox:
    Z: np.ndarray  # (N, n, n)
    zeta: np.ndarray  # (N, n)
    c: np.ndarray | None = None  # (N,), constant term

    def __post_init__(self):
        if self.c is None:
            self.c = np.zeros(self.Z.shape[0])

    def evaluate(self, i: int, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Z[i] @ x + self.zeta[i] @ x + self.c[i])


@dataclass
class AffineStrategy:
    """Time-indexed affine feedback u_i = u_hat_i - P_i dx - alpha_i.

    ``P[i]`` has shape (K, m_i, n) and ``alpha[i]`` (K, m_i).  ``values``
    holds the value recursion (index 0 is the earliest step) when the
    strategy came from :func:`solve_lq_game`.
    """

    P: list
    alpha: list
    values: list | None = None

    @property
    def num_steps(self) -> int:
        return self.P[0].shape[0]

    @classmethod
    def zeros(cls, num_steps: int, n: int, control_dims: Sequence[int]) -> "AffineStrategy":
        return cls(
            P=[np.zeros((num_steps, m, n)) for m in control_dims],
            alpha=[np.zeros((num_steps, m)) for m in control_dims],
        )

    def max_alpha_norm(self) -> float:
        """max over players and time of the infinity norm of alpha."""
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.alpha)

    def shifted(self, steps: int) -> "AffineStrategy":
        """Drop the first ``steps`` entries and repeat the last one to refill."""
        return AffineStrategy(
            P=[_shift(P, steps) for P in self.P], alpha=[_shift(a, steps) for a in self.alpha]
        )


def _shift(arr: np.ndarray, steps: int) -> np.ndarray:
    if steps <= 0:
        return arr.copy()
    k = arr.shape[0]
    steps = min(steps, k - 1)
    return np.concatenate([arr[steps:], np.repeat(arr[-1:], steps, axis=0)])


def _factor_solve(S: np.ndarray, Y: np.ndarray) -> np.ndarray:
    lu, piv, info = dgetrf(S)
    if info > 0:
        raise SolveFailure("coupled Nash system is singular", rcond=0.0)
    anorm = np.max(np.sum(np.abs(S), axis=0))
    rcond, info = dgecon(lu, anorm, norm="1")
    if not rcond >= RCOND_MIN:
        raise SolveFailure(f"coupled Nash system is ill-conditioned (rcond={rcond:.3g})", rcond=rcond)
    sol, info = dgetrs(lu, piv, Y)
    return sol


def solve_coupled_step(value_next: ValueApprox, stage: LQGameStage):
    """One backward step of the coupled Riccati recursion.

    Solves all players' first-order conditions jointly for the stacked
    gains and affine terms, then propagates every player's value through
    the closed loop.  Returns (P list, alpha list, value at this step).
    """
    A, B, slices = stage.A, stage.B, stage.slices
    n = A.shape[0]
    n_players = len(slices)
    M = B.shape[1]
    Z, zeta = value_next.Z, value_next.zeta

    S = np.empty((M, M))
    Y = np.empty((M, n + 1))
    for i, si in enumerate(slices):
        BiZ = B[:, si].T @ Z[i]
        S[si] = BiZ @ B
        S[si, si] += stage.R[i, si, si]
        Y[si, :n] = BiZ @ A
        Y[si, n] = B[:, si].T @ zeta[i] + stage.r[i, si]
    if not np.all(np.isfinite(S)) or not np.all(np.isfinite(Y)):
        raise SolveFailure("non-finite entries in coupled Nash system")
    sol = _factor_solve(S, Y)
    P_all, alpha_all = sol[:, :n], sol[:, n]

    F = A - B @ P_all
    beta = -B @ alpha_all
    Z_now = np.empty_like(Z)
    zeta_now = np.empty_like(zeta)
    c_now = np.empty(n_players)
    for i in range(n_players):
        Ri, ri = stage.R[i], stage.r[i]
        RiP = Ri @ P_all
        ZF = Z[i] @ F
        Zi = stage.Q[i] + P_all.T @ RiP + F.T @ ZF
        Z_now[i] = 0.5 * (Zi + Zi.T)
        Zbeta = Z[i] @ beta
        zeta_now[i] = (
            stage.l[i] + P_all.T @ (Ri @ alpha_all - ri) + F.T @ (Zbeta + zeta[i])
        )
        c_now[i] = (
            value_next.c[i]
            + 0.5 * alpha_all @ Ri @ alpha_all
            - ri @ alpha_all
            + 0.5 * beta @ Zbeta
            + zeta[i] @ beta
        )
    P = [P_all[s] for s in slices]
    alpha = [alpha_all[s] for s in slices]
    return P, alpha, ValueApprox(Z_now, zeta_now, c_now)


def solve_lq_game(stages: Sequence[LQGameStage], terminal) -> AffineStrategy:
    """Backward recursion over ``stages`` from the terminal value.

    ``terminal`` is either a :class:`ValueApprox` or a pair (Q, l) of
    per-player arrays used as Z and zeta beyond the last stage.
    """
    if not stages:
        raise InvalidArgumentError("an LQ game needs at least one stage")
    if isinstance(terminal, ValueApprox):
        value = terminal
    else:
        Qt, lt = terminal
        value = ValueApprox(np.array(Qt, dtype=float), np.array(lt, dtype=float))
    n = stages[0].A.shape[0]
    if value.Z.shape[1:] != (n, n):
        raise InvalidArgumentError(f"terminal value has shape {value.Z.shape}, state dim is {n}")

    K = len(stages)
    slices = stages[0].slices
    P = [np.empty((K, s.stop - s.start, n)) for s in slices]
    alpha = [np.empty((K, s.stop - s.start)) for s in slices]
    values = [None] * (K + 1)
    values[K] = value
    for k in range(K - 1, -1, -1):
        try:
            Pk, ak, value = solve_coupled_step(value, stages[k])
        except SolveFailure as exc:
            raise SolveFailure(str(exc), time_index=k, rcond=exc.rcond) from exc
        for i in range(len(slices)):
            P[i][k] = Pk[i]
            alpha[i][k] = ak[i]
        values[k] = value
    return AffineStrategy(P=P, alpha=alpha, values=values)


def closed_loop_rollout(
    strategy: AffineStrategy, stages: Sequence[LQGameStage], x0_dev, terminal=None
):
    """Roll the deviation dynamics under the affine strategies.

    Returns (dx of shape (K+1, n), du list of (K, m_i), per-player cost).
    Each player's cost sums the quadratic stage costs (no constant term),
    plus the terminal quadratic at dx[K] when ``terminal`` is given in the
    same form :func:`solve_lq_game` accepts.
    """
    x = np.asarray(x0_dev, dtype=float)
    K = len(stages)
    slices = stages[0].slices
    n_players = len(slices)
    xs = np.empty((K + 1, x.size))
    us = [np.empty((K, s.stop - s.start)) for s in slices]
    costs = np.zeros(n_players)
    for k, stage in enumerate(stages):
        xs[k] = x
        u = np.concatenate([-strategy.P[i][k] @ x - strategy.alpha[i][k] for i in range(n_players)])
        for i in range(n_players):
            us[i][k] = u[slices[i]]
            costs[i] += (
                0.5 * x @ stage.Q[i] @ x + stage.l[i] @ x + 0.5 * u @ stage.R[i] @ u + stage.r[i] @ u
            )
        x = stage.A @ x + stage.B @ u
    xs[K] = x
    if terminal is not None:
        if isinstance(terminal, ValueApprox):
            Zt, zt = terminal.Z, terminal.zeta
        else:
            Zt, zt = (np.asarray(v, dtype=float) for v in terminal)
        for i in range(n_players):
            costs[i] += 0.5 * x @ Zt[i] @ x + zt[i] @ x
    return xs, us, costs
