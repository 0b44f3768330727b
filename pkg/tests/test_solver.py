import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
import pytest

from ilqgame.cost import ControlQuadratic, Goal, NominalSpeed, PlayerCost
from ilqgame.dynamics import MultiPlayerSystem, TimeDiscretization, Unicycle4D
from ilqgame.errors import DivergenceError, InvalidArgumentError, SolveFailure
from ilqgame.lqgame import AffineStrategy
from ilqgame.solver import (
    OperatingPoint,
    SolverConfig,
    build_lq_approximation,
    check_convergence,
    compute_operating_point,
    ilq_solve,
    open_loop_operating_point,
)

from oracles import ilqr, riccati_lqr


@dataclass(frozen=True)
class SingleIntegrator2D:
    kind: ClassVar[str] = "single_integrator"
    state_dim: ClassVar[int] = 2
    control_dim: ClassVar[int] = 2
    speed_index: ClassVar[None] = None

    def derivative(self, x, u):
        return (u[0], u[1])

    def jacobians(self, xs, us):
        k = xs.shape[0]
        return np.zeros((k, 2, 2)), np.tile(np.eye(2), (k, 1, 1))


@dataclass(frozen=True)
class QuadraticEscape:
    """p_x' = p_x^2 + u, p_y' = 0: escapes to infinity in finite time."""

    kind: ClassVar[str] = "quadratic_escape"
    state_dim: ClassVar[int] = 2
    control_dim: ClassVar[int] = 1
    speed_index: ClassVar[None] = None

    def derivative(self, x, u):
        return (x[0] * x[0] + u[0], 0.0)

    def jacobians(self, xs, us):
        k = xs.shape[0]
        A = np.zeros((k, 2, 2))
        A[:, 0, 0] = 2 * xs[:, 0]
        B = np.zeros((k, 2, 1))
        B[:, 0, 0] = 1.0
        return A, B


def _two_unicycles():
    system = MultiPlayerSystem((Unicycle4D(), Unicycle4D()))
    costs = [
        PlayerCost(i, (Goal(1.0, system.position_indices(i), g, 5.0, 2.0),
                       ControlQuadratic(1.0, i, (1.0, 1.0))))
        for i, g in enumerate([(2.0, 1.0), (-1.0, 0.5)])
    ]
    x0 = np.array([0.0, 0.0, 0.1, 0.5, 1.0, 1.0, 3.0, 0.4])
    return system, costs, x0


def _random_strategy(rng, K, n, dims, scale=0.1):
    return AffineStrategy(
        [scale * rng.standard_normal((K, m, n)) for m in dims],
        [scale * rng.standard_normal((K, m)) for m in dims],
    )


def test_zero_step_replays_anchor():
    rng = np.random.default_rng(0)
    system, _, x0 = _two_unicycles()
    controls = [rng.uniform(-0.5, 0.5, (20, 2)) for _ in range(2)]
    anchor = open_loop_operating_point(system, x0, controls, 0.1)
    strat = _random_strategy(rng, 20, system.n, system.control_dims)
    op = compute_operating_point(system, x0, anchor, strat, 0.0, 0.1)
    np.testing.assert_array_equal(op.xs, anchor.xs)
    for a, b in zip(op.us, anchor.us):
        np.testing.assert_array_equal(a, b)


def test_zero_strategy_replays_controls():
    rng = np.random.default_rng(1)
    system, _, x0 = _two_unicycles()
    controls = [rng.uniform(-0.5, 0.5, (20, 2)) for _ in range(2)]
    anchor = OperatingPoint(rng.standard_normal((20, system.n)), controls)
    zero = AffineStrategy.zeros(20, system.n, system.control_dims)
    op = compute_operating_point(system, x0, anchor, zero, 0.7, 0.1)
    ref = open_loop_operating_point(system, x0, controls, 0.1)
    np.testing.assert_array_equal(op.xs, ref.xs)
    np.testing.assert_array_equal(op.us[1], controls[1])


def test_fixed_point_idempotence():
    rng = np.random.default_rng(2)
    system, _, x0 = _two_unicycles()
    anchor = open_loop_operating_point(system, x0, [np.zeros((20, 2))] * 2, 0.1)
    strat = _random_strategy(rng, 20, system.n, system.control_dims)
    first = compute_operating_point(system, x0, anchor, strat, 1.0, 0.1)
    settled = AffineStrategy(strat.P, [np.zeros_like(a) for a in strat.alpha])
    again = compute_operating_point(system, x0, first, settled, 1.0, 0.1)
    np.testing.assert_array_equal(again.xs, first.xs)


def test_anchoring_identity():
    rng = np.random.default_rng(3)
    system, _, x0 = _two_unicycles()
    anchor = open_loop_operating_point(system, x0, [rng.standard_normal((20, 2))] * 2, 0.1)
    strat = _random_strategy(rng, 20, system.n, system.control_dims, scale=1.0)
    op = compute_operating_point(system, x0, anchor, strat, 0.3, 0.1)
    for i in range(2):
        np.testing.assert_array_equal(op.us[i][0], anchor.us[i][0] - 0.3 * strat.alpha[i][0])


def test_rollout_divergence_carries_time_index():
    system = MultiPlayerSystem((QuadraticEscape(),))
    anchor = OperatingPoint(np.zeros((40, 2)), [np.full((40, 1), 50.0)])
    zero = AffineStrategy.zeros(40, 2, (1,))
    with pytest.raises(DivergenceError) as info:
        compute_operating_point(system, np.array([1.0, 0.0]), anchor, zero, 0.0, 0.1)
    assert 0 < info.value.time_index < 40


def test_check_convergence_examples():
    a = OperatingPoint(np.zeros((10, 3)), [np.zeros((10, 1))])
    b = OperatingPoint(np.zeros((10, 3)), [np.zeros((10, 1))])
    assert check_convergence(a, b, 0.01)
    b.xs[4, 2] = 0.02
    assert not check_convergence(a, b, 0.01)
    c = OperatingPoint(np.full((10, 3), 0.25), [np.zeros((10, 1))])
    d = OperatingPoint(np.full((10, 3), 0.5), [np.zeros((10, 1))])
    assert check_convergence(c, d, 0.25)  # boundary is inclusive
    with pytest.raises(InvalidArgumentError):
        check_convergence(a, OperatingPoint(np.zeros((9, 3)), []), 0.01)


def test_approximation_exact_for_linear_quadratic():
    system = MultiPlayerSystem((SingleIntegrator2D(), SingleIntegrator2D()))
    goals = [(1.0, 2.0), (-1.0, 0.0)]
    costs = [
        PlayerCost(i, (Goal(3.0, system.position_indices(i), goals[i], 10.0, 1.0),
                       ControlQuadratic(0.5, i, (1.0, 2.0))))
        for i in range(2)
    ]
    rng = np.random.default_rng(4)
    op = OperatingPoint(rng.standard_normal((5, 4)), [rng.standard_normal((5, 2)) for _ in range(2)])
    stages = build_lq_approximation(system, costs, op, 0.1)
    assert len(stages) == 5
    for k, st in enumerate(stages):
        np.testing.assert_array_equal(st.A, np.eye(4))
        np.testing.assert_allclose(st.B_i(1), 0.1 * np.eye(4)[:, 2:])
        p = op.xs[k, :2]
        np.testing.assert_allclose(st.Q[0][:2, :2], 6.0 * np.eye(2))
        np.testing.assert_allclose(st.l[0][:2], 6.0 * (p - goals[0]))
        np.testing.assert_allclose(st.R_ij(1, 1), np.diag([1.0, 2.0]))
        np.testing.assert_allclose(st.r_ij(1, 1), np.diag([1.0, 2.0]) @ op.us[1][k])
        assert not st.R_ij(0, 1).any()


def test_single_integrator_lqr_converges_in_two_iterations():
    system = MultiPlayerSystem((SingleIntegrator2D(),))
    goal = np.array([3.0, -1.0])
    w, c, dt, K = 2.0, 0.5, 0.1, 30
    cost = PlayerCost(0, (Goal(w, (0, 1), tuple(goal), 100.0, 3.0), ControlQuadratic(c, 0, (1.0, 1.0))))
    x0 = np.array([0.5, 1.0])
    config = SolverConfig(TimeDiscretization(dt, K * dt), eta=1.0, tolerance=1e-10)
    result = ilq_solve(system, [cost], x0, config)
    assert result.converged and result.iterations <= 2

    n = 2
    Ks, ks, _, _ = riccati_lqr(
        [np.eye(n)] * K, [dt * np.eye(n)] * K, [2 * w * np.eye(n)] * K, [-2 * w * goal] * K,
        [2 * c * np.eye(n)] * K, [np.zeros(n)] * K, np.zeros((n, n)), np.zeros(n),
    )
    x = x0.copy()
    xs = []
    for k in range(K):
        xs.append(x.copy())
        x = x + dt * (-Ks[k] @ x - ks[k])
    assert np.max(np.abs(result.operating_point.xs - np.array(xs))) < 1e-8


# --- single-player unicycle stabilization, shared with the acceptance suite ---

STAB_DT, STAB_K = 0.1, 40
STAB_GOAL = np.array([0.0, 0.0])
STAB_W, STAB_WV, STAB_C = 1.0, 0.5, 1.0


def stabilization_problem():
    system = MultiPlayerSystem((Unicycle4D(),))
    cost = PlayerCost(0, (
        Goal(STAB_W, (0, 1), tuple(STAB_GOAL), 100.0, STAB_K * STAB_DT),
        NominalSpeed(STAB_WV, 3, 0.0),
        ControlQuadratic(STAB_C, 0, (1.0, 1.0)),
    ))
    return system, [cost], np.array([-1.5, 1.0, 0.4, 0.0])


def _unicycle_f(x, u):
    return np.array([x[3] * math.cos(x[2]), x[3] * math.sin(x[2]), u[0], u[1]])


def _unicycle_step(x, u):
    h = STAB_DT
    k1 = _unicycle_f(x, u)
    k2 = _unicycle_f(x + h / 2 * k1, u)
    k3 = _unicycle_f(x + h / 2 * k2, u)
    k4 = _unicycle_f(x + h * k3, u)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _unicycle_jac(xs, us):
    As, Bs = [], []
    for x in xs:
        A = np.zeros((4, 4))
        A[0, 2], A[0, 3] = -x[3] * math.sin(x[2]), math.cos(x[2])
        A[1, 2], A[1, 3] = x[3] * math.cos(x[2]), math.sin(x[2])
        B = np.zeros((4, 2))
        B[2, 0] = B[3, 1] = 1.0
        As.append(np.eye(4) + STAB_DT * A)
        Bs.append(STAB_DT * B)
    return As, Bs


def _stab_quad(xs, us):
    Q = np.diag([2 * STAB_W, 2 * STAB_W, 0.0, 2 * STAB_WV])
    Qs, ls, Rs, rs = [], [], [], []
    for x, u in zip(xs, us):
        Qs.append(Q)
        ls.append(np.array([2 * STAB_W * (x[0] - STAB_GOAL[0]), 2 * STAB_W * (x[1] - STAB_GOAL[1]),
                            0.0, 2 * STAB_WV * x[3]]))
        Rs.append(2 * STAB_C * np.eye(2))
        rs.append(2 * STAB_C * u)
    return Qs, ls, Rs, rs


def stabilization_oracle(x0, eta, iterations, tol):
    return ilqr(_unicycle_step, _unicycle_jac, _stab_quad, x0, np.zeros((STAB_K, 2)),
                eta, iterations, tol)


def test_single_player_iterates_match_ilqr_oracle():
    system, costs, x0 = stabilization_problem()
    config = SolverConfig(TimeDiscretization(STAB_DT, STAB_K * STAB_DT), eta=0.5, max_iterations=60)
    seen = []
    result = ilq_solve(system, costs, x0, config, callback=lambda k, op, s: seen.append(op.xs.copy()))
    assert result.converged
    history = stabilization_oracle(x0, 0.5, 61, config.tolerance)
    assert len(history) == len(seen)
    for mine, ref in zip(seen, history):
        assert np.max(np.abs(mine - ref)) < 1e-10


def test_determinism():
    system, costs, x0 = _two_unicycles()
    config = SolverConfig(TimeDiscretization(0.1, 2.0), eta=0.3)
    a = ilq_solve(system, costs, x0, config)
    b = ilq_solve(system, costs, x0, config)
    assert a.iterations == b.iterations
    assert a.operating_point.xs.tobytes() == b.operating_point.xs.tobytes()
    for pa, pb in zip(a.strategies.P, b.strategies.P):
        assert pa.tobytes() == pb.tobytes()
    assert [r.costs for r in a.diagnostics] == [r.costs for r in b.diagnostics]


def test_iteration_cap_reports_not_converged():
    system, costs, x0 = _two_unicycles()
    config = SolverConfig(TimeDiscretization(0.1, 2.0), eta=0.01, max_iterations=3)
    result = ilq_solve(system, costs, x0, config)
    assert not result.converged
    assert result.iterations == 3 and len(result.diagnostics) == 4


def _unregularized_problem():
    # no control cost at all: the last stage has a singular coupled matrix
    system = MultiPlayerSystem((SingleIntegrator2D(),))
    cost = PlayerCost(0, (Goal(1.0, (0, 1), (1.0, 1.0), 100.0, 1.0),))
    return system, [cost]


def test_regularization_retry():
    system, costs = _unregularized_problem()
    config = SolverConfig(TimeDiscretization(0.1, 1.0), eta=0.5)
    result = ilq_solve(system, costs, np.zeros(2), config)
    assert result.diagnostics[0].regularization == pytest.approx(1e-4)


def test_regularization_exhausted_raises():
    system, costs = _unregularized_problem()
    config = SolverConfig(TimeDiscretization(0.1, 1.0), eta=0.5, eps_initial=1e-4, eps_max=1e-5)
    with pytest.raises(SolveFailure):
        ilq_solve(system, costs, np.zeros(2), config)


def _escape_problem():
    system = MultiPlayerSystem((QuadraticEscape(),))
    cost = PlayerCost(0, (Goal(1.0, (0, 1), (0.0, 0.0), 100.0, 1.0), ControlQuadratic(1.0, 0, (1.0,))))
    return system, [cost]


def test_divergence_halves_step_then_recovers():
    system, costs = _escape_problem()
    K = 20
    anchor = open_loop_operating_point(system, np.zeros(2), [np.zeros((K, 1))], 0.1)
    # a strong push that escapes at full step but not at a quarter step
    push = AffineStrategy([np.zeros((K, 1, 2))], [np.full((K, 1), -2.5)])
    config = SolverConfig(TimeDiscretization(0.1, 2.0), eta=1.0, max_iterations=1)
    result = ilq_solve(system, costs, np.zeros(2), config, initial_strategy=push, anchor=anchor)
    assert result.diagnostics[0].eta < 1.0


def test_divergence_exhausted_raises_with_iteration():
    system, costs = _escape_problem()
    K = 20
    anchor = open_loop_operating_point(system, np.zeros(2), [np.zeros((K, 1))], 0.1)
    push = AffineStrategy([np.zeros((K, 1, 2))], [np.full((K, 1), -1e6)])
    config = SolverConfig(TimeDiscretization(0.1, 2.0), eta=1.0)
    with pytest.raises(DivergenceError) as info:
        ilq_solve(system, costs, np.zeros(2), config, initial_strategy=push, anchor=anchor)
    assert info.value.iteration == 0


def test_config_validation():
    td = TimeDiscretization(0.1, 1.0)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(td, eta=0.0)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(td, tolerance=-1.0)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(td, step_policy="armijo")
    decay = SolverConfig(td, eta=0.5, step_policy="decay", decay_rate=0.5)
    assert decay.step_size(0) == 0.5 and decay.step_size(2) == 0.125


def test_warm_start_requires_anchor():
    system, costs, x0 = _two_unicycles()
    config = SolverConfig(TimeDiscretization(0.1, 1.0))
    with pytest.raises(InvalidArgumentError):
        ilq_solve(system, costs, x0, config,
                  initial_strategy=AffineStrategy.zeros(10, system.n, system.control_dims))
