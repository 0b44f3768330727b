import numpy as np
import pytest

from ilqgame.errors import SolveFailure
from ilqgame.lqgame import (
    AffineStrategy,
    LQGameStage,
    ValueApprox,
    closed_loop_rollout,
    solve_coupled_step,
    solve_lq_game,
)

from oracles import riccati_lqr


def random_game(rng, n, dims, K, linear=True, psd=True):
    """Random LQ game with PSD state costs and PD own-control costs."""
    N = len(dims)
    stages = []
    for _ in range(K):
        A = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        Bs = [rng.standard_normal((n, m)) for m in dims]
        Qs, ls, Rs, rs = [], [], [], []
        for i in range(N):
            G = rng.standard_normal((n, n))
            Qs.append(G @ G.T / n if psd else G + G.T)
            ls.append(rng.standard_normal(n) if linear else np.zeros(n))
            row, rrow = [], []
            for j, m in enumerate(dims):
                H = rng.standard_normal((m, m))
                row.append(H @ H.T + (np.eye(m) if i == j else 0.0 * np.eye(m)))
                rrow.append(rng.standard_normal(m) if linear else np.zeros(m))
            Rs.append(row)
            rs.append(rrow)
        stages.append(LQGameStage.from_blocks(A, Bs, Qs, ls, Rs, rs))
    G = [rng.standard_normal((n, n)) for _ in dims]
    terminal = (
        np.stack([g @ g.T / n for g in G]),
        np.stack([rng.standard_normal(n) if linear else np.zeros(n) for _ in dims]),
    )
    return stages, terminal


def test_single_player_step_is_lqr_gain():
    rng = np.random.default_rng(1)
    stages, _ = random_game(rng, 3, [2], 1)
    st = stages[0]
    Z = np.array([[2.0, 0.1, 0], [0.1, 1.0, 0], [0, 0, 3.0]])
    zeta = np.array([0.5, -0.2, 1.0])
    P, alpha, _ = solve_coupled_step(ValueApprox(Z[None], zeta[None]), st)
    B, R, r = st.B_i(0), st.R_ij(0, 0), st.r_ij(0, 0)
    H = R + B.T @ Z @ B
    np.testing.assert_allclose(P[0], np.linalg.solve(H, B.T @ Z @ st.A), rtol=1e-12)
    np.testing.assert_allclose(alpha[0], np.linalg.solve(H, B.T @ zeta + r), rtol=1e-12)


def test_no_future_no_incentive():
    rng = np.random.default_rng(2)
    stages, _ = random_game(rng, 4, [1, 2], 1, linear=False)
    st = stages[0]
    st.l[:] = rng.standard_normal(st.l.shape)
    value = ValueApprox(np.zeros((2, 4, 4)), np.zeros((2, 4)))
    P, alpha, now = solve_coupled_step(value, st)
    for i in range(2):
        assert not P[i].any() and not alpha[i].any()
    np.testing.assert_allclose(now.Z, st.Q)
    np.testing.assert_allclose(now.zeta, st.l)


def _scalar_stage():
    one = np.ones((1, 1))
    return LQGameStage.from_blocks(
        one, [one, one], [one, one], [np.zeros(1)] * 2,
        [[one, 0 * one], [0 * one, one]], [[np.zeros(1)] * 2] * 2,
    )


def test_two_player_scalar_by_hand():
    # S = [[2, 1], [1, 2]], Y = [1, 1]  =>  P1 = P2 = 1/3
    value = ValueApprox(np.ones((2, 1, 1)), np.zeros((2, 1)))
    P, alpha, _ = solve_coupled_step(value, _scalar_stage())
    assert P[0][0, 0] == pytest.approx(1 / 3, rel=1e-14)
    assert P[1][0, 0] == pytest.approx(P[0][0, 0], rel=1e-14)
    assert alpha[0][0] == 0.0 and alpha[1][0] == 0.0


def test_two_player_scalar_brute_force_deviation():
    value = ValueApprox(np.ones((2, 1, 1)), np.zeros((2, 1)))
    P, _, _ = solve_coupled_step(value, _scalar_stage())
    p1, p2 = P[0][0, 0], P[1][0, 0]
    grid = np.linspace(-2.0, 2.0, 40001)
    for x in (-1.5, 0.4, 1.0):
        u2 = -p2 * x
        cost1 = 0.5 * x**2 + 0.5 * grid**2 + 0.5 * (x + grid + u2) ** 2
        best = grid[np.argmin(cost1)]
        assert best == pytest.approx(-p1 * x, abs=1e-4)
        eq_cost = 0.5 * x**2 + 0.5 * (p1 * x) ** 2 + 0.5 * (x - p1 * x + u2) ** 2
        assert np.min(cost1) >= eq_cost - 1e-12


def test_zero_linear_terms_give_zero_alpha():
    rng = np.random.default_rng(3)
    stages, terminal = random_game(rng, 4, [2, 1, 1], 12, linear=False)
    strat = solve_lq_game(stages, terminal)
    for a in strat.alpha:
        assert not a.any()


def test_single_player_matches_riccati_oracle():
    rng = np.random.default_rng(4)
    stages, terminal = random_game(rng, 4, [2], 50)
    strat = solve_lq_game(stages, terminal)
    Ks, ks, Vs, vs = riccati_lqr(
        [s.A for s in stages], [s.B for s in stages], [s.Q[0] for s in stages],
        [s.l[0] for s in stages], [s.R[0] for s in stages], [s.r[0] for s in stages],
        terminal[0][0], terminal[1][0],
    )
    scale = max(np.max(np.abs(K)) for K in Ks)
    assert np.max(np.abs(strat.P[0] - np.array(Ks))) / scale < 1e-10
    assert np.max(np.abs(strat.alpha[0] - np.array(ks))) / np.max(np.abs(ks)) < 1e-10


def _perturbed(strat, i, rng, scale):
    P = [p.copy() for p in strat.P]
    alpha = [a.copy() for a in strat.alpha]
    P[i] += scale * rng.standard_normal(P[i].shape)
    alpha[i] += scale * rng.standard_normal(alpha[i].shape)
    return AffineStrategy(P, alpha)


def test_random_two_player_nash_deviation():
    rng = np.random.default_rng(5)
    stages, terminal = random_game(rng, 4, [1, 1], 10)
    strat = solve_lq_game(stages, terminal)
    x0 = rng.standard_normal(4)
    _, _, eq = closed_loop_rollout(strat, stages, x0, terminal)
    for i in range(2):
        for trial in range(200):
            scale = 10.0 ** rng.uniform(-4, 0)
            _, _, dev = closed_loop_rollout(_perturbed(strat, i, rng, scale), stages, x0, terminal)
            assert dev[i] >= eq[i] - 1e-8


def test_rollout_zero():
    rng = np.random.default_rng(6)
    stages, terminal = random_game(rng, 3, [1, 1], 5, linear=False)
    strat = solve_lq_game(stages, terminal)
    xs, us, costs = closed_loop_rollout(strat, stages, np.zeros(3))
    assert not xs.any() and not any(u.any() for u in us) and not costs.any()


def test_rollout_value_identity():
    rng = np.random.default_rng(7)
    stages, terminal = random_game(rng, 4, [2], 15, linear=False)
    strat = solve_lq_game(stages, terminal)
    x0 = rng.standard_normal(4)
    _, _, cost = closed_loop_rollout(strat, stages, x0, terminal)
    V0 = strat.values[0]
    assert cost[0] == pytest.approx(0.5 * x0 @ V0.Z[0] @ x0 + V0.zeta[0] @ x0, rel=1e-8)


def test_rollout_value_identity_with_affine_terms():
    rng = np.random.default_rng(8)
    stages, terminal = random_game(rng, 4, [1, 2], 15)
    strat = solve_lq_game(stages, terminal)
    x0 = rng.standard_normal(4)
    _, _, cost = closed_loop_rollout(strat, stages, x0, terminal)
    for i in range(2):
        assert cost[i] == pytest.approx(strat.values[0].evaluate(i, x0), rel=1e-8)


def test_rollout_quadratic_homogeneity():
    rng = np.random.default_rng(9)
    stages, terminal = random_game(rng, 4, [1, 1, 2], 8, linear=False)
    strat = solve_lq_game(stages, terminal)
    x0 = rng.standard_normal(4)
    _, _, c1 = closed_loop_rollout(strat, stages, x0, terminal)
    _, _, c2 = closed_loop_rollout(strat, stages, 2 * x0, terminal)
    np.testing.assert_allclose(c2, 4 * c1, rtol=1e-12)


def test_values_symmetric():
    rng = np.random.default_rng(10)
    stages, terminal = random_game(rng, 5, [2, 1, 1], 20, psd=False)
    strat = solve_lq_game(stages, terminal)
    for v in strat.values:
        for Z in v.Z:
            assert np.array_equal(Z, Z.T)


def test_zero_sum_consistency():
    rng = np.random.default_rng(11)
    n, K = 3, 12
    stages = []
    for _ in range(K):
        A = np.eye(n) + 0.2 * rng.standard_normal((n, n))
        B1, B2 = rng.standard_normal((n, 1)), rng.standard_normal((n, 1))
        G = rng.standard_normal((n, n))
        Q = G @ G.T
        l = rng.standard_normal(n)
        R11, R22 = np.array([[2.0]]), np.array([[5.0]])
        stages.append(LQGameStage.from_blocks(
            A, [B1, B2], [Q, -Q], [l, -l],
            [[R11, -R22], [-R11, R22]], [[np.zeros(1), np.zeros(1)], [np.zeros(1), np.zeros(1)]],
        ))
    QT = np.eye(n)
    strat = solve_lq_game(stages, (np.stack([QT, -QT]), np.zeros((2, n))))
    for v in strat.values:
        np.testing.assert_allclose(v.Z[1], -v.Z[0], atol=1e-9 * np.max(np.abs(v.Z[0])))
        np.testing.assert_allclose(v.zeta[1], -v.zeta[0], atol=1e-9 * max(1, np.max(np.abs(v.zeta[0]))))


def test_singular_system_reports_time_index():
    rng = np.random.default_rng(12)
    stages, terminal = random_game(rng, 2, [1, 1], 6)
    stages[3].R[:] = 0.0
    stages[3].B[:] = 0.0
    with pytest.raises(SolveFailure) as info:
        solve_lq_game(stages, terminal)
    assert info.value.time_index == 3
