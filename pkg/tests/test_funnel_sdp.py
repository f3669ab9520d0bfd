"""Funnel SDP: per-node invariance LMI assembly, solve on a scalar chain,
boundary/Schur feasibility, and the disturbance-multiplier grid search."""

import numpy as np
import pytest

from funnelsyn import conic
from funnelsyn import funnel_sdp as fsdp
from helpers import SCALAR_C, SCALAR_D, SCALAR_E, SCALAR_G, materialize, scalar_chain_lin
from oracles import lyapunov_violation


# ---------------------------------------------------------------------------
# LMI assembly


def _scalar_lmi_expr(alpha=0.9, lam_w=0.5):
    q_basis = conic.svec_basis(1)
    y_basis = fsdp._y_basis(1, 1)
    return fsdp.build_node_lmi(
        np.array([[0.5]]), np.array([[0.0]]), np.array([[0.1]]),
        SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        q_vars=[0], q1_vars=[1], y_vars=[2], nup_var=None,
        alpha=alpha, lambda_w=lam_w, gamma=1.0,
        q_basis=q_basis, y_basis=y_basis,
    )


def test_scalar_lmi_hand_checked():
    """Scalar node a=0.5, b=0, f=0.1, no nonlinearity, Q = Q+ = 1,
    alpha=0.9, lambda_w=0.5: the reduced 3x3 block and its minors."""
    expr = _scalar_lmi_expr()
    M = materialize(expr, {0: 1.0, 1: 1.0, 2: 0.0})
    np.testing.assert_allclose(
        M, [[0.4, 0.0, 0.5], [0.0, 0.5, 0.1], [0.5, 0.1, 1.0]], atol=1e-15
    )
    minors = [np.linalg.det(M[:k, :k]) for k in (1, 2, 3)]
    np.testing.assert_allclose(minors, [0.4, 0.2, 0.071], atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


def test_lmi_linearity_in_decision_variables():
    expr = _scalar_lmi_expr()
    M1 = materialize(expr, {0: 1.0, 1: 1.0, 2: 0.3})
    M2 = materialize(expr, {0: 2.0, 1: 2.0, 2: 0.6})
    const_part = expr.const
    np.testing.assert_allclose(M2 - const_part, 2.0 * (M1 - const_part), atol=1e-14)


def test_full_lmi_block_structure():
    """With a nonlinearity channel the 5-block LMI carries the gamma^-2
    weight on the q-channel diagonal and E in the coupling block."""
    n_x, n_u, n_w, n_p, n_q = 2, 1, 1, 1, 1
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    F = np.array([[0.05], [0.0]])
    E = np.array([[1.0], [0.0]])
    C = np.array([[1.0, 0.0]])
    D = np.zeros((1, 1))
    G = np.zeros((1, 1))
    m = conic.svec_dim(n_x)
    q_basis = conic.svec_basis(n_x)
    y_basis = fsdp._y_basis(n_u, n_x)
    gamma = 2.0
    expr = fsdp.build_node_lmi(
        A, B, F, E, C, D, G,
        q_vars=list(range(m)), q1_vars=list(range(m, 2 * m)),
        y_vars=list(range(2 * m, 2 * m + n_u * n_x)), nup_var=2 * m + n_u * n_x,
        alpha=0.95, lambda_w=0.4, gamma=gamma,
        q_basis=q_basis, y_basis=y_basis,
    )
    assert expr.side == n_x + n_p + n_w + n_x + n_q
    vals = {i: v for i, v in enumerate(conic.svec_pack(np.eye(2)))}
    vals.update({i + m: v for i, v in enumerate(conic.svec_pack(np.eye(2)))})
    vals[2 * m] = 0.0
    vals[2 * m + 1] = 0.0
    nup = 0.7
    vals[2 * m + n_u * n_x] = nup
    M = materialize(expr, vals)
    # (1,1) block: (alpha - lambda_w) Q
    np.testing.assert_allclose(M[:2, :2], (0.95 - 0.4) * np.eye(2), atol=1e-14)
    # nonlinearity diagonal: nu_p I
    assert abs(M[2, 2] - nup) < 1e-14
    # disturbance diagonal: lambda_w I
    assert abs(M[3, 3] - 0.4) < 1e-14
    # next-state coupling: A Q (+ B Y = 0 here)
    np.testing.assert_allclose(M[4:6, :2], A, atol=1e-14)
    # nu_p E coupling and q-channel weight nu_p / gamma^2
    np.testing.assert_allclose(M[4:6, 2:3], nup * E, atol=1e-14)
    assert abs(M[6, 6] - nup / gamma**2) < 1e-14
    np.testing.assert_allclose(M, M.T, atol=0)


def test_gamma_floor_clamp(caplog):
    n_x = 1
    q_basis = conic.svec_basis(n_x)
    y_basis = fsdp._y_basis(1, 1)
    expr = fsdp.build_node_lmi(
        np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)),
        np.eye(1), np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)),
        q_vars=[0], q1_vars=[1], y_vars=[2], nup_var=3,
        alpha=0.9, lambda_w=0.5, gamma=0.0,
        q_basis=q_basis, y_basis=y_basis,
    )
    M = materialize(expr, {0: 1.0, 1: 1.0, 2: 0.0, 3: 1.0})
    assert abs(M[-1, -1] - 1.0 / fsdp.GAMMA_FLOOR**2) < 1e-3 / fsdp.GAMMA_FLOOR**2


# ---------------------------------------------------------------------------
# SDP solve on the scalar chain


@pytest.fixture(scope="module")
def scalar_solution():
    lin = scalar_chain_lin(N=5, a=0.5, f=0.1)
    Q_ref = np.ones((6, 1, 1))
    Y_ref = np.zeros((5, 1, 1))
    # large trust-region weight keeps the solution near the unit reference
    # instead of collapsing to the PSD floor
    sol = fsdp.build_and_solve_funnel_sdp(
        lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        gamma=np.ones(5),
        params=fsdp.LyapunovParams(alpha=0.9, lambda_w=0.45),
        Q_ref=Q_ref, Y_ref=Y_ref, Q_i=None, Q_f=None, w_trf=10.0,
    )
    return lin, sol


def test_scalar_chain_feasible(scalar_solution):
    lin, sol = scalar_solution
    assert sol.status == "optimal"
    Q = sol.funnel.Q[:, 0, 0]
    assert np.all(Q > 0)
    # chain is time-invariant: interior nodes settle to a near-constant size
    assert np.ptp(Q[1:-1]) < 0.2 * Q[1:-1].mean()


def test_scalar_chain_lyapunov_implication(scalar_solution):
    """Monte Carlo implication oracle at every node of the solved chain."""
    lin, sol = scalar_solution
    rng = np.random.default_rng(21)
    for k in range(lin.N):
        v = lyapunov_violation(
            lin.A[k], lin.B[k], lin.F[k], SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
            sol.funnel.K[k], sol.funnel.Q[k], sol.funnel.Q[k + 1],
            gamma=1.0, alpha=0.9, n_samples=10_000, rng=rng,
        )
        assert v <= 1e-9, f"node {k}: violation {v}"


def test_psd_floor_and_KQ_consistency(scalar_solution):
    lin, sol = scalar_solution
    for k in range(lin.N + 1):
        assert np.linalg.eigvalsh(sol.funnel.Q[k]).min() > 1e-3  # well above floor
    for k in range(lin.N):
        np.testing.assert_allclose(
            sol.funnel.K[k] @ sol.funnel.Q[k], sol.funnel.Y[k], atol=1e-8
        )


def test_schur_input_bound(scalar_solution):
    lin, sol = scalar_solution
    for k in range(lin.N):
        KQK = sol.funnel.K[k] @ sol.funnel.Q[k] @ sol.funnel.K[k].T
        assert np.linalg.eigvalsh(sol.mu[k] * np.eye(1) - KQK).min() >= -1e-7


def test_boundary_set_constraints():
    lin = scalar_chain_lin(N=4, a=0.5, f=0.1)
    Q_i = np.array([[0.2]])
    Q_f = np.array([[0.6]])
    sol = fsdp.build_and_solve_funnel_sdp(
        lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        gamma=np.ones(4),
        params=fsdp.LyapunovParams(alpha=0.9, lambda_w=0.45),
        Q_ref=np.full((5, 1, 1), 0.3), Y_ref=np.zeros((4, 1, 1)),
        Q_i=Q_i, Q_f=Q_f,
    )
    assert sol.status == "optimal"
    assert np.linalg.eigvalsh(sol.funnel.Q[0] - Q_i).min() >= -1e-7
    assert np.linalg.eigvalsh(Q_f - sol.funnel.Q[-1]).min() >= -1e-7


def test_infeasible_reported_not_raised():
    """An explosive node with a tiny terminal cap cannot be certified."""
    lin = scalar_chain_lin(N=1, a=5.0, f=1.0)
    sol = fsdp.build_and_solve_funnel_sdp(
        lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        gamma=np.ones(1),
        params=fsdp.LyapunovParams(alpha=0.9, lambda_w=0.45),
        Q_ref=np.ones((2, 1, 1)), Y_ref=np.zeros((1, 1, 1)),
        Q_i=np.array([[1.0]]), Q_f=np.array([[1e-6]]),
    )
    assert sol.status != "optimal"
    assert sol.objective == np.inf


# ---------------------------------------------------------------------------
# lambda_w grid search


def _solve_chain(lam_w):
    lin = scalar_chain_lin(N=5, a=0.5, f=0.1)
    return fsdp.build_and_solve_funnel_sdp(
        lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        gamma=np.ones(5),
        params=fsdp.LyapunovParams(alpha=0.9, lambda_w=lam_w),
        Q_ref=np.ones((6, 1, 1)), Y_ref=np.zeros((5, 1, 1)),
        Q_i=None, Q_f=None,
    )


def test_grid_search_matches_exhaustive_resolve():
    candidates = [0.3, 0.5, 0.7]
    lam, best = fsdp.lambda_w_grid_search(candidates, _solve_chain)
    objectives = {c: _solve_chain(c).objective for c in candidates}
    feasible = {c: o for c, o in objectives.items() if np.isfinite(o)}
    assert lam == min(feasible, key=feasible.get)
    assert abs(best.objective - feasible[lam]) < 1e-9


def test_grid_search_single_candidate():
    lam, sol = fsdp.lambda_w_grid_search([0.45], _solve_chain)
    direct = _solve_chain(0.45)
    assert lam == 0.45
    assert abs(sol.objective - direct.objective) < 1e-9


def test_grid_search_empty_raises():
    with pytest.raises(fsdp.FunnelUpdateError):
        fsdp.lambda_w_grid_search([], _solve_chain)


def test_grid_search_all_infeasible_raises():
    def bad(lam_w):
        lin = scalar_chain_lin(N=1, a=5.0, f=1.0)
        return fsdp.build_and_solve_funnel_sdp(
            lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
            gamma=np.ones(1),
            params=fsdp.LyapunovParams(alpha=0.9, lambda_w=lam_w),
            Q_ref=np.ones((2, 1, 1)), Y_ref=np.zeros((1, 1, 1)),
            Q_i=np.array([[1.0]]), Q_f=np.array([[1e-6]]),
        )

    with pytest.raises(fsdp.FunnelUpdateError):
        fsdp.lambda_w_grid_search([0.3, 0.5], bad)


def test_lyapunov_params_validation():
    with pytest.raises(ValueError):
        fsdp.LyapunovParams(alpha=0.0)
    with pytest.raises(ValueError):
        fsdp.LyapunovParams(alpha=0.9, lambda_w=0.0)
