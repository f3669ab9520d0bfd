"""Support-value machinery: S-matrix assembly, the dual bound against a
Monte Carlo primal oracle, the invariance recursion, and funnel rescaling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelsyn import support as sup
from funnelsyn.funnel_sdp import Funnel
from helpers import SCALAR_C, SCALAR_D, SCALAR_E, SCALAR_G, scalar_chain_lin
from oracles import support_primal_max


def _scalar_sd(a=0.5, f=0.5, Q=1.0, Q1=1.0):
    return sup.assemble_S(
        np.array([[a]]), np.array([[0.0]]), np.array([[f]]),
        SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        K=np.array([[0.0]]), Q_k=np.array([[Q]]), Q_k1=np.array([[Q1]]),
        gamma=1.0,
    )


# ---------------------------------------------------------------------------
# assembly


def test_assemble_scalar_hand_values():
    sd = _scalar_sd()
    np.testing.assert_allclose(sd.S0, [[0.25, 0.25], [0.25, 0.25]], atol=1e-14)
    np.testing.assert_allclose(sd.S1, np.diag([1.0, 0.0]), atol=1e-14)
    np.testing.assert_allclose(sd.S3, np.diag([0.0, 1.0]), atol=1e-14)
    assert sd.S2 is None  # no nonlinearity channel


def test_assemble_S2_structure_zero_gain():
    """K=0, C=0: the dq channel reaches S2 only through G."""
    n_x, n_p, n_w = 2, 1, 1
    A = 0.5 * np.eye(n_x)
    B = np.zeros((n_x, 1))
    F = np.array([[0.1], [0.0]])
    E = np.array([[1.0], [0.0]])
    C = np.zeros((1, n_x))
    D = np.zeros((1, 1))
    G = np.array([[0.3]])
    gamma = 2.0
    sd = sup.assemble_S(A, B, F, E, C, D, G, np.zeros((1, n_x)), np.eye(n_x), np.eye(n_x), gamma)
    # eta block of S2 must vanish; w block carries -gamma^2 G'G
    assert np.abs(sd.S2[:n_x, :n_x]).max() == 0.0
    assert abs(sd.S2[-1, -1] - (-(gamma**2) * G[0, 0] ** 2)) < 1e-14
    # dp block is +I
    assert abs(sd.S2[n_x, n_x] - 1.0) < 1e-14


def test_S0_is_psd_on_random_nodes():
    rng = np.random.default_rng(8)
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        F = rng.normal(size=(3, 2))
        E = rng.normal(size=(3, 2))
        C = rng.normal(size=(2, 3))
        D = rng.normal(size=(2, 2))
        G = rng.normal(size=(2, 2))
        K = rng.normal(size=(2, 3))
        L = rng.normal(size=(3, 3))
        Q = L @ L.T + 0.1 * np.eye(3)
        sd = sup.assemble_S(A, B, F, E, C, D, G, K, Q, Q, gamma=1.5)
        assert np.linalg.eigvalsh(sd.S0).min() >= -1e-10
        assert np.linalg.eigvalsh(sd.S1).min() >= -1e-12
        assert np.linalg.eigvalsh(sd.S3).min() >= -1e-12


# ---------------------------------------------------------------------------
# dual solve


def test_dual_scalar_analytic():
    """a=f=0.5, Q=Q+=1: beta_hat = (a+f)^2 = 1 with multipliers 0.5, 0.5."""
    bhat, lam = sup.solve_support_dual(_scalar_sd())
    assert abs(bhat - 1.0) < 1e-6
    assert abs(lam[0] - 0.5) < 1e-5
    assert abs(lam[2] - 0.5) < 1e-5
    assert lam[1] == 0.0


def test_dual_zero_reachable_set():
    bhat, _ = sup.solve_support_dual(_scalar_sd(a=0.0, f=0.0))
    assert abs(bhat) < 1e-8


def test_dual_dominates_primal_scalar():
    """Monte Carlo primal oracle: sampled max <= beta_hat + 1e-8 and, in the
    scalar no-nonlinearity case, at least 0.95 beta_hat."""
    bhat, _ = sup.solve_support_dual(_scalar_sd())
    mc = support_primal_max(
        np.array([[0.5]]), np.array([[0.0]]), np.array([[0.5]]),
        SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
        K=np.array([[0.0]]), Q_k=np.eye(1), Q_k1=np.eye(1), gamma=1.0,
        n_samples=100_000, rng=np.random.default_rng(13),
    )
    assert mc <= bhat + 1e-8
    assert mc >= 0.95 * bhat


def test_dual_dominates_primal_with_nonlinearity():
    rng = np.random.default_rng(17)
    A = np.array([[0.8, 0.1], [0.0, 0.7]])
    B = np.array([[0.0], [0.5]])
    F = np.array([[0.05], [0.02]])
    E = np.array([[0.1], [0.0]])
    C = np.array([[1.0, 0.0]])
    D = np.zeros((1, 1))
    G = np.zeros((1, 1))
    K = np.array([[-0.2, -0.3]])
    Q = 0.5 * np.eye(2)
    gamma = 0.8
    sd = sup.assemble_S(A, B, F, E, C, D, G, K, Q, Q, gamma)
    bhat, lam = sup.solve_support_dual(sd)
    assert np.all(lam >= -1e-9)
    mc = support_primal_max(A, B, F, E, C, D, G, K, Q, Q, gamma,
                            n_samples=100_000, rng=rng)
    assert mc <= bhat + 1e-8


# ---------------------------------------------------------------------------
# recursion


def test_beta_recursion_basic():
    bs = sup.beta_recursion([0.5, 0.3], alpha=0.9)
    np.testing.assert_allclose(bs.beta, [1.0, 0.5, 0.45])


def test_beta_recursion_fixed_point():
    bs = sup.beta_recursion([1.0, 1.0, 1.0], alpha=1.0)
    np.testing.assert_allclose(bs.beta, 1.0)


def test_beta_recursion_max_branch():
    bs = sup.beta_recursion([2.0, 0.1, 0.1], alpha=0.5)
    np.testing.assert_allclose(bs.beta, [1.0, 2.0, 1.0, 0.5])


def test_beta_recursion_split_invariance():
    """Running the recursion in two halves with the carried beta matches
    the one-shot computation exactly."""
    rng = np.random.default_rng(3)
    bhat = rng.uniform(0.2, 1.5, size=8)
    alpha = 0.9
    full = sup.beta_recursion(bhat, alpha).beta
    first = sup.beta_recursion(bhat[:4], alpha).beta
    # resume: carry beta[4] as the running value
    beta = list(first)
    for b in bhat[4:]:
        beta.append(max(alpha * beta[-1], b))
    np.testing.assert_array_equal(full, np.array(beta))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12),
    st.floats(min_value=0.01, max_value=1.0),
)
def test_beta_bounded_by_one_property(bhat, alpha):
    """If every per-node bound is <= 1 then the certified scale never
    exceeds 1 beyond the initial node."""
    bs = sup.beta_recursion(bhat, alpha)
    assert np.all(bs.beta[1:] <= 1.0 + 1e-15)
    assert bs.beta[0] == 1.0


# ---------------------------------------------------------------------------
# scaling


def _unit_funnel(N=3, n_x=2, n_u=1):
    Q = np.repeat(np.eye(n_x)[None], N + 1, axis=0)
    K = np.full((N, n_u, n_x), 0.1)
    Y = np.array([K[k] @ Q[k] for k in range(N)])
    return Funnel(Q=Q, Y=Y, K=K)


def test_scaling_identity():
    f = _unit_funnel()
    bs = sup.beta_recursion(np.ones(f.N), alpha=1.0)
    scaled = sup.apply_support_scaling(f, bs)
    np.testing.assert_array_equal(scaled.Q, f.Q)
    np.testing.assert_array_equal(scaled.K, f.K)


def test_scaling_membership_flip():
    """beta = 4 on Q = I doubles the ellipsoid radius: a point at distance 2
    moves from outside to the boundary."""
    f = _unit_funnel()
    bs = sup.BetaSequence(beta=np.full(f.N + 1, 4.0), beta_hat=np.full(f.N, 4.0), alpha=1.0)
    bs.beta[0] = 4.0
    scaled = sup.apply_support_scaling(f, bs)
    eta = np.array([2.0, 0.0])
    before = eta @ np.linalg.inv(f.Q[1]) @ eta
    after = eta @ np.linalg.inv(scaled.Q[1]) @ eta
    assert before > 1.0 + 1e-12
    assert abs(after - 1.0) < 1e-12
    np.testing.assert_array_equal(scaled.K, f.K)
    # Y refreshed for consistency with the scaled Q
    np.testing.assert_allclose(scaled.Y[0], f.K[0] @ scaled.Q[0], atol=1e-14)


def test_scaling_negative_beta_rejected():
    f = _unit_funnel()
    bs = sup.BetaSequence(beta=np.array([1.0, -0.1, 1.0, 1.0]),
                          beta_hat=np.ones(3), alpha=1.0)
    with pytest.raises(ValueError):
        sup.apply_support_scaling(f, bs)


def test_compute_beta_scalar_chain():
    """End-to-end per-node bounds on the stable scalar chain: contracting
    dynamics with a unit funnel keep every certified scale below 1."""
    lin = scalar_chain_lin(N=4, a=0.5, f=0.1)
    f = Funnel(
        Q=np.ones((5, 1, 1)),
        Y=np.zeros((4, 1, 1)),
        K=np.zeros((4, 1, 1)),
    )
    bs = sup.compute_beta(lin, SCALAR_E, SCALAR_C, SCALAR_D, SCALAR_G,
                          f, gamma=np.ones(4), alpha=0.9)
    # beta_hat = (0.5 + 0.1)^2 = 0.36 per node
    np.testing.assert_allclose(bs.beta_hat, 0.36, atol=1e-6)
    assert np.all(bs.beta <= 1.0)
