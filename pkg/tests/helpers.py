"""Shared non-fixture test helpers: block-expression evaluation and a
scalar-chain linearization used by the funnel-SDP and support tests."""

import numpy as np


def materialize(expr, values):
    """Evaluate a BlockExpr at a dict {var index: value}."""
    M = expr.const.copy()
    for var, coef in expr.terms.items():
        M = M + values.get(var, 0.0) * coef
    return M


def scalar_chain_lin(N=5, a=0.5, f=0.1):
    """Per-node affine models for a scalar stable chain with no input effect
    and no nonlinearity channel (n_p = n_q = 0)."""
    from funnelsyn.models import DiscreteLinearization

    A = np.full((N, 1, 1), a)
    B = np.zeros((N, 1, 1))
    F = np.full((N, 1, 1), f)
    z = np.zeros((N, 1))
    f_next = np.zeros((N, 1))
    return DiscreteLinearization(A=A, B=B, F=F, z=z, f_next=f_next, h=1.0)


SCALAR_E = np.zeros((1, 0))  # empty nonlinearity channel
SCALAR_C = np.zeros((0, 1))
SCALAR_D = np.zeros((0, 1))
SCALAR_G = np.zeros((0, 1))
