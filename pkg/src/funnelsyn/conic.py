"""Solver-agnostic conic program assembly and an interior-point adapter.

A ConeProgram is `minimize c'x subject to b - A x in K` where K is a
product of zero, nonnegative, second-order, and PSD cones. PSD slices use
the scaled symmetric vectorization (svec): upper triangle, column-major,
off-diagonal entries multiplied by sqrt(2), so Frobenius inner products
are preserved. The bound solver is Clarabel, whose native PSD triangle
cone uses the same packing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

import clarabel


class ConicError(ValueError):
    """Malformed program or contract violation during assembly."""


# ---------------------------------------------------------------------------
# Scaled symmetric vectorization

_SQRT2 = np.sqrt(2.0)


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec_pack(M: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Pack a symmetric matrix; off-diagonals scaled by sqrt(2)."""
    M = np.asarray(M, float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ConicError(f"not square: {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > tol * scale:
        raise ConicError("matrix is not symmetric within tolerance")
    out = np.empty(svec_dim(n))
    a = 0
    for j in range(n):
        for i in range(j + 1):
            out[a] = M[i, j] if i == j else _SQRT2 * M[i, j]
            a += 1
    return out


def svec_unpack(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, float)
    n = int(round((np.sqrt(8 * len(v) + 1) - 1) / 2))
    if svec_dim(n) != len(v):
        raise ConicError(f"length {len(v)} is not a triangular number")
    M = np.zeros((n, n))
    a = 0
    for j in range(n):
        for i in range(j + 1):
            if i == j:
                M[i, j] = v[a]
            else:
                M[i, j] = M[j, i] = v[a] / _SQRT2
            a += 1
    return M


def svec_basis(n: int) -> List[np.ndarray]:
    """Symmetric basis matrices B_a with svec_pack(B_a) = e_a."""
    out = []
    for a in range(svec_dim(n)):
        e = np.zeros(svec_dim(n))
        e[a] = 1.0
        out.append(svec_unpack(e))
    return out


# ---------------------------------------------------------------------------
# Program container


@dataclass
class ConeBlock:
    kind: str  # zero | nonneg | soc | psd
    dim: int  # vector length (zero/nonneg/soc) or matrix side (psd)
    rows: list
    cols: list
    vals: list
    b: np.ndarray

    @property
    def length(self) -> int:
        return svec_dim(self.dim) if self.kind == "psd" else self.dim


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | numerical-failure
    x: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int


class ConeProgram:
    """minimize c'x subject to b - A x in K (blockwise)."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.c = np.zeros(n_vars)
        self.blocks: List[ConeBlock] = []

    def add_objective(self, idx, coef) -> None:
        np.add.at(self.c, np.asarray(idx, int), np.asarray(coef, float))

    def _add(self, kind, dim, rows, cols, vals, b) -> None:
        cols = np.asarray(cols, int)
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ConicError("variable index out of range")
        self.blocks.append(
            ConeBlock(kind, dim, list(rows), list(cols), list(vals), np.asarray(b, float))
        )

    def add_zero(self, rows, cols, vals, b) -> None:
        """A x = b."""
        self._add("zero", len(b), rows, cols, vals, b)

    def add_nonneg(self, rows, cols, vals, b) -> None:
        """A x <= b elementwise."""
        self._add("nonneg", len(b), rows, cols, vals, b)

    def add_soc(self, rows, cols, vals, b) -> None:
        """b - A x = (t, z) with ||z||_2 <= t."""
        self._add("soc", len(b), rows, cols, vals, b)

    def add_psd_expr(self, const: np.ndarray, terms: Sequence[Tuple[int, np.ndarray]]) -> None:
        """Impose const + sum_i x_i * M_i >= 0 (PSD), matrices symmetric."""
        side = const.shape[0]
        rows, cols, vals = [], [], []
        for var, M in terms:
            col = -svec_pack(M)
            nz = np.nonzero(col)[0]
            rows.extend(nz.tolist())
            cols.extend([var] * len(nz))
            vals.extend(col[nz].tolist())
        self._add("psd", side, rows, cols, vals, svec_pack(const))

    # -- solving

    def to_sparse(self):
        offsets = np.cumsum([0] + [blk.length for blk in self.blocks])
        rows, cols, vals = [], [], []
        b = np.concatenate([blk.b for blk in self.blocks]) if self.blocks else np.zeros(0)
        for off, blk in zip(offsets, self.blocks):
            rows.extend([off + r for r in blk.rows])
            cols.extend(blk.cols)
            vals.extend(blk.vals)
        A = sparse.csc_matrix(
            (vals, (rows, cols)), shape=(int(offsets[-1]), self.n_vars)
        )
        return A, b

    def dump(self, path) -> None:
        """Plain-text sparse dump: objective, then one line per nonzero."""
        A, b = self.to_sparse()
        coo = A.tocoo()
        with open(path, "w", newline="\n") as f:
            f.write(f"vars {self.n_vars}\n")
            f.write("cones " + " ".join(f"{blk.kind}:{blk.dim}" for blk in self.blocks) + "\n")
            for i, v in enumerate(self.c):
                if v != 0.0:
                    f.write(f"c {i} {v:.17g}\n")
            for r, c_, v in zip(coo.row, coo.col, coo.data):
                f.write(f"A {r} {c_} {v:.17g}\n")
            for i, v in enumerate(b):
                if v != 0.0:
                    f.write(f"b {i} {v:.17g}\n")


_CONE_MAP = {
    "zero": clarabel.ZeroConeT,
    "nonneg": clarabel.NonnegativeConeT,
    "soc": clarabel.SecondOrderConeT,
    "psd": clarabel.PSDTriangleConeT,
}


def solve(p: ConeProgram, max_iter: int = 200) -> SolveResult:
    """Solve with the Clarabel interior-point method."""
    A, b = p.to_sparse()
    cones = [_CONE_MAP[blk.kind](blk.dim) for blk in p.blocks]
    P = sparse.csc_matrix((p.n_vars, p.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(P, p.c, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("Solved", "AlmostSolved"):
        x = np.asarray(sol.x)
        return SolveResult("optimal", x, float(p.c @ x), int(sol.iterations))
    if "Infeasible" in status:
        return SolveResult("infeasible", None, None, int(sol.iterations))
    return SolveResult("numerical-failure", None, None, int(sol.iterations))


# ---------------------------------------------------------------------------
# Block-structured symmetric matrix expressions (for LMI assembly)


class BlockExpr:
    """Affine symmetric-matrix expression with named row/column blocks.

    Entries are const + sum_i x_i * coeff_i; set_block mirrors off-diagonal
    blocks so the assembled matrix stays symmetric.
    """

    def __init__(self, sizes: Sequence[int]):
        self.sizes = list(sizes)
        self.offs = np.cumsum([0] + self.sizes)
        n = int(self.offs[-1])
        self.side = n
        self.const = np.zeros((n, n))
        self.terms: dict = {}

    def _slice(self, i):
        return slice(int(self.offs[i]), int(self.offs[i + 1]))

    def _coef(self, var):
        if var not in self.terms:
            self.terms[var] = np.zeros((self.side, self.side))
        return self.terms[var]

    def set_block(self, i: int, j: int, const=None, terms=()):
        ri, rj = self._slice(i), self._slice(j)
        if const is not None:
            const = np.asarray(const, float)
            self.const[ri, rj] += const
            if i != j:
                self.const[rj, ri] += const.T
        for var, M in terms:
            M = np.asarray(M, float)
            tgt = self._coef(var)
            tgt[ri, rj] += M
            if i != j:
                tgt[rj, ri] += M.T

    def items(self):
        return list(self.terms.items())


def mat_terms(vars_idx, basis, left=None, right=None):
    """Terms for L @ M @ R where M = sum_a x_a basis_a."""
    out = []
    for var, Ba in zip(vars_idx, basis):
        M = Ba
        if left is not None:
            M = left @ M
        if right is not None:
            M = M @ right
        out.append((int(var), M))
    return out
