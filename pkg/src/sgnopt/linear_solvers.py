"""Factorizations and linear solves behind every search-direction method.

Covers the three solver roles: sparse LU (with fill-reducing ordering) for the
saddle-point systems, stabilized factorization plus BiCGSTAB refinement for
accurate indefinite solves, dense Cholesky for the reduced Gauss-Newton
Hessian, and matrix-free conjugate gradients on the reduced operator.
Factorizations are immutable after construction and may be shared between
threads for concurrent solves.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    NegativeCurvature,
    NoConvergence,
    NotPositiveDefinite,
    SingularMatrix,
)
from .sparse import CscMatrix


@dataclass
class SolveReport:
    """Accuracy and timing record for one linear solve."""

    relative_residual: float
    refine_iterations: int = 0
    factor_time: float = 0.0
    solve_time: float = 0.0


@dataclass
class StabilizationConfig:
    """Diagonal stabilization and refinement settings for saddle-point solves.

    ``eps_x`` is added to the state diagonal, ``-eps_lambda`` to the multiplier
    diagonal; the parameter diagonal is left untouched.  Zero values disable
    stabilization entirely (the factorization then acts on the original
    matrix).
    """

    eps_x: float = 1e-6
    eps_lambda: float = 1e-6
    refine_tolerance: float = 1e-10
    max_refine_iters: int = 50

    def __post_init__(self):
        if self.eps_x < 0 or self.eps_lambda < 0:
            raise ValueError("stabilization shifts must be non-negative")


class SparseFactorization:
    """LU factorization of a square sparse matrix (COLAMD ordering).

    ``fill_nnz`` counts the nonzeros of the combined factors with the unit
    diagonal of L excluded, so a factored identity reports exactly n.
    """

    __slots__ = ("n", "fill_nnz", "_lu")

    def __init__(self, m: CscMatrix):
        if m.rows != m.cols:
            raise DimensionMismatch(f"cannot factor non-square {m.rows}x{m.cols} matrix")
        empty_col = np.flatnonzero(np.diff(m.indptr) == 0)
        if empty_col.size:
            raise SingularMatrix(
                f"structurally singular: column {empty_col[0]} is empty",
                pivot_index=int(empty_col[0]),
            )
        present = np.zeros(m.rows, dtype=bool)
        present[m.indices] = True
        if not present.all():
            row = int(np.flatnonzero(~present)[0])
            raise SingularMatrix(
                f"structurally singular: row {row} is empty", pivot_index=row
            )
        try:
            self._lu = spla.splu(m.to_scipy())
        except RuntimeError as exc:  # SuperLU reports no pivot location
            raise SingularMatrix(f"factorization failed: {exc}") from exc
        self.n = m.rows
        self.fill_nnz = int(self._lu.nnz) - self.n

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} rows, expected {self.n}")
        return self._lu.solve(b, trans="T" if transpose else "N")


def factor_sparse(m: CscMatrix) -> SparseFactorization:
    """Factor a square sparse matrix for repeated solves."""
    return SparseFactorization(m)


def _relative_residual(a_sp, x: np.ndarray, b: np.ndarray, bnorm: float) -> float:
    if bnorm == 0.0:
        return 0.0
    return float(np.linalg.norm(b - a_sp @ x) / bnorm)


def stabilized_matrix(k, cfg: StabilizationConfig) -> CscMatrix:
    """Saddle-point matrix with the signed diagonal shift applied.

    Adds +eps_x to the first n_x diagonal entries and -eps_lambda to the last
    n_c; zero shifts return the original matrix unchanged.
    """
    m: CscMatrix = k.matrix
    if cfg.eps_x == 0.0 and cfg.eps_lambda == 0.0:
        return m
    shift = np.concatenate(
        [
            np.full(k.n_x, cfg.eps_x),
            np.zeros(k.n_p),
            np.full(k.n_c, -cfg.eps_lambda),
        ]
    )
    return CscMatrix.from_scipy(m.to_scipy() + sp.diags(shift, format="csc"))


def solve_kkt_stabilized(k, rhs: np.ndarray, cfg: StabilizationConfig | None = None):
    """Solve an assembled saddle-point system to high accuracy.

    ``k`` provides ``matrix`` (CscMatrix of dimension 2*n_x + n_p) and the
    block sizes ``n_x``, ``n_p``, ``n_c``; ``rhs`` is ordered (state rows,
    parameter rows, multiplier rows).  The matrix is factored with the signed
    diagonal shift (+eps_x, 0, -eps_lambda) and the shift is corrected by
    BiCGSTAB on the original matrix, left-preconditioned by the stabilized
    factorization.  Returns ``(solution, SolveReport)`` where the report's
    residual is measured against the unshifted matrix.
    """
    cfg = cfg or StabilizationConfig()
    m: CscMatrix = k.matrix
    dim = 2 * k.n_x + k.n_p
    rhs = np.asarray(rhs, dtype=np.float64)
    if m.rows != dim or rhs.shape != (dim,):
        raise DimensionMismatch(
            f"system dimension {m.rows} / rhs {rhs.shape} do not match 2*n_x+n_p={dim}"
        )
    a_sp = m.to_scipy()

    t0 = time.perf_counter()
    factor = factor_sparse(stabilized_matrix(k, cfg))
    factor_time = time.perf_counter() - t0

    t1 = time.perf_counter()
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(dim), SolveReport(0.0, 0, factor_time, time.perf_counter() - t1)

    x = factor.solve(rhs)
    res = _relative_residual(a_sp, x, rhs, bnorm)
    if res <= cfg.refine_tolerance:
        return x, SolveReport(res, 0, factor_time, time.perf_counter() - t1)

    x, res, iters = _bicgstab_refine(a_sp, rhs, x, factor, cfg)
    report = SolveReport(res, iters, factor_time, time.perf_counter() - t1)
    if res > cfg.refine_tolerance:
        raise NoConvergence(
            f"BiCGSTAB refinement stalled at relative residual {res:.3e} "
            f"after {iters} iterations",
            residual=res,
            iterations=iters,
            best=x,
        )
    return x, report


def _bicgstab_refine(a_sp, b, x0, precond: SparseFactorization, cfg: StabilizationConfig):
    """Restart-free preconditioned BiCGSTAB; terminates on the true residual."""
    bnorm = float(np.linalg.norm(b))
    x = x0.copy()
    r = precond.solve(b - a_sp @ x)
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    best_x, best_res = x.copy(), _relative_residual(a_sp, x, b, bnorm)
    for it in range(1, cfg.max_refine_iters + 1):
        rho_new = float(r_hat @ r)
        if rho_new == 0.0 or omega == 0.0:
            return best_x, best_res, it - 1
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = precond.solve(a_sp @ p)
        denom = float(r_hat @ v)
        if denom == 0.0:
            return best_x, best_res, it - 1
        alpha = rho / denom
        s = r - alpha * v
        t = precond.solve(a_sp @ s)
        tt = float(t @ t)
        omega = float(t @ s) / tt if tt > 0.0 else 0.0
        x = x + alpha * p + omega * s
        r = s - omega * t
        res = _relative_residual(a_sp, x, b, bnorm)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= cfg.refine_tolerance:
            return x, res, it
    return best_x, best_res, cfg.max_refine_iters


class DenseFactorization:
    """Cholesky factorization of a symmetric positive-definite dense matrix."""

    __slots__ = ("n", "_chol")

    def __init__(self, h: np.ndarray):
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionMismatch("expected a square dense matrix")
        try:
            self._chol = sla.cho_factor(h, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            match = re.match(r"(\d+)-th leading minor", str(exc))
            pivot = int(match.group(1)) - 1 if match else -1
            raise NotPositiveDefinite(str(exc), pivot_index=pivot) from exc
        self.n = h.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} rows, expected {self.n}")
        return sla.cho_solve(self._chol, b, check_finite=False)


def cholesky_dense(h: np.ndarray) -> DenseFactorization:
    """Factor a symmetric positive-definite dense matrix."""
    return DenseFactorization(h)


class ReducedOperator:
    """Matrix-free application of the reduced Gauss-Newton Hessian.

    Applies y -> S^T A S y + B S y + S^T B^T y + C y where
    S = -dcdx^{-1} dcdp, using one forward and one transposed sparse solve
    per application instead of forming S.
    """

    __slots__ = ("a", "b", "c", "dcdp", "factor", "n_p", "applications")

    def __init__(self, a: CscMatrix, b: CscMatrix, c: CscMatrix,
                 dcdx_factor: SparseFactorization, dcdp: CscMatrix):
        self.a = a.to_scipy()
        self.b = b.to_scipy()
        self.c = c.to_scipy()
        self.dcdp = dcdp.to_scipy()
        self.factor = dcdx_factor
        self.n_p = c.rows
        self.applications = 0

    def apply(self, y: np.ndarray) -> np.ndarray:
        self.applications += 1
        t = -self.factor.solve(self.dcdp @ y)          # t = S y
        u = self.a @ t + self.b.T @ y
        st_u = -(self.dcdp.T @ self.factor.solve(u, transpose=True))
        return st_u + self.b @ t + self.c @ y


def cg_reduced(op: ReducedOperator, rhs: np.ndarray, eta: float = 1e-3,
               max_iters: int | None = None):
    """Conjugate gradients on the reduced operator to relative residual eta.

    Raises :class:`NegativeCurvature` (carrying the last iterate) if the
    operator is not positive definite along a search direction, and
    :class:`NoConvergence` past the iteration cap (default ``10 * n_p``).
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (op.n_p,):
        raise DimensionMismatch(f"rhs has length {rhs.size}, expected {op.n_p}")
    if max_iters is None:
        max_iters = 10 * op.n_p
    t0 = time.perf_counter()
    bnorm = float(np.linalg.norm(rhs))
    x = np.zeros_like(rhs)
    if bnorm == 0.0:
        return x, SolveReport(0.0, 0, 0.0, time.perf_counter() - t0)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    it = 0
    while it < max_iters:
        it += 1
        hp = op.apply(p)
        php = float(p @ hp)
        if php <= 0.0:
            raise NegativeCurvature(
                f"non-positive curvature {php:.3e} at CG iteration {it}",
                best=x,
                iterations=it,
            )
        step = rs / php
        x += step * p
        r -= step * hp
        if np.linalg.norm(r) <= eta * bnorm:
            # guard against recursive-residual drift before accepting
            true_r = rhs - op.apply(x)
            true_norm = float(np.linalg.norm(true_r))
            if true_norm <= eta * bnorm:
                return x, SolveReport(true_norm / bnorm, it, 0.0,
                                      time.perf_counter() - t0)
            r = true_r
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    res = float(np.linalg.norm(rhs - op.apply(x)) / bnorm)
    raise NoConvergence(
        f"CG exceeded {max_iters} iterations (relative residual {res:.3e})",
        residual=res,
        iterations=it,
        best=x,
    )
