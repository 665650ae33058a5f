"""Derivative machinery for equilibrium-constrained least-squares design.

Everything here operates on an :class:`EquilibriumProblem`: the adjoint
gradient, the sensitivity matrix, the Gauss-Newton blocks and their dense
reduced Hessian, the sparse saddle-point assembly whose parameter block
reproduces the dense Gauss-Newton step exactly, the block-substitution
shortcut for objectives without direct parameter dependence, and the
generalized / full-Newton variants built from second-order evaluators.

All functions are pure with respect to the problem snapshot; evaluators must
be re-entrant so distinct (x, p) points can be processed concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CapabilityMissing,
    NonSquareParamJacobian,
    SingularConstraintJacobian,
    SingularMatrix,
)
from .linear_solvers import SparseFactorization, factor_sparse
from .sparse import CscMatrix, stack_kkt_blocks


class EquilibriumProblem:
    """Contract for a design problem with equilibrium constraints c(x, p) = 0.

    There are exactly as many constraints as state variables (n_c == n_x) and
    the constraint Jacobian with respect to the state is assumed nonsingular
    near equilibrium, so p locally determines x.

    Subclasses must provide the constraint side (``constraints``,
    ``constraint_jac_x``, ``constraint_jac_p``) and forward simulation
    (``simulate``).  Problems in nonlinear least-squares form implement
    ``residuals`` / ``weights`` / ``residual_jac_x`` / ``residual_jac_p``;
    the objective and its first derivatives then derive automatically.
    Second-order evaluators are optional capabilities.
    """

    n_x: int
    n_p: int

    @property
    def n_c(self) -> int:
        return self.n_x

    @property
    def name(self) -> str:
        return type(self).__name__

    # forward simulation -------------------------------------------------
    def simulate(self, p: np.ndarray, x_init: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    # constraints ----------------------------------------------------------
    def constraints(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constraint_jac_x(self, x: np.ndarray, p: np.ndarray) -> CscMatrix:
        raise NotImplementedError

    def constraint_jac_p(self, x: np.ndarray, p: np.ndarray) -> CscMatrix:
        raise NotImplementedError

    # least-squares decomposition (optional capability) --------------------
    def residuals(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        raise CapabilityMissing("residuals")

    def weights(self) -> np.ndarray:
        raise CapabilityMissing("weights")

    def residual_jac_x(self, x: np.ndarray, p: np.ndarray) -> CscMatrix:
        raise CapabilityMissing("residual_jac_x")

    def residual_jac_p(self, x: np.ndarray, p: np.ndarray) -> CscMatrix:
        raise CapabilityMissing("residual_jac_p")

    # objective; defaults evaluate the declared least-squares form ---------
    def objective(self, x: np.ndarray, p: np.ndarray) -> float:
        r = self.residuals(x, p)
        return float(0.5 * self.weights() @ (r * r))

    def objective_grad_x(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        wr = self.weights() * self.residuals(x, p)
        return self.residual_jac_x(x, p).to_scipy().T @ wr

    def objective_grad_p(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        wr = self.weights() * self.residuals(x, p)
        return self.residual_jac_p(x, p).to_scipy().T @ wr

    # second-order evaluators (optional capabilities) ----------------------
    def objective_hess_xx(self, x, p) -> CscMatrix:
        raise CapabilityMissing("objective_hess_xx")

    def objective_hess_px(self, x, p) -> CscMatrix:
        """Mixed partial of the objective, shaped n_p x n_x."""
        raise CapabilityMissing("objective_hess_px")

    def objective_hess_pp(self, x, p) -> CscMatrix:
        raise CapabilityMissing("objective_hess_pp")

    def constraint_hess_xx(self, x, p, lam) -> CscMatrix:
        """Contraction sum_k lam_k d2c_k/dx2, shaped n_x x n_x."""
        raise CapabilityMissing("constraint_hess_xx")

    def constraint_hess_px(self, x, p, lam) -> CscMatrix:
        """Contraction sum_k lam_k d2c_k/dp dx, shaped n_p x n_x."""
        raise CapabilityMissing("constraint_hess_px")

    def constraint_hess_pp(self, x, p, lam) -> CscMatrix:
        raise CapabilityMissing("constraint_hess_pp")

    # parameter bounds ------------------------------------------------------
    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Elementwise (lower, upper) parameter bounds, or None."""
        return None


@dataclass
class GnBlocks:
    """The three weighted residual-Jacobian products of the Gauss-Newton Hessian.

    A = sum_i w_i (dr_i/dx)^T (dr_i/dx)   (n_x x n_x, symmetric PSD)
    B = sum_i w_i (dr_i/dp)^T (dr_i/dx)   (n_p x n_x)
    C = sum_i w_i (dr_i/dp)^T (dr_i/dp)   (n_p x n_p, symmetric PSD)

    The generalized variant stores plain objective Hessian blocks instead and
    carries no definiteness guarantee.
    """

    A: CscMatrix
    B: CscMatrix
    C: CscMatrix


@dataclass
class KktSystem:
    """Assembled saddle-point system with its right-hand side and block sizes."""

    matrix: CscMatrix
    rhs: np.ndarray
    n_x: int
    n_p: int
    n_c: int

    def split(self, solution: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split a solution vector into (dx, dp, dlam) blocks."""
        n_x, n_p = self.n_x, self.n_p
        return (
            solution[:n_x],
            solution[n_x:n_x + n_p],
            solution[n_x + n_p:],
        )


def _factor_constraint_jac(dcdx: CscMatrix) -> SparseFactorization:
    try:
        return factor_sparse(dcdx)
    except SingularMatrix as exc:
        raise SingularConstraintJacobian(str(exc), pivot_index=exc.pivot_index) from exc


def sensitivity_matrix(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                       factor: SparseFactorization | None = None) -> np.ndarray:
    """Dense Jacobian S = dx/dp = -(dc/dx)^{-1} dc/dp of the implicit map.

    One sparse factorization plus n_p back-substitutions; used by the dense
    Gauss-Newton path and as a verification oracle.  The production sparse
    path never forms this matrix.
    """
    if factor is None:
        factor = _factor_constraint_jac(prob.constraint_jac_x(x, p))
    dcdp = prob.constraint_jac_p(x, p).to_dense()
    return -factor.solve(dcdp)


def adjoint_multipliers(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                        factor: SparseFactorization | None = None) -> np.ndarray:
    """Adjoint variables lam = -(dc/dx)^{-T} (df/dx)^T.

    These satisfy (dc/dx)^T lam + (df/dx)^T = 0 and double as the Lagrange
    multipliers that make the Newton-KKT step coincide with second-order
    sensitivity analysis.
    """
    if factor is None:
        factor = _factor_constraint_jac(prob.constraint_jac_x(x, p))
    return -factor.solve(prob.objective_grad_x(x, p), transpose=True)


def adjoint_gradient(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                     factor: SparseFactorization | None = None) -> np.ndarray:
    """Total gradient df/dp via one transposed solve (adjoint method)."""
    lam = adjoint_multipliers(prob, x, p, factor=factor)
    return prob.objective_grad_p(x, p) + prob.constraint_jac_p(x, p).to_scipy().T @ lam


def _symmetrized(m) -> CscMatrix:
    return CscMatrix.from_scipy((m + m.T) * 0.5)


def gn_blocks(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray) -> GnBlocks:
    """Weighted Gauss-Newton blocks from the least-squares residual Jacobians."""
    import scipy.sparse as sp

    w = sp.diags(prob.weights(), format="csc")
    jx = prob.residual_jac_x(x, p).to_scipy()
    jp = prob.residual_jac_p(x, p).to_scipy()
    wjx = w @ jx
    a = _symmetrized(jx.T @ wjx)
    b = CscMatrix.from_scipy(jp.T @ wjx)
    c = _symmetrized(jp.T @ (w @ jp))
    return GnBlocks(A=a, B=b, C=c)


def ggn_blocks(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray) -> GnBlocks:
    """Generalized Gauss-Newton blocks: plain objective Hessian blocks.

    Drops only second-order sensitivities, so indefiniteness is possible;
    callers pair this with a descent check and diagonal regularization.
    """
    return GnBlocks(
        A=prob.objective_hess_xx(x, p),
        B=prob.objective_hess_px(x, p),
        C=prob.objective_hess_pp(x, p),
    )


def dense_gn_hessian(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                     blocks: GnBlocks | None = None,
                     sens: np.ndarray | None = None) -> np.ndarray:
    """Reduced Gauss-Newton Hessian S^T A S + B S + (B S)^T + C, densely formed."""
    if blocks is None:
        blocks = gn_blocks(prob, x, p)
    if sens is None:
        sens = sensitivity_matrix(prob, x, p)
    bs = blocks.B.to_scipy() @ sens
    h = sens.T @ (blocks.A.to_scipy() @ sens) + bs + bs.T + blocks.C.to_dense()
    return 0.5 * (h + h.T)


def kkt_from_blocks(blocks: GnBlocks, dcdx: CscMatrix, dcdp: CscMatrix,
                    grad_p: np.ndarray) -> KktSystem:
    """Stack blocks and constraint Jacobians into the extended sparse system.

    The right-hand side is (0, -grad_p, 0); the parameter block of the
    solution is exactly the Gauss-Newton step of the dense reduced Hessian.
    """
    matrix = stack_kkt_blocks(blocks.A, blocks.B, blocks.C, dcdx, dcdp)
    n_x, n_p, n_c = dcdx.cols, dcdp.cols, dcdx.rows
    rhs = np.zeros(2 * n_x + n_p)
    rhs[n_x:n_x + n_p] = -np.asarray(grad_p, dtype=np.float64)
    return KktSystem(matrix=matrix, rhs=rhs, n_x=n_x, n_p=n_p, n_c=n_c)


def assemble_sgn(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                 blocks: GnBlocks) -> KktSystem:
    """Assemble the sparse Gauss-Newton saddle-point system at (x, p)."""
    dcdx = prob.constraint_jac_x(x, p)
    dcdp = prob.constraint_jac_p(x, p)
    factor = _factor_constraint_jac(dcdx)
    grad = adjoint_gradient(prob, x, p, factor=factor)
    return kkt_from_blocks(blocks, dcdx, dcdp, grad)


def solve_block_gn(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                   A: CscMatrix) -> np.ndarray:
    """Block-substitution Gauss-Newton step for objectives with B = C = 0.

    Requires df/dp = 0 and a square invertible dc/dp; then
    dp = (dc/dp)^{-1} (dc/dx) A^{-1} (df/dx)^T, two sparse solves total.
    Matches the saddle-point solution whenever its preconditions hold.
    """
    if prob.n_p != prob.n_c:
        raise NonSquareParamJacobian(
            f"block solve needs n_p == n_c, got n_p={prob.n_p}, n_c={prob.n_c}"
        )
    dy = factor_sparse(A).solve(prob.objective_grad_x(x, p))
    dcdx = prob.constraint_jac_x(x, p)
    rhs = dcdx.to_scipy() @ dy
    return factor_sparse(prob.constraint_jac_p(x, p)).solve(rhs)


def assemble_kkt_newton(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray,
                        lam: np.ndarray) -> KktSystem:
    """Newton-on-KKT-conditions system for the Lagrangian f + lam^T c.

    Blocks are the Lagrangian Hessian (objective Hessian plus the
    lam-contracted constraint second derivatives); the right-hand side is
    minus the Lagrangian gradient and the constraint values.  With adjoint
    multipliers at a feasible point, the state and constraint rows of the
    right-hand side vanish and the parameter step equals the full-Hessian
    sensitivity step.
    """
    import scipy.sparse as sp

    lam = np.asarray(lam, dtype=np.float64)
    a = _symmetrized(
        prob.objective_hess_xx(x, p).to_scipy()
        + prob.constraint_hess_xx(x, p, lam).to_scipy()
    )
    b = CscMatrix.from_scipy(
        prob.objective_hess_px(x, p).to_scipy()
        + prob.constraint_hess_px(x, p, lam).to_scipy()
    )
    c = _symmetrized(
        prob.objective_hess_pp(x, p).to_scipy()
        + prob.constraint_hess_pp(x, p, lam).to_scipy()
    )
    dcdx = prob.constraint_jac_x(x, p)
    dcdp = prob.constraint_jac_p(x, p)
    matrix = stack_kkt_blocks(a, b, c, dcdx, dcdp)
    grad_x_lag = prob.objective_grad_x(x, p) + dcdx.to_scipy().T @ lam
    grad_p_lag = prob.objective_grad_p(x, p) + dcdp.to_scipy().T @ lam
    rhs = -np.concatenate([grad_x_lag, grad_p_lag, prob.constraints(x, p)])
    return KktSystem(matrix=matrix, rhs=rhs, n_x=prob.n_x, n_p=prob.n_p, n_c=prob.n_c)


def dense_full_hessian(prob: EquilibriumProblem, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Exact reduced Hessian d2f/dp2, formed densely (oracle for small problems).

    Adds to the four direct second-derivative sandwich terms the contribution
    of second-order sensitivities, expanded through the adjoint multipliers as
    S^T Mxx S + Mpx S + (Mpx S)^T + Mpp with M** the lam-contracted constraint
    second derivatives.
    """
    factor = _factor_constraint_jac(prob.constraint_jac_x(x, p))
    s = sensitivity_matrix(prob, x, p, factor=factor)
    lam = adjoint_multipliers(prob, x, p, factor=factor)

    fxx = prob.objective_hess_xx(x, p).to_scipy()
    fpx = prob.objective_hess_px(x, p).to_scipy()
    fpp = prob.objective_hess_pp(x, p).to_dense()
    mxx = prob.constraint_hess_xx(x, p, lam).to_scipy()
    mpx = prob.constraint_hess_px(x, p, lam).to_scipy()
    mpp = prob.constraint_hess_pp(x, p, lam).to_dense()

    fpx_s = fpx @ s
    mpx_s = mpx @ s
    h = (
        s.T @ (fxx @ s) + fpx_s + fpx_s.T + fpp
        + s.T @ (mxx @ s) + mpx_s + mpx_s.T + mpp
    )
    return 0.5 * (h + h.T)
