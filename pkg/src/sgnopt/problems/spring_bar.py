"""Gravity-compensation design on a clamped 2D mass-spring lattice.

The bar hangs under gravity from its clamped left edge; the design parameters
are the rest positions of every free vertex (so n_p == n_x) and the goal is an
equilibrium state matching a target shape.  An optional least-squares
regularizer penalizes per-spring rest-length changes; with it disabled the
objective has no direct parameter dependence, which makes the block-solve
variant applicable.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ForwardSimFailure, NoConvergence
from ..forward import (
    StaticEquilibrium,
    solve_static,
    spring_energy,
    spring_force_rest_jacobian,
    spring_gradient,
    spring_hessian_triplets,
    spring_length_jacobian,
    spring_lengths,
)
from ..sensitivity import EquilibriumProblem
from ..sparse import CscMatrix


class SpringBarProblem(EquilibriumProblem):
    """See module docstring; build with :func:`build_spring_bar`."""

    def __init__(self, n_w: int, n_h: int, w_reg: float = 0.0,
                 stiffness: float = 2.0, mass: float = 2e-5,
                 spacing: float = 0.25, gravity: float = 9.81,
                 x_target: np.ndarray | None = None):
        if n_w < 2 or n_h < 2:
            raise ValueError("grid must be at least 2x2")
        self.n_w, self.n_h = n_w, n_h
        self.w_reg = float(w_reg)
        self.k = float(stiffness)
        self.mass = float(mass)
        self.gravity = float(gravity)

        ix, iy = np.meshgrid(np.arange(n_w), np.arange(n_h), indexing="ij")
        self.ref_positions = np.column_stack([ix.ravel() * spacing, iy.ravel() * spacing])
        self.n_v = n_w * n_h

        def vid(i, j):
            return i * n_h + j

        springs = []
        for i in range(n_w):
            for j in range(n_h):
                if i + 1 < n_w:
                    springs.append((vid(i, j), vid(i + 1, j)))
                if j + 1 < n_h:
                    springs.append((vid(i, j), vid(i, j + 1)))
                if i + 1 < n_w and j + 1 < n_h:
                    springs.append((vid(i, j), vid(i + 1, j + 1)))
                    springs.append((vid(i + 1, j), vid(i, j + 1)))
        self.springs = np.array(springs, dtype=np.int64)
        self.n_s = self.springs.shape[0]
        self.stiffness = np.full(self.n_s, self.k)
        self.rest_lengths0 = spring_lengths(self.ref_positions, self.springs)

        self.fixed_verts = np.arange(n_h)          # the i == 0 column
        self.free_verts = np.arange(n_h, self.n_v)
        self.n_x = 2 * self.free_verts.size
        self.n_p = self.n_x
        self.free_dofs = np.column_stack(
            [2 * self.free_verts, 2 * self.free_verts + 1]).ravel()

        self.grav_grad = np.zeros(2 * self.n_v)
        self.grav_grad[1::2] = self.mass * self.gravity   # dE/dy of m*g*y

        if x_target is None:
            x_target = self.ref_positions[self.free_verts].ravel()
        self.x_target = np.asarray(x_target, dtype=np.float64)
        self._x_warm = None

    # -- embedding helpers -------------------------------------------------
    def full_positions(self, x: np.ndarray) -> np.ndarray:
        pos = self.ref_positions.copy()
        pos[self.free_verts] = x.reshape(-1, 2)
        return pos

    def rest_positions(self, p: np.ndarray) -> np.ndarray:
        pos = self.ref_positions.copy()
        pos[self.free_verts] = p.reshape(-1, 2)
        return pos

    def rest_lengths(self, p: np.ndarray) -> np.ndarray:
        return spring_lengths(self.rest_positions(p), self.springs)

    def default_parameters(self) -> np.ndarray:
        return self.ref_positions[self.free_verts].ravel().copy()

    # -- forward simulation -------------------------------------------------
    def simulate(self, p, x_init=None):
        rest = self.rest_lengths(p)

        def energy(xf, _p):
            pos = xf.reshape(-1, 2)
            return (spring_energy(pos, self.springs, self.stiffness, rest)
                    + self.grav_grad @ xf)

        def gradient(xf, _p):
            pos = xf.reshape(-1, 2)
            g = spring_gradient(pos, self.springs, self.stiffness, rest).ravel()
            return g + self.grav_grad

        def hessian(xf, _p):
            pos = xf.reshape(-1, 2)
            r, c, v = spring_hessian_triplets(pos, self.springs, self.stiffness, rest)
            return CscMatrix.from_scipy(
                sp.csc_matrix((v, (r, c)), shape=(2 * self.n_v, 2 * self.n_v)))

        fixed_dofs = np.column_stack(
            [2 * self.fixed_verts, 2 * self.fixed_verts + 1]).ravel()
        se = StaticEquilibrium(n=2 * self.n_v, energy=energy, gradient=gradient,
                               hessian=hessian, fixed=fixed_dofs)
        if x_init is not None:
            start = self.full_positions(x_init).ravel()
        elif self._x_warm is not None:
            start = self.full_positions(self._x_warm).ravel()
        else:
            start = self.ref_positions.ravel()
        try:
            xf = solve_static(se, None, start)
        except NoConvergence as exc:
            raise ForwardSimFailure(f"spring-bar statics failed: {exc}") from exc
        x = xf[self.free_dofs]
        self._x_warm = x.copy()
        return x

    # -- constraints: residual force on the free coordinates ----------------
    def constraints(self, x, p):
        pos = self.full_positions(x)
        rest = self.rest_lengths(p)
        g = spring_gradient(pos, self.springs, self.stiffness, rest).ravel()
        return (g + self.grav_grad)[self.free_dofs]

    def constraint_jac_x(self, x, p):
        pos = self.full_positions(x)
        rest = self.rest_lengths(p)
        r, c, v = spring_hessian_triplets(pos, self.springs, self.stiffness, rest)
        h = sp.csc_matrix((v, (r, c)), shape=(2 * self.n_v, 2 * self.n_v))
        return CscMatrix.from_scipy(h[self.free_dofs][:, self.free_dofs])

    def constraint_jac_p(self, x, p):
        pos = self.full_positions(x)
        dgdl = spring_force_rest_jacobian(pos, self.springs, self.stiffness)
        dldp = spring_length_jacobian(self.rest_positions(p), self.springs)
        m = sp.csc_matrix(dgdl @ dldp)
        return CscMatrix.from_scipy(m[self.free_dofs][:, self.free_dofs])

    # -- least-squares objective --------------------------------------------
    def residuals(self, x, p):
        out = [x - self.x_target]
        if self.w_reg > 0.0:
            out.append(self.rest_lengths(p) - self.rest_lengths0)
        return np.concatenate(out)

    def weights(self):
        w = [np.full(self.n_x, 1.0 / self.n_x)]
        if self.w_reg > 0.0:
            w.append(np.full(self.n_s, self.w_reg))
        return np.concatenate(w)

    def residual_jac_x(self, x, p):
        eye = sp.identity(self.n_x, format="csc")
        if self.w_reg > 0.0:
            return CscMatrix.from_scipy(
                sp.vstack([eye, sp.csc_matrix((self.n_s, self.n_x))], format="csc"))
        return CscMatrix.from_scipy(eye)

    def residual_jac_p(self, x, p):
        if self.w_reg > 0.0:
            dldp = spring_length_jacobian(self.rest_positions(p), self.springs)
            dldp = sp.csc_matrix(dldp[:, self.free_dofs])
            return CscMatrix.from_scipy(
                sp.vstack([sp.csc_matrix((self.n_x, self.n_p)), dldp], format="csc"))
        return CscMatrix.zeros(self.n_x, self.n_p)

    # -- second-order objective data (constraints stay first-order only) ----
    def objective_hess_xx(self, x, p):
        return CscMatrix.from_scipy(
            sp.identity(self.n_x, format="csc") * (1.0 / self.n_x))

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def objective_hess_pp(self, x, p):
        if self.w_reg == 0.0:
            return CscMatrix.zeros(self.n_p, self.n_p)
        # exact Hessian of  sum_s w_reg/2 (L_s(p) - L0_s)^2  over rest positions
        rest_pos = self.rest_positions(p)
        r, c, v = spring_hessian_triplets(
            rest_pos, self.springs, np.full(self.n_s, self.w_reg), self.rest_lengths0)
        h = sp.csc_matrix((v, (r, c)), shape=(2 * self.n_v, 2 * self.n_v))
        return CscMatrix.from_scipy(h[self.free_dofs][:, self.free_dofs])


def build_spring_bar(n_w: int, n_h: int, w_reg: float = 0.0, **kwargs) -> SpringBarProblem:
    """Construct the clamped lattice problem with analytic Jacobians."""
    return SpringBarProblem(n_w, n_h, w_reg=w_reg, **kwargs)
