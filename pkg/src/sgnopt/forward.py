"""Forward simulation: static equilibria and time-stepped rollouts.

The per-step update rules double as the equilibrium constraints consumed by
the sensitivity machinery: explicit Euler steps are satisfied to machine
precision by construction, implicit steps to the per-step Newton tolerance.
Spring-network kernels are vectorized over springs so assembly stays cheap
relative to factorization at benchmark sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ForwardSimFailure, NoConvergence, NumericalBlowup
from .linear_solvers import factor_sparse
from .errors import SingularMatrix
from .sparse import CscMatrix, TripletMatrix, csc_from_triplets

_BLOWUP_LIMIT = 1e8


# ---------------------------------------------------------------------------
# spring-network kernels (any spatial dimension, flat dof = vertex*dim + axis)
# ---------------------------------------------------------------------------

def spring_lengths(pos: np.ndarray, springs: np.ndarray) -> np.ndarray:
    d = pos[springs[:, 0]] - pos[springs[:, 1]]
    return np.linalg.norm(d, axis=1)


def spring_energy(pos, springs, stiffness, rest) -> float:
    l = spring_lengths(pos, springs)
    return float(0.5 * stiffness @ (l - rest) ** 2)


def spring_gradient(pos, springs, stiffness, rest) -> np.ndarray:
    """dE/dx as an (n_v, dim) array."""
    d = pos[springs[:, 0]] - pos[springs[:, 1]]
    l = np.linalg.norm(d, axis=1)
    coeff = stiffness * (l - rest) / l
    f = coeff[:, None] * d
    out = np.zeros_like(pos)
    np.add.at(out, springs[:, 0], f)
    np.add.at(out, springs[:, 1], -f)
    return out


def _block_triplets(block_vals, rows_v, cols_v, dim):
    """Scatter (n_s, dim, dim) blocks into flat-dof triplet arrays."""
    n_s = block_vals.shape[0]
    r = (rows_v[:, None, None] * dim + np.arange(dim)[None, :, None])
    c = (cols_v[:, None, None] * dim + np.arange(dim)[None, None, :])
    r = np.broadcast_to(r, (n_s, dim, dim)).ravel()
    c = np.broadcast_to(c, (n_s, dim, dim)).ravel()
    return r, c, block_vals.ravel()


def spring_hessian_triplets(pos, springs, stiffness, rest):
    """d2E/dx2 as triplet arrays over flat dofs."""
    dim = pos.shape[1]
    a, b = springs[:, 0], springs[:, 1]
    d = pos[a] - pos[b]
    l = np.linalg.norm(d, axis=1)
    dhat = d / l[:, None]
    outer = dhat[:, :, None] * dhat[:, None, :]
    eye = np.eye(dim)[None, :, :]
    coef = (l - rest) / l
    blocks = stiffness[:, None, None] * (outer + coef[:, None, None] * (eye - outer))
    rows, cols, vals = [], [], []
    for rv, cv, sign in ((a, a, 1.0), (b, b, 1.0), (a, b, -1.0), (b, a, -1.0)):
        r, c, v = _block_triplets(sign * blocks, rv, cv, dim)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def spring_force_rest_jacobian(pos, springs, stiffness) -> sp.csc_matrix:
    """d(dE/dx)/dL: how the elastic gradient shifts with per-spring rest length."""
    n_v, dim = pos.shape
    n_s = springs.shape[0]
    d = pos[springs[:, 0]] - pos[springs[:, 1]]
    l = np.linalg.norm(d, axis=1)
    dhat = d / l[:, None]
    entries = (-stiffness)[:, None] * dhat              # at vertex a; negated at b
    s_idx = np.repeat(np.arange(n_s), dim)
    rows_a = (springs[:, 0][:, None] * dim + np.arange(dim)[None, :]).ravel()
    rows_b = (springs[:, 1][:, None] * dim + np.arange(dim)[None, :]).ravel()
    rows = np.concatenate([rows_a, rows_b])
    cols = np.concatenate([s_idx, s_idx])
    vals = np.concatenate([entries.ravel(), -entries.ravel()])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n_v * dim, n_s))


def spring_length_jacobian(pos, springs) -> sp.csc_matrix:
    """dL/dx: per-spring length sensitivities to the endpoint positions."""
    n_v, dim = pos.shape
    n_s = springs.shape[0]
    d = pos[springs[:, 0]] - pos[springs[:, 1]]
    l = np.linalg.norm(d, axis=1)
    dhat = d / l[:, None]
    s_idx = np.repeat(np.arange(n_s), dim)
    cols_a = (springs[:, 0][:, None] * dim + np.arange(dim)[None, :]).ravel()
    cols_b = (springs[:, 1][:, None] * dim + np.arange(dim)[None, :]).ravel()
    rows = np.concatenate([s_idx, s_idx])
    cols = np.concatenate([cols_a, cols_b])
    vals = np.concatenate([dhat.ravel(), -dhat.ravel()])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n_s, n_v * dim))


# ---------------------------------------------------------------------------
# static equilibrium
# ---------------------------------------------------------------------------

@dataclass
class StaticEquilibrium:
    """Static force-balance problem: minimize E(x, p) over the free coordinates.

    ``gradient`` returns dE/dx (the force residual c), ``hessian`` the sparse
    stiffness; ``fixed`` lists pinned coordinate indices that never move.
    """

    n: int
    energy: Callable[[np.ndarray, np.ndarray], float]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray, np.ndarray], CscMatrix]
    fixed: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    tol: float = 1e-10
    max_iters: int = 200


def solve_static(prob: StaticEquilibrium, p, x_init: np.ndarray) -> np.ndarray:
    """Newton with energy backtracking; indefinite stiffness gets a diagonal shift.

    Terminates when the free-coordinate force residual satisfies
    ``norm(dE/dx, inf) <= prob.tol``; the energy is non-increasing across
    iterations.  Raises :class:`NoConvergence` past ``prob.max_iters``.
    """
    x = np.asarray(x_init, dtype=np.float64).copy()
    free = np.setdiff1d(np.arange(prob.n), prob.fixed)
    if free.size == 0:
        return x
    for _ in range(prob.max_iters):
        g = prob.gradient(x, p)
        g_free = g[free]
        if np.linalg.norm(g_free, np.inf) <= prob.tol:
            return x
        k_free = prob.hessian(x, p).to_scipy()[free][:, free].tocsc()
        e0 = prob.energy(x, p)
        step = _regularized_newton_step(k_free, g_free)
        accepted = False
        for _ in range(8):  # escalate the shift if the line search stalls
            alpha, x_new = _energy_backtrack(prob, p, x, free, step, g_free, e0)
            if alpha is not None:
                x = x_new
                accepted = True
                break
            step = _regularized_newton_step(k_free, g_free, bias_gradient=True)
        if not accepted:
            raise NoConvergence("static solve: line search failed", residual=float(np.linalg.norm(g_free, np.inf)))
    raise NoConvergence(
        f"static solve: no convergence in {prob.max_iters} iterations",
        residual=float(np.linalg.norm(prob.gradient(x, p)[free], np.inf)),
        iterations=prob.max_iters,
    )


def _regularized_newton_step(k_free, g_free, bias_gradient=False):
    n = k_free.shape[0]
    tau = 0.0
    tau0 = 1e-6 * abs(k_free.diagonal().sum()) / max(n, 1) + 1e-12
    if bias_gradient:
        tau = tau0 * 1e6
    for _ in range(60):
        try:
            m = k_free if tau == 0.0 else (k_free + tau * sp.identity(n, format="csc")).tocsc()
            d = factor_sparse(CscMatrix.from_scipy(m)).solve(-g_free)
            if g_free @ d < 0 and np.all(np.isfinite(d)):
                return d
        except SingularMatrix:
            pass
        tau = tau0 if tau == 0.0 else tau * 10.0
    return -g_free  # steepest descent as the final fallback


def _energy_backtrack(prob, p, x, free, step, g_free, e0,
                      c1=1e-4, factor=0.5, max_backtracks=60):
    slope = float(g_free @ step)
    # near the minimum the predicted decrease drops below the float resolution
    # of the energy; the slack keeps full Newton steps acceptable there
    slack = 4e-15 * abs(e0)
    alpha = 1.0
    for _ in range(max_backtracks):
        x_try = x.copy()
        x_try[free] += alpha * step
        e_try = prob.energy(x_try, p)
        if np.isfinite(e_try) and e_try <= e0 + c1 * alpha * slope + slack:
            return alpha, x_try
        alpha *= factor
    return None, None


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------

@dataclass
class Rollout:
    """Trajectory produced by a time integrator.

    ``states`` holds x^{t_1} .. x^{t_N} (the initial state is ``x0``);
    ``controls`` holds the per-step control vectors p^{t_1} .. p^{t_N}.
    """

    kind: str
    dyn: object
    x0: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    h: float
    v0: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    def states_flat(self) -> np.ndarray:
        return self.states.ravel()

    def controls_flat(self) -> np.ndarray:
        return self.controls.ravel()


def rollout_explicit(dyn, x0: np.ndarray, controls: np.ndarray, h: float, n_steps: int) -> Rollout:
    """Explicit Euler: x^{t_i} = x^{t_{i-1}} + h * xdot(x^{t_{i-1}}, p^{t_i})."""
    controls = np.asarray(controls, dtype=np.float64).reshape(n_steps, -1)
    x = np.asarray(x0, dtype=np.float64).copy()
    states = np.empty((n_steps, x.size))
    for i in range(n_steps):
        x = x + h * dyn.velocity(x, controls[i])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _BLOWUP_LIMIT:
            raise NumericalBlowup(f"explicit rollout diverged at step {i + 1}", step=i + 1)
        states[i] = x
    return Rollout("explicit", dyn, np.asarray(x0, dtype=np.float64), states, controls, h)


def explicit_stacked_constraints(dyn, x0, states_flat, controls_flat, h):
    """Stacked step constraints and Jacobians at arbitrary states/controls.

    The state Jacobian is block lower-bidiagonal: identity diagonal blocks and
    -(I + h dxdot/dx) below.
    """
    d = x0.size
    xs = np.asarray(states_flat, dtype=np.float64).reshape(-1, d)
    n = xs.shape[0]
    us = np.asarray(controls_flat, dtype=np.float64).reshape(n, -1)
    m = us.shape[1]
    prev = np.vstack([x0, xs[:-1]])

    c = np.empty((n, d))
    jx_rows, jx_cols, jx_vals = [], [], []
    jp_rows, jp_cols, jp_vals = [], [], []
    eye = np.eye(d)
    for i in range(n):
        c[i] = xs[i] - prev[i] - h * dyn.velocity(prev[i], us[i])
        di = np.arange(d) + i * d
        jx_rows.append(np.repeat(di, 1))
        jx_cols.append(di)
        jx_vals.append(np.ones(d))
        if i > 0:
            sub = -(eye + h * dyn.velocity_jac_x(prev[i], us[i]))
            r, cc = np.meshgrid(di, di - d, indexing="ij")
            jx_rows.append(r.ravel())
            jx_cols.append(cc.ravel())
            jx_vals.append(sub.ravel())
        ju = -h * dyn.velocity_jac_u(prev[i], us[i])
        r, cc = np.meshgrid(di, np.arange(m) + i * m, indexing="ij")
        jp_rows.append(r.ravel())
        jp_cols.append(cc.ravel())
        jp_vals.append(ju.ravel())

    n_x, n_p = n * d, n * m
    dcdx = csc_from_triplets(TripletMatrix(
        n_x, n_x, np.concatenate(jx_rows), np.concatenate(jx_cols), np.concatenate(jx_vals)))
    dcdp = csc_from_triplets(TripletMatrix(
        n_x, n_p, np.concatenate(jp_rows), np.concatenate(jp_cols), np.concatenate(jp_vals)))
    return c.ravel(), dcdx, dcdp


@dataclass
class MassSpringModel:
    """Mass-spring network with optional handle coupling for control.

    Controls, when handles are present, are per-step handle target positions;
    they act through a stiff spring (``k_handle``) plus a damper
    (``c_handle``) on the handle vertices, which keeps one constraint per
    state coordinate.
    """

    positions: np.ndarray          # (n_v, dim) reference layout
    springs: np.ndarray            # (n_s, 2)
    stiffness: np.ndarray          # (n_s,)
    rest_lengths: np.ndarray       # (n_s,)
    masses: np.ndarray             # (n_v,)
    gravity: np.ndarray            # (dim,)
    handles: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    k_handle: float = 1e4
    c_handle: float = 10.0

    def __post_init__(self):
        self.dim = self.positions.shape[1]
        self.n_v = self.positions.shape[0]
        self.n_dof = self.n_v * self.dim
        self.mass_dof = np.repeat(self.masses, self.dim)
        self.gravity_force = np.tile(self.gravity, self.n_v) * self.mass_dof
        hd = (self.handles[:, None] * self.dim + np.arange(self.dim)[None, :]).ravel()
        self.handle_dofs = hd.astype(np.int64)

    @property
    def control_dim(self) -> int:
        return self.handle_dofs.size

    def elastic_gradient(self, x_flat: np.ndarray) -> np.ndarray:
        pos = x_flat.reshape(self.n_v, self.dim)
        g = spring_gradient(pos, self.springs, self.stiffness, self.rest_lengths)
        return g.ravel() - self.gravity_force  # dE/dx with gravity potential

    def elastic_hessian(self, x_flat: np.ndarray) -> sp.csc_matrix:
        pos = x_flat.reshape(self.n_v, self.dim)
        r, c, v = spring_hessian_triplets(pos, self.springs, self.stiffness, self.rest_lengths)
        return sp.csc_matrix((v, (r, c)), shape=(self.n_dof, self.n_dof))


def _implicit_step_residual(model: MassSpringModel, x, x_prev, x_prev2, u, u_prev, h):
    """M (x - 2 x_prev + x_prev2) - h^2 F(x, x_prev, u, u_prev)."""
    inertial = model.mass_dof * (x - 2.0 * x_prev + x_prev2)
    force = -model.elastic_gradient(x)
    if model.control_dim:
        hd = model.handle_dofs
        f_h = model.k_handle * (u - x[hd])
        f_h += (model.c_handle / h) * ((u - u_prev) - (x[hd] - x_prev[hd]))
        force = force.copy()
        force[hd] += f_h
    return inertial - h * h * force


def rollout_implicit(model: MassSpringModel, x0, v0, controls, h: float, n_steps: int,
                     tol: float = 1e-10, max_newton: int = 100) -> Rollout:
    """Implicit Euler via per-step Newton on the incremental potential.

    Each accepted step satisfies the step residual to ``tol`` in the max norm.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    v0 = np.asarray(v0, dtype=np.float64).ravel()
    nc = model.control_dim
    controls = np.asarray(controls, dtype=np.float64).reshape(n_steps, nc)
    u_init = x0[model.handle_dofs] if nc else np.zeros(0)

    states = np.empty((n_steps, x0.size))
    x_prev2 = x0 - h * v0
    x_prev = x0
    u_prev = u_init
    for i in range(n_steps):
        u = controls[i]
        x = _solve_implicit_step(model, x_prev, x_prev2, u, u_prev, h, tol, max_newton, step=i + 1)
        states[i] = x
        x_prev2, x_prev, u_prev = x_prev, x, u
    return Rollout("implicit", model, x0, states, controls, h, v0=v0)


def _solve_implicit_step(model, x_prev, x_prev2, u, u_prev, h, tol, max_newton, step):
    xhat = 2.0 * x_prev - x_prev2
    kappa = model.k_handle + model.c_handle / h
    hd = model.handle_dofs
    if hd.size:
        b_h = (model.k_handle * u + (model.c_handle / h) * (u - u_prev)
               + (model.c_handle / h) * x_prev[hd])

    def energy(x, _p):
        dx = x - xhat
        pos = x.reshape(model.n_v, model.dim)
        e = 0.5 * model.mass_dof @ (dx * dx)
        e += h * h * (spring_energy(pos, model.springs, model.stiffness, model.rest_lengths)
                      - model.gravity_force @ x)
        if hd.size:
            xh = x[hd]
            e += h * h * (0.5 * kappa * xh @ xh - b_h @ xh)
        return e

    def gradient(x, _p):
        g = model.mass_dof * (x - xhat) + h * h * model.elastic_gradient(x)
        if hd.size:
            g[hd] += h * h * (kappa * x[hd] - b_h)
        return g

    def hessian(x, _p):
        k = model.elastic_hessian(x) * (h * h)
        diag = model.mass_dof.copy()
        if hd.size:
            diag = diag.copy()
            diag[hd] += h * h * kappa
        return CscMatrix.from_scipy(k + sp.diags(diag, format="csc"))

    se = StaticEquilibrium(n=model.n_dof, energy=energy, gradient=gradient,
                           hessian=hessian, tol=tol, max_iters=max_newton)
    try:
        # warm start at the inertial prediction, not the previous state
        return solve_static(se, None, xhat)
    except NoConvergence as exc:
        raise ForwardSimFailure(f"implicit step {step} did not converge: {exc}") from exc


def implicit_stacked_constraints(model: MassSpringModel, x0, v0, states_flat,
                                 controls_flat, h):
    """Stacked implicit-Euler residuals and Jacobians at arbitrary (x, p).

    Backward-difference velocities couple three consecutive state blocks, so
    the state Jacobian is block lower-tridiagonal; the diagonal blocks are the
    per-step Newton matrices and hence nonsingular.
    """
    nd = model.n_dof
    nc = model.control_dim
    xs = np.asarray(states_flat, dtype=np.float64).reshape(-1, nd)
    n = xs.shape[0]
    us = np.asarray(controls_flat, dtype=np.float64).reshape(n, nc)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    v0 = np.asarray(v0, dtype=np.float64).ravel()
    u_init = x0[model.handle_dofs] if nc else np.zeros(0)

    hd = model.handle_dofs
    kappa = model.k_handle + model.c_handle / h
    c_out = np.empty((n, nd))
    rows, cols, vals = [], [], []
    prow, pcol, pval = [], [], []

    def add_diag(i, j, diag_vals):
        rows.append(np.arange(nd) + i * nd)
        cols.append(np.arange(nd) + j * nd)
        vals.append(diag_vals)

    for i in range(n):
        x = xs[i]
        x_prev = xs[i - 1] if i >= 1 else x0
        x_prev2 = xs[i - 2] if i >= 2 else (x0 if i == 1 else x0 - h * v0)
        u = us[i]
        u_prev = us[i - 1] if i >= 1 else u_init
        c_out[i] = _implicit_step_residual(model, x, x_prev, x_prev2, u, u_prev, h)

        # d c_i / d x_i = M + h^2 K(x_i) (+ handle coupling)
        kr, kc, kv = spring_hessian_triplets(
            x.reshape(model.n_v, model.dim), model.springs, model.stiffness,
            model.rest_lengths)
        rows.append(kr + i * nd)
        cols.append(kc + i * nd)
        vals.append(kv * h * h)
        diag = model.mass_dof.copy()
        if hd.size:
            diag[hd] += h * h * kappa
        add_diag(i, i, diag)

        if i >= 1:  # d c_i / d x_{i-1} = -2M (- handle damping)
            diag_prev = -2.0 * model.mass_dof
            if hd.size:
                diag_prev = diag_prev.copy()
                diag_prev[hd] -= h * model.c_handle
            add_diag(i, i - 1, diag_prev)
        if i >= 2:  # d c_i / d x_{i-2} = M
            add_diag(i, i - 2, model.mass_dof.copy())

        if nc:
            prow.append(hd + i * nd)
            pcol.append(np.arange(nc) + i * nc)
            pval.append(np.full(nc, -h * h * kappa))
            if i >= 1:  # damping pulls in the previous controls
                prow.append(hd + i * nd)
                pcol.append(np.arange(nc) + (i - 1) * nc)
                pval.append(np.full(nc, h * model.c_handle))

    n_x, n_p = n * nd, n * nc
    dcdx = csc_from_triplets(TripletMatrix(
        n_x, n_x, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)))
    if prow:
        dcdp = csc_from_triplets(TripletMatrix(
            n_x, n_p, np.concatenate(prow), np.concatenate(pcol), np.concatenate(pval)))
    else:
        dcdp = CscMatrix.zeros(n_x, n_p)
    return c_out.ravel(), dcdx, dcdp


def stacked_constraints(rollout: Rollout):
    """Stacked constraints and Jacobians evaluated at the rollout's trajectory."""
    if rollout.kind == "explicit":
        return explicit_stacked_constraints(
            rollout.dyn, rollout.x0, rollout.states_flat(), rollout.controls_flat(),
            rollout.h)
    if rollout.kind == "implicit":
        return implicit_stacked_constraints(
            rollout.dyn, rollout.x0, rollout.v0, rollout.states_flat(),
            rollout.controls_flat(), rollout.h)
    raise ValueError(f"unknown rollout kind {rollout.kind!r}")


def export_rollout_csv(rollout: Rollout, path) -> None:
    """Write (step, state components) rows for external plotting."""
    with open(path, "w", encoding="ascii") as fh:
        dim = rollout.x0.size
        fh.write("step," + ",".join(f"x{i}" for i in range(dim)) + "\n")
        fh.write("0," + ",".join(f"{v:.17g}" for v in rollout.x0) + "\n")
        for i in range(rollout.steps):
            fh.write(f"{i + 1}," + ",".join(f"{v:.17g}" for v in rollout.states[i]) + "\n")
