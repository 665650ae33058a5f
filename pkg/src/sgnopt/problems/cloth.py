"""Keyframe control of a hanging cloth patch through two corner handles.

A square mass-spring sheet is simulated with implicit Euler; the controls are
per-step target positions for two corner vertices, coupled to the cloth by a
stiff spring and damper so that each state coordinate keeps exactly one
constraint.  The objective matches keyframe states and regularizes handle
motion and cloth velocity.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..forward import (
    MassSpringModel,
    implicit_stacked_constraints,
    rollout_implicit,
    spring_lengths,
)
from ..sensitivity import EquilibriumProblem
from ..sparse import CscMatrix


def make_cloth_model(v_side: int, spacing: float = 0.25, stiffness: float = 1e3,
                     mass: float = 1.0, k_handle: float = 1e4,
                     c_handle: float = 10.0) -> MassSpringModel:
    """Flat square sheet in the x-y plane with structural and shear springs."""
    if v_side < 2:
        raise ValueError("cloth needs at least 2x2 vertices")
    ix, iy = np.meshgrid(np.arange(v_side), np.arange(v_side), indexing="ij")
    positions = np.column_stack(
        [ix.ravel() * spacing, iy.ravel() * spacing, np.zeros(v_side * v_side)])

    def vid(i, j):
        return i * v_side + j

    springs = []
    for i in range(v_side):
        for j in range(v_side):
            if i + 1 < v_side:
                springs.append((vid(i, j), vid(i + 1, j)))
            if j + 1 < v_side:
                springs.append((vid(i, j), vid(i, j + 1)))
            if i + 1 < v_side and j + 1 < v_side:
                springs.append((vid(i, j), vid(i + 1, j + 1)))
                springs.append((vid(i + 1, j), vid(i, j + 1)))
    springs = np.array(springs, dtype=np.int64)
    rest = spring_lengths(positions, springs)
    handles = np.array([vid(0, 0), vid(v_side - 1, 0)], dtype=np.int64)
    return MassSpringModel(
        positions=positions,
        springs=springs,
        stiffness=np.full(springs.shape[0], stiffness),
        rest_lengths=rest,
        masses=np.full(v_side * v_side, mass),
        gravity=np.array([0.0, 0.0, -9.81]),
        handles=handles,
        k_handle=k_handle,
        c_handle=c_handle,
    )


class ClothControlProblem(EquilibriumProblem):
    """See module docstring; build with :func:`build_cloth`."""

    def __init__(self, model: MassSpringModel, n_steps: int, h: float,
                 keyframes: list[int], keyframe_targets: np.ndarray,
                 w_handle_pos: float = 1e-2, w_handle_vel: float = 1e-2,
                 w_cloth_vel: float = 1e-2):
        self.model = model
        self.n_steps = n_steps
        self.h = float(h)
        self.keyframes = [int(j) for j in keyframes]
        for j in self.keyframes:
            if not 1 <= j <= n_steps:
                raise ValueError(f"keyframe index {j} out of range 1..{n_steps}")
        self.x0 = model.positions.ravel().copy()
        self.v0 = np.zeros_like(self.x0)
        self.nd = model.n_dof
        self.nc_step = model.control_dim
        self.n_x = self.nd * n_steps
        self.n_p = self.nc_step * n_steps
        self.keyframe_targets = np.asarray(keyframe_targets, dtype=np.float64).reshape(
            len(self.keyframes), self.nd)
        self.p_init = self.x0[model.handle_dofs]
        self.w_hp, self.w_hv, self.w_cv = (
            float(w_handle_pos), float(w_handle_vel), float(w_cloth_vel))

    def default_parameters(self) -> np.ndarray:
        return np.tile(self.p_init, self.n_steps)

    def simulate(self, p, x_init=None):
        roll = rollout_implicit(self.model, self.x0, self.v0, p, self.h, self.n_steps)
        return roll.states_flat()

    def constraints(self, x, p):
        c, _, _ = implicit_stacked_constraints(
            self.model, self.x0, self.v0, x, p, self.h)
        return c

    def constraint_jac_x(self, x, p):
        _, dcdx, _ = implicit_stacked_constraints(
            self.model, self.x0, self.v0, x, p, self.h)
        return dcdx

    def constraint_jac_p(self, x, p):
        _, _, dcdp = implicit_stacked_constraints(
            self.model, self.x0, self.v0, x, p, self.h)
        return dcdp

    # -- residuals -----------------------------------------------------------
    def residuals(self, x, p):
        nd, n = self.nd, self.n_steps
        xs = x.reshape(n, nd)
        ps = p.reshape(n, self.nc_step)
        parts = [xs[j - 1] - self.keyframe_targets[k]
                 for k, j in enumerate(self.keyframes)]
        parts.append((ps - self.p_init).ravel())
        prev_p = np.vstack([self.p_init, ps[:-1]])
        parts.append((ps - prev_p).ravel())
        prev_x = np.vstack([self.x0, xs[:-1]])
        parts.append((xs - prev_x).ravel())
        return np.concatenate(parts)

    def weights(self):
        return np.concatenate([
            np.ones(self.nd * len(self.keyframes)),
            np.full(self.n_p, self.w_hp),
            np.full(self.n_p, self.w_hv),
            np.full(self.n_x, self.w_cv),
        ])

    def _jac_shapes(self):
        n_kf = self.nd * len(self.keyframes)
        return n_kf, n_kf + 2 * self.n_p + self.n_x

    def residual_jac_x(self, x, p):
        nd, n = self.nd, self.n_steps
        n_kf, n_r = self._jac_shapes()
        rows, cols, vals = [], [], []
        for k, j in enumerate(self.keyframes):
            r = np.arange(nd) + k * nd
            rows.append(r)
            cols.append(np.arange(nd) + (j - 1) * nd)
            vals.append(np.ones(nd))
        base = n_kf + 2 * self.n_p    # cloth-velocity rows
        idx = np.arange(self.n_x)
        rows.append(base + idx)
        cols.append(idx)
        vals.append(np.ones(self.n_x))
        sub = idx[nd:]                # minus previous state block
        rows.append(base + sub)
        cols.append(sub - nd)
        vals.append(-np.ones(sub.size))
        m = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_r, self.n_x))
        return CscMatrix.from_scipy(m)

    def residual_jac_p(self, x, p):
        n_kf, n_r = self._jac_shapes()
        rows, cols, vals = [], [], []
        idx = np.arange(self.n_p)
        rows.append(n_kf + idx)            # handle-position deviation
        cols.append(idx)
        vals.append(np.ones(self.n_p))
        base = n_kf + self.n_p             # handle-velocity rows
        rows.append(base + idx)
        cols.append(idx)
        vals.append(np.ones(self.n_p))
        sub = idx[self.nc_step:]
        rows.append(base + sub)
        cols.append(sub - self.nc_step)
        vals.append(-np.ones(sub.size))
        m = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_r, self.n_p))
        return CscMatrix.from_scipy(m)

    # residuals are linear, so the GN blocks are the exact objective Hessian
    def objective_hess_xx(self, x, p):
        jx = self.residual_jac_x(x, p).to_scipy()
        w = sp.diags(self.weights())
        return CscMatrix.from_scipy(sp.csc_matrix(jx.T @ w @ jx))

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def objective_hess_pp(self, x, p):
        jp = self.residual_jac_p(x, p).to_scipy()
        w = sp.diags(self.weights())
        return CscMatrix.from_scipy(sp.csc_matrix(jp.T @ w @ jp))


def build_cloth(v_side: int, n_steps: int, keyframes: list[int] | None = None,
                weights: dict | None = None, total_time: float = 1.66,
                target_offset=(0.3, 0.0, 0.1), **model_kwargs) -> ClothControlProblem:
    """Construct the cloth problem; keyframe targets are offset baseline states.

    The baseline rollout holds the handles at their initial positions; the
    requested keyframe states are shifted by ``target_offset`` so the
    optimizer has to move the handles.
    """
    if n_steps < 2:
        raise ValueError("need at least two time steps")
    keyframes = keyframes or [n_steps]
    weights = weights or {}
    model = make_cloth_model(v_side, **model_kwargs)
    h = total_time / n_steps
    for j in keyframes:
        if not 1 <= int(j) <= n_steps:
            raise ValueError(f"keyframe index {j} out of range 1..{n_steps}")
    p_hold = np.tile(model.positions.ravel()[model.handle_dofs], n_steps)
    baseline = rollout_implicit(model, model.positions.ravel(),
                                np.zeros(model.n_dof), p_hold, h, n_steps)
    offset = np.tile(np.asarray(target_offset, dtype=np.float64), model.n_v)
    targets = np.vstack([baseline.states[j - 1] + offset for j in keyframes])
    return ClothControlProblem(
        model, n_steps, h, keyframes, targets,
        w_handle_pos=weights.get("handle_position", 1e-2),
        w_handle_vel=weights.get("handle_velocity", 1e-2),
        w_cloth_vel=weights.get("cloth_velocity", 1e-2),
    )
