"""Trajectory control of a kinematic car via direct shooting.

State per step is (px, py, theta); controls per step are forward speed v and
steering angle s, integrated with explicit Euler at 30 steps per second.  The
objective targets the final position and heading and smooths control changes
over time; speed and steering bounds are enforced by filtering the search
direction.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..forward import explicit_stacked_constraints, rollout_explicit
from ..sensitivity import EquilibriumProblem
from ..sparse import CscMatrix


class CarDynamics:
    """First-order kinematics xdot = (v cos th, v sin th, v tan s)."""

    state_dim = 3
    control_dim = 2

    def velocity(self, x, u):
        v, s = u
        th = x[2]
        return np.array([v * np.cos(th), v * np.sin(th), v * np.tan(s)])

    def velocity_jac_x(self, x, u):
        v, _s = u
        th = x[2]
        jac = np.zeros((3, 3))
        jac[0, 2] = -v * np.sin(th)
        jac[1, 2] = v * np.cos(th)
        return jac

    def velocity_jac_u(self, x, u):
        v, s = u
        th = x[2]
        sec2 = 1.0 / np.cos(s) ** 2
        return np.array([
            [np.cos(th), 0.0],
            [np.sin(th), 0.0],
            [np.tan(s), v * sec2],
        ])


class CarControlProblem(EquilibriumProblem):
    """See module docstring; build with :func:`build_car`."""

    def __init__(self, n_steps: int, h: float = 1.0 / 30.0,
                 start=(0.0, 0.0, 0.0), target_position=(1.0, 1.0),
                 target_heading: float = 0.0,
                 w_pos: float = 1.0, w_dir: float = 0.1, w_smooth: float = 1e-2,
                 v_max: float = 2.0, s_max: float = 0.5):
        if n_steps < 1:
            raise ValueError("need at least one time step")
        self.n_steps = n_steps
        self.h = float(h)
        self.dyn = CarDynamics()
        self.x0 = np.asarray(start, dtype=np.float64)
        self.target_position = np.asarray(target_position, dtype=np.float64)
        self.target_dir = np.array([np.cos(target_heading), np.sin(target_heading)])
        self.w_pos, self.w_dir, self.w_smooth = float(w_pos), float(w_dir), float(w_smooth)
        self.v_max, self.s_max = float(v_max), float(s_max)
        self.n_x = 3 * n_steps
        self.n_p = 2 * n_steps

    def default_parameters(self) -> np.ndarray:
        # nonzero cruise speed; at v = 0 the steering sensitivities vanish and
        # the reduced Hessian is singular
        return np.tile([0.5, 0.0], self.n_steps)

    def bounds(self):
        lo = -np.tile([self.v_max, self.s_max], self.n_steps)
        return lo, -lo

    def simulate(self, p, x_init=None):
        roll = rollout_explicit(self.dyn, self.x0, p, self.h, self.n_steps)
        return roll.states_flat()

    def constraints(self, x, p):
        c, _, _ = explicit_stacked_constraints(self.dyn, self.x0, x, p, self.h)
        return c

    def constraint_jac_x(self, x, p):
        _, dcdx, _ = explicit_stacked_constraints(self.dyn, self.x0, x, p, self.h)
        return dcdx

    def constraint_jac_p(self, x, p):
        _, _, dcdp = explicit_stacked_constraints(self.dyn, self.x0, x, p, self.h)
        return dcdp

    # -- residuals: final-state targets plus control smoothness -------------
    def _final_state(self, x):
        return x[-3], x[-2], x[-1]

    def residuals(self, x, p):
        px, py, th = self._final_state(x)
        n = self.n_steps
        smooth = (p.reshape(n, 2)[1:] - p.reshape(n, 2)[:-1]).ravel()
        return np.concatenate([
            [px - self.target_position[0], py - self.target_position[1]],
            [np.cos(th) - self.target_dir[0], np.sin(th) - self.target_dir[1]],
            smooth,
        ])

    def weights(self):
        n = self.n_steps
        return np.concatenate([
            np.full(2, self.w_pos),
            np.full(2, self.w_dir),
            np.full(2 * (n - 1), self.w_smooth),
        ])

    def residual_jac_x(self, x, p):
        _, _, th = self._final_state(x)
        n_r = 4 + 2 * (self.n_steps - 1)
        rows = np.array([0, 1, 2, 3])
        cols = np.array([self.n_x - 3, self.n_x - 2, self.n_x - 1, self.n_x - 1])
        vals = np.array([1.0, 1.0, -np.sin(th), np.cos(th)])
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, cols)), shape=(n_r, self.n_x)))

    def residual_jac_p(self, x, p):
        n = self.n_steps
        n_r = 4 + 2 * (n - 1)
        if n == 1:
            return CscMatrix.zeros(n_r, self.n_p)
        k = np.arange(2 * (n - 1))
        rows = np.concatenate([4 + k, 4 + k])
        cols = np.concatenate([k + 2, k])       # +p^{i+1}_ch - p^i_ch
        vals = np.concatenate([np.ones(2 * (n - 1)), -np.ones(2 * (n - 1))])
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, cols)), shape=(n_r, self.n_p)))

    # -- second-order data ---------------------------------------------------
    def objective_hess_xx(self, x, p):
        _, _, th = self._final_state(x)
        rx = np.cos(th) - self.target_dir[0]
        ry = np.sin(th) - self.target_dir[1]
        dtt = self.w_dir * (1.0 - rx * np.cos(th) - ry * np.sin(th))
        rows = [self.n_x - 3, self.n_x - 2, self.n_x - 1]
        vals = [self.w_pos, self.w_pos, dtt]
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, rows)), shape=(self.n_x, self.n_x)))

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def objective_hess_pp(self, x, p):
        n = self.n_steps
        if n == 1:
            return CscMatrix.zeros(self.n_p, self.n_p)
        k = np.arange(2 * (n - 1))
        rows = np.concatenate([k, k + 2, k, k + 2])
        cols = np.concatenate([k, k + 2, k + 2, k])
        vals = self.w_smooth * np.concatenate(
            [np.ones(2 * (n - 1)), np.ones(2 * (n - 1)),
             -np.ones(2 * (n - 1)), -np.ones(2 * (n - 1))])
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, cols)), shape=(self.n_p, self.n_p)))

    def constraint_hess_xx(self, x, p, lam):
        # c^i = x^i - x^{i-1} - h xdot(x^{i-1}, u^i); only theta-theta entries
        n = self.n_steps
        xs = x.reshape(n, 3)
        us = p.reshape(n, 2)
        lm = lam.reshape(n, 3)
        rows, vals = [], []
        for i in range(1, n):   # step i+1 in 1-based terms depends on x^i
            th = xs[i - 1][2]
            v = us[i][0]
            l1, l2, _ = lm[i]
            d2 = -self.h * (l1 * (-v * np.cos(th)) + l2 * (-v * np.sin(th)))
            rows.append(3 * (i - 1) + 2)
            vals.append(d2)
        if not rows:
            return CscMatrix.zeros(self.n_x, self.n_x)
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, rows)), shape=(self.n_x, self.n_x)))

    def constraint_hess_px(self, x, p, lam):
        n = self.n_steps
        xs = x.reshape(n, 3)
        us = p.reshape(n, 2)
        lm = lam.reshape(n, 3)
        rows, cols, vals = [], [], []
        for i in range(1, n):
            th = xs[i - 1][2]
            l1, l2, _ = lm[i]
            # d2 xdot / dv dtheta contracted: (-sin, cos, 0)
            val = -self.h * (l1 * (-np.sin(th)) + l2 * np.cos(th))
            rows.append(2 * i)            # v component of step i+1 controls
            cols.append(3 * (i - 1) + 2)  # theta of state i
            vals.append(val)
        if not rows:
            return CscMatrix.zeros(self.n_p, self.n_x)
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, cols)), shape=(self.n_p, self.n_x)))

    def constraint_hess_pp(self, x, p, lam):
        n = self.n_steps
        us = p.reshape(n, 2)
        lm = lam.reshape(n, 3)
        rows, cols, vals = [], [], []
        for i in range(n):
            v, s = us[i]
            l3 = lm[i][2]
            sec2 = 1.0 / np.cos(s) ** 2
            dvs = -self.h * l3 * sec2
            dss = -self.h * l3 * 2.0 * v * sec2 * np.tan(s)
            iv, isl = 2 * i, 2 * i + 1
            rows += [iv, isl, isl]
            cols += [isl, iv, isl]
            vals += [dvs, dvs, dss]
        return CscMatrix.from_scipy(
            sp.csc_matrix((vals, (rows, cols)), shape=(self.n_p, self.n_p)))


def build_car(n_steps: int, target_position=(1.0, 1.0), target_heading: float = 0.0,
              weights: dict | None = None, bounds: dict | None = None,
              **kwargs) -> CarControlProblem:
    """Construct the direct-shooting car problem (n_x = 3N, n_p = 2N)."""
    weights = weights or {}
    bounds = bounds or {}
    return CarControlProblem(
        n_steps,
        target_position=target_position,
        target_heading=target_heading,
        w_pos=weights.get("position", 1.0),
        w_dir=weights.get("direction", 0.1),
        w_smooth=weights.get("smoothness", 1e-2),
        v_max=bounds.get("v_max", 2.0),
        s_max=bounds.get("s_max", 0.5),
        **kwargs,
    )
