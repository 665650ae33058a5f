"""Small analytic problems used by the verification suite and the tests.

These implement the full problem contract (including second-order evaluators
where noted) with closed-form derivatives, so they can act as oracles for the
step-equivalence checks without any shared numerical path.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ForwardSimFailure
from ..sensitivity import EquilibriumProblem
from ..sparse import CscMatrix


def _csc(m) -> CscMatrix:
    return CscMatrix.from_scipy(sp.csc_matrix(m))


class LinearMapProblem(EquilibriumProblem):
    """c(x, p) = x - M p with least-squares objective 0.5 ||x - x_target||^2.

    The implicit map is x = M p, so the sensitivity matrix equals M exactly
    and Gauss-Newton converges in one step.  Second-order evaluators are
    available (constraints are linear, so all contractions vanish).
    """

    def __init__(self, m: np.ndarray, x_target: np.ndarray):
        self.m = np.asarray(m, dtype=np.float64)
        self.x_target = np.asarray(x_target, dtype=np.float64)
        self.n_x, self.n_p = self.m.shape

    def default_parameters(self) -> np.ndarray:
        return np.zeros(self.n_p)

    def simulate(self, p, x_init=None):
        return self.m @ p

    def constraints(self, x, p):
        return x - self.m @ p

    def constraint_jac_x(self, x, p):
        return CscMatrix.identity(self.n_x)

    def constraint_jac_p(self, x, p):
        return _csc(-self.m)

    def residuals(self, x, p):
        return x - self.x_target

    def weights(self):
        return np.ones(self.n_x)

    def residual_jac_x(self, x, p):
        return CscMatrix.identity(self.n_x)

    def residual_jac_p(self, x, p):
        return CscMatrix.zeros(self.n_x, self.n_p)

    def objective_hess_xx(self, x, p):
        return CscMatrix.identity(self.n_x)

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def objective_hess_pp(self, x, p):
        return CscMatrix.zeros(self.n_p, self.n_p)

    def constraint_hess_xx(self, x, p, lam):
        return CscMatrix.zeros(self.n_x, self.n_x)

    def constraint_hess_px(self, x, p, lam):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def constraint_hess_pp(self, x, p, lam):
        return CscMatrix.zeros(self.n_p, self.n_p)


class CubicRootToy(EquilibriumProblem):
    """Scalar problem c = x^3 - p, f = 0.5 (x - 2)^2, with analytic second order.

    Feasible points require p > 0 so the constraint Jacobian 3 x^2 stays away
    from zero.
    """

    n_x = 1
    n_p = 1

    def simulate(self, p, x_init=None):
        return np.array([np.cbrt(p[0])])

    def constraints(self, x, p):
        return np.array([x[0] ** 3 - p[0]])

    def constraint_jac_x(self, x, p):
        return _csc([[3.0 * x[0] ** 2]])

    def constraint_jac_p(self, x, p):
        return _csc([[-1.0]])

    def residuals(self, x, p):
        return np.array([x[0] - 2.0])

    def weights(self):
        return np.ones(1)

    def residual_jac_x(self, x, p):
        return CscMatrix.identity(1)

    def residual_jac_p(self, x, p):
        return CscMatrix.zeros(1, 1)

    def objective_hess_xx(self, x, p):
        return CscMatrix.identity(1)

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(1, 1)

    def objective_hess_pp(self, x, p):
        return CscMatrix.zeros(1, 1)

    def constraint_hess_xx(self, x, p, lam):
        return _csc([[6.0 * x[0] * lam[0]]])

    def constraint_hess_px(self, x, p, lam):
        return CscMatrix.zeros(1, 1)

    def constraint_hess_pp(self, x, p, lam):
        return CscMatrix.zeros(1, 1)


class QuadraticConstraintToy(EquilibriumProblem):
    """Two-dimensional problem with genuinely quadratic constraints.

    c_k(x, p) = x_k - p_k + 0.5 x^T Q_k x + x^T R_k p + 0.5 p^T S_k p with
    small random symmetric Q_k, S_k and general R_k, and a least-squares
    objective 0.5 ||x - a||^2 + 0.5 beta ||p - b||^2.  All second derivatives
    are analytic, which makes this the reference problem for checking that
    the Newton-KKT step with adjoint multipliers matches the dense reduced
    Hessian step.
    """

    n_x = 2
    n_p = 2

    def __init__(self, seed: int = 0, scale: float = 0.1, beta: float = 0.5):
        rng = np.random.default_rng(seed)
        self.q = []
        self.r = []
        self.s = []
        for _ in range(self.n_x):
            q = rng.standard_normal((2, 2)) * scale
            s = rng.standard_normal((2, 2)) * scale
            self.q.append(0.5 * (q + q.T))
            self.s.append(0.5 * (s + s.T))
            self.r.append(rng.standard_normal((2, 2)) * scale)
        self.a = rng.standard_normal(2)
        self.b = rng.standard_normal(2)
        self.beta = beta

    def simulate(self, p, x_init=None):
        x = p.copy() if x_init is None else x_init.copy()
        for _ in range(100):
            c = self.constraints(x, p)
            if np.linalg.norm(c, np.inf) <= 1e-13:
                return x
            jac = self.constraint_jac_x(x, p).to_dense()
            x = x - np.linalg.solve(jac, c)
        raise ForwardSimFailure("toy Newton solve did not converge")

    def constraints(self, x, p):
        out = x - p
        for k in range(self.n_x):
            out[k] += 0.5 * x @ self.q[k] @ x + x @ self.r[k] @ p + 0.5 * p @ self.s[k] @ p
        return out

    def constraint_jac_x(self, x, p):
        jac = np.eye(2)
        for k in range(self.n_x):
            jac[k] += self.q[k] @ x + self.r[k] @ p
        return _csc(jac)

    def constraint_jac_p(self, x, p):
        jac = -np.eye(2)
        for k in range(self.n_x):
            jac[k] += self.r[k].T @ x + self.s[k] @ p
        return _csc(jac)

    def residuals(self, x, p):
        return np.concatenate([x - self.a, np.sqrt(self.beta) * (p - self.b)])

    def weights(self):
        return np.ones(4)

    def residual_jac_x(self, x, p):
        return _csc(np.vstack([np.eye(2), np.zeros((2, 2))]))

    def residual_jac_p(self, x, p):
        return _csc(np.vstack([np.zeros((2, 2)), np.sqrt(self.beta) * np.eye(2)]))

    def objective_hess_xx(self, x, p):
        return CscMatrix.identity(2)

    def objective_hess_px(self, x, p):
        return CscMatrix.zeros(2, 2)

    def objective_hess_pp(self, x, p):
        return _csc(self.beta * np.eye(2))

    def constraint_hess_xx(self, x, p, lam):
        return _csc(sum(lam[k] * self.q[k] for k in range(self.n_x)))

    def constraint_hess_px(self, x, p, lam):
        # rows are parameters: d2c_k/dp dx = R_k^T
        return _csc(sum(lam[k] * self.r[k].T for k in range(self.n_x)))

    def constraint_hess_pp(self, x, p, lam):
        return _csc(sum(lam[k] * self.s[k] for k in range(self.n_x)))


class RandomLeastSquaresInstance(EquilibriumProblem):
    """Randomly generated linear-constraint least-squares problem.

    Constraints c = Jx x + Jp p - b with a well-conditioned sparse Jx, and
    residuals r = Rx x + Rp p - r0 with positive weights.  Because residuals
    and constraints are linear, the Gauss-Newton blocks are exact objective
    Hessians and every search-direction method applies.
    """

    def __init__(self, jx, jp, b, rx, rp, r0, w):
        self.jx = sp.csc_matrix(jx)
        self.jp = sp.csc_matrix(jp)
        self.b = np.asarray(b, dtype=np.float64)
        self.rx = sp.csc_matrix(rx)
        self.rp = sp.csc_matrix(rp)
        self.r0 = np.asarray(r0, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.n_x = self.jx.shape[0]
        self.n_p = self.jp.shape[1]

    @classmethod
    def make(cls, rng: np.random.Generator, n_x: int, n_p: int,
             density: float = 0.2) -> "RandomLeastSquaresInstance":
        def sparse_random(rows, cols):
            m = sp.random(rows, cols, density=density, random_state=rng,
                          data_rvs=rng.standard_normal, format="csc")
            return m

        jx = sparse_random(n_x, n_x) + 3.0 * sp.identity(n_x, format="csc")
        jp = sparse_random(n_x, n_p)
        n_r = n_x + n_p
        rx = sparse_random(n_r, n_x)
        rp = sparse_random(n_r, n_p)
        # guarantee a positive-definite reduced Hessian via full column rank
        rx = rx + sp.vstack([sp.identity(n_x), sp.csc_matrix((n_p, n_x))], format="csc")
        rp = rp + sp.vstack([sp.csc_matrix((n_x, n_p)), sp.identity(n_p)], format="csc")
        return cls(
            jx, jp, rng.standard_normal(n_x), rx, rp, rng.standard_normal(n_r),
            rng.uniform(0.5, 2.0, n_r),
        )

    def simulate(self, p, x_init=None):
        return sp.linalg.spsolve(self.jx, self.b - self.jp @ p)

    def constraints(self, x, p):
        return self.jx @ x + self.jp @ p - self.b

    def constraint_jac_x(self, x, p):
        return CscMatrix.from_scipy(self.jx)

    def constraint_jac_p(self, x, p):
        return CscMatrix.from_scipy(self.jp)

    def residuals(self, x, p):
        return self.rx @ x + self.rp @ p - self.r0

    def weights(self):
        return self.w

    def residual_jac_x(self, x, p):
        return CscMatrix.from_scipy(self.rx)

    def residual_jac_p(self, x, p):
        return CscMatrix.from_scipy(self.rp)

    def objective_hess_xx(self, x, p):
        w = sp.diags(self.w)
        return CscMatrix.from_scipy(sp.csc_matrix(self.rx.T @ w @ self.rx))

    def objective_hess_px(self, x, p):
        w = sp.diags(self.w)
        return CscMatrix.from_scipy(sp.csc_matrix(self.rp.T @ w @ self.rx))

    def objective_hess_pp(self, x, p):
        w = sp.diags(self.w)
        return CscMatrix.from_scipy(sp.csc_matrix(self.rp.T @ w @ self.rp))

    def constraint_hess_xx(self, x, p, lam):
        return CscMatrix.zeros(self.n_x, self.n_x)

    def constraint_hess_px(self, x, p, lam):
        return CscMatrix.zeros(self.n_p, self.n_x)

    def constraint_hess_pp(self, x, p, lam):
        return CscMatrix.zeros(self.n_p, self.n_p)
