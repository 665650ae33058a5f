"""Outer minimization loops and the search-direction strategy zoo.

Every sensitivity-based method follows the same loop: update the parameters
along a descent direction, recompute the equilibrium state by forward
simulation, and accept the step only if the objective decreases (monotone
backtracking line search).  The directions differ in how the Gauss-Newton
step is computed (sparse saddle-point, dense reduced Hessian, block
substitution, matrix-free CG), or replace it with steepest descent, L-BFGS
(plain or initialized by a sparse Gauss-Newton solve), or regularized
generalized-Gauss-Newton / Newton variants.  SQP instead updates state,
parameters, and multipliers simultaneously under an exact L1 merit function.

One optimizer run is single-threaded and owns its problem instance; separate
runs can proceed concurrently.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ForwardSimFailure,
    InfeasiblePoint,
    MeritLineSearchFailure,
    NegativeCurvature,
    NoConvergence,
    NumericalBlowup,
    SingularMatrix,
)
from .linear_solvers import (
    ReducedOperator,
    SolveReport,
    StabilizationConfig,
    cg_reduced,
    cholesky_dense,
    factor_sparse,
    solve_kkt_stabilized,
)
from .sensitivity import (
    EquilibriumProblem,
    GnBlocks,
    adjoint_gradient,
    adjoint_multipliers,
    assemble_kkt_newton,
    assemble_sgn,
    dense_gn_hessian,
    ggn_blocks,
    gn_blocks,
    kkt_from_blocks,
    sensitivity_matrix,
    solve_block_gn,
)
from .sparse import CscMatrix

METHODS = ("sgn", "dgn", "bgn", "cg_gn", "gd", "lbfgs", "lbfgs_sgn", "ggn",
           "newton", "sqp")

CSV_HEADER = "iter,f,grad_norm,step_len,dir_time_s,fwd_time_s,elapsed_s,lin_rel_residual"


@dataclass
class OptimizerConfig:
    method: str = "sgn"
    max_iterations: int = 100
    gradient_tolerance: float = 1e-5
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 60
    lbfgs_history: int = 10
    cg_eta: float = 1e-3
    stabilization: StabilizationConfig = field(default_factory=StabilizationConfig)
    bound_mode: str = "none"   # none | project | barrier (barrier lives in the problem)

    def __post_init__(self):
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient tolerance must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class SearchDirection:
    """Parameter step with optional state/multiplier blocks and timings."""

    dp: np.ndarray
    dx: np.ndarray | None = None
    dlam: np.ndarray | None = None
    assemble_s: float = 0.0
    factor_s: float = 0.0
    solve_s: float = 0.0
    relative_residual: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def total_s(self) -> float:
        return self.assemble_s + self.factor_s + self.solve_s


@dataclass
class IterationRecord:
    iteration: int
    f: float
    grad_norm: float
    step_length: float
    direction_time: float
    forward_time: float
    elapsed: float
    lin_rel_residual: float

    def csv_row(self) -> str:
        return (f"{self.iteration},{self.f:.17g},{self.grad_norm:.17g},"
                f"{self.step_length:.17g},{self.direction_time:.6g},"
                f"{self.forward_time:.6g},{self.elapsed:.6g},"
                f"{self.lin_rel_residual:.6g}")


@dataclass
class OptimizerRun:
    method: str
    records: list[IterationRecord]
    termination: str
    p: np.ndarray
    x: np.ndarray

    def f_values(self) -> np.ndarray:
        return np.array([r.f for r in self.records])

    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(CSV_HEADER + "\n")
            for rec in self.records:
                fh.write(rec.csv_row() + "\n")


def project_direction_bounds(dp: np.ndarray, p: np.ndarray,
                             lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Zero direction components that push an active bound further out."""
    if np.any(p < lower) or np.any(p > upper):
        raise InfeasiblePoint("parameters violate their declared bounds")
    out = dp.copy()
    out[(p >= upper) & (dp > 0)] = 0.0
    out[(p <= lower) & (dp < 0)] = 0.0
    return out


# ---------------------------------------------------------------------------
# search directions
# ---------------------------------------------------------------------------

def direction_sgn(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Gauss-Newton step through the sparse saddle-point system."""
    t0 = time.perf_counter()
    blocks = gn_blocks(prob, x, p)
    kkt = assemble_sgn(prob, x, p, blocks)
    assemble_s = time.perf_counter() - t0
    sol, rep = solve_kkt_stabilized(kkt, kkt.rhs, cfg.stabilization)
    dx, dp, dlam = kkt.split(sol)
    return SearchDirection(dp=dp, dx=dx, dlam=dlam, assemble_s=assemble_s,
                           factor_s=rep.factor_time, solve_s=rep.solve_time,
                           relative_residual=rep.relative_residual)


def direction_dgn(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Gauss-Newton step through the dense reduced Hessian.

    The sensitivity-matrix time (factorization plus n_p back-substitutions)
    and the dense factorization time are reported separately so the cost
    anatomy of the dense path can be inspected.
    """
    t0 = time.perf_counter()
    factor = factor_sparse(prob.constraint_jac_x(x, p))
    sens = sensitivity_matrix(prob, x, p, factor=factor)
    t_sens = time.perf_counter() - t0

    t1 = time.perf_counter()
    blocks = gn_blocks(prob, x, p)
    h = dense_gn_hessian(prob, x, p, blocks=blocks, sens=sens)
    if grad is None:
        grad = adjoint_gradient(prob, x, p, factor=factor)
    assemble_s = time.perf_counter() - t1 + t_sens

    t2 = time.perf_counter()
    chol = cholesky_dense(h)
    factor_s = time.perf_counter() - t2

    t3 = time.perf_counter()
    dp = chol.solve(-grad)
    solve_s = time.perf_counter() - t3
    gnorm = np.linalg.norm(grad)
    res = float(np.linalg.norm(h @ dp + grad) / gnorm) if gnorm > 0 else 0.0
    return SearchDirection(dp=dp, assemble_s=assemble_s, factor_s=factor_s,
                           solve_s=solve_s, relative_residual=res,
                           extra={"sens_matrix_s": t_sens, "dense_factor_s": factor_s})


def direction_bgn(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Block-substitution Gauss-Newton step (needs B = C = 0, square dc/dp)."""
    t0 = time.perf_counter()
    blocks = gn_blocks(prob, x, p)
    assemble_s = time.perf_counter() - t0
    t1 = time.perf_counter()
    dp = solve_block_gn(prob, x, p, blocks.A)
    solve_s = time.perf_counter() - t1
    return SearchDirection(dp=dp, assemble_s=assemble_s, solve_s=solve_s)


def direction_cg_gn(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Matrix-free CG on the reduced Gauss-Newton operator.

    Negative curvature aborts CG and falls back to its last iterate (or
    steepest descent when CG has not moved yet).
    """
    t0 = time.perf_counter()
    blocks = gn_blocks(prob, x, p)
    factor = factor_sparse(prob.constraint_jac_x(x, p))
    dcdp = prob.constraint_jac_p(x, p)
    if grad is None:
        grad = adjoint_gradient(prob, x, p, factor=factor)
    op = ReducedOperator(blocks.A, blocks.B, blocks.C, factor, dcdp)
    assemble_s = time.perf_counter() - t0
    try:
        dp, rep = cg_reduced(op, -grad, eta=cfg.cg_eta)
        return SearchDirection(dp=dp, assemble_s=assemble_s, solve_s=rep.solve_time,
                               relative_residual=rep.relative_residual)
    except NegativeCurvature as exc:
        dp = exc.best if exc.best is not None and np.linalg.norm(exc.best) > 0 else -grad
        return SearchDirection(dp=dp, assemble_s=assemble_s)


def direction_gd(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Steepest descent in parameter space."""
    t0 = time.perf_counter()
    if grad is None:
        grad = adjoint_gradient(prob, x, p)
    return SearchDirection(dp=-grad, assemble_s=time.perf_counter() - t0)


def _shifted_blocks(blocks: GnBlocks, tau: float) -> GnBlocks:
    if tau == 0.0:
        return blocks
    import scipy.sparse as sp

    a = CscMatrix.from_scipy(blocks.A.to_scipy() + tau * sp.identity(blocks.A.rows, format="csc"))
    c = CscMatrix.from_scipy(blocks.C.to_scipy() + tau * sp.identity(blocks.C.rows, format="csc"))
    return GnBlocks(A=a, B=blocks.B, C=c)


def _direction_indefinite_kkt(prob, x, p, cfg, blocks, grad) -> SearchDirection:
    """Solve the saddle-point system for possibly indefinite blocks.

    A descent check replaces inertia tracking: if the parameter step is not a
    descent direction (or the solve fails), the A and C blocks get a diagonal
    shift tau that starts at 1e-6 and grows tenfold.
    """
    t0 = time.perf_counter()
    dcdx = prob.constraint_jac_x(x, p)
    dcdp = prob.constraint_jac_p(x, p)
    assemble_s = time.perf_counter() - t0
    tau = 0.0
    for _ in range(25):
        try:
            kkt = kkt_from_blocks(_shifted_blocks(blocks, tau), dcdx, dcdp, grad)
            sol, rep = solve_kkt_stabilized(kkt, kkt.rhs, cfg.stabilization)
        except (SingularMatrix, NoConvergence):
            tau = 1e-6 if tau == 0.0 else tau * 10.0
            continue
        dx, dp, dlam = kkt.split(sol)
        if grad @ dp < 0 or np.linalg.norm(grad) == 0.0:
            return SearchDirection(dp=dp, dx=dx, dlam=dlam, assemble_s=assemble_s,
                                   factor_s=rep.factor_time, solve_s=rep.solve_time,
                                   relative_residual=rep.relative_residual,
                                   extra={"regularization": tau})
        tau = 1e-6 if tau == 0.0 else tau * 10.0
    raise NoConvergence("no descent direction after diagonal regularization")


def direction_ggn(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Generalized Gauss-Newton step with descent-check regularization."""
    if grad is None:
        grad = adjoint_gradient(prob, x, p)
    return _direction_indefinite_kkt(prob, x, p, cfg, ggn_blocks(prob, x, p), grad)


def direction_newton(prob, x, p, cfg: OptimizerConfig, grad=None) -> SearchDirection:
    """Full-Newton step: Lagrangian Hessian blocks at the adjoint multipliers.

    At an equilibrium state the Newton-KKT right-hand side reduces to
    (0, -df/dp, 0), so the saddle-point assembly with these blocks yields the
    second-order sensitivity step.
    """
    lam = adjoint_multipliers(prob, x, p)
    if grad is None:
        grad = adjoint_gradient(prob, x, p)
    blocks = GnBlocks(
        A=CscMatrix.from_scipy(prob.objective_hess_xx(x, p).to_scipy()
                               + prob.constraint_hess_xx(x, p, lam).to_scipy()),
        B=CscMatrix.from_scipy(prob.objective_hess_px(x, p).to_scipy()
                               + prob.constraint_hess_px(x, p, lam).to_scipy()),
        C=CscMatrix.from_scipy(prob.objective_hess_pp(x, p).to_scipy()
                               + prob.constraint_hess_pp(x, p, lam).to_scipy()),
    )
    return _direction_indefinite_kkt(prob, x, p, cfg, blocks, grad)


def direction_lbfgs(history, grad: np.ndarray, apply_h0=None) -> np.ndarray:
    """Two-loop recursion; returns the step -H grad.

    ``history`` holds (s, y, rho) triples, oldest first.  ``apply_h0`` maps a
    vector through the initial inverse Hessian; the default is gamma-scaled
    identity with gamma = s.y / y.y of the most recent pair (1 when empty).
    """
    q = np.asarray(grad, dtype=np.float64).copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if apply_h0 is None:
        if history:
            s, y, _ = history[-1]
            gamma = (s @ y) / (y @ y)
        else:
            gamma = 1.0
        r = gamma * q
    else:
        r = apply_h0(q)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return -r


_DIRECTION_FUNCS = {
    "sgn": direction_sgn,
    "dgn": direction_dgn,
    "bgn": direction_bgn,
    "cg_gn": direction_cg_gn,
    "gd": direction_gd,
    "ggn": direction_ggn,
    "newton": direction_newton,
}


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def minimize(prob: EquilibriumProblem, p0: np.ndarray, cfg: OptimizerConfig) -> OptimizerRun:
    """Minimize f(x(p), p) over p; re-simulates the equilibrium every step.

    Terminates on the gradient tolerance, the iteration cap, or a failed line
    search; accepted iterations strictly decrease the objective.
    """
    if cfg.method == "sqp":
        return run_sqp(prob, p0, cfg)
    if cfg.method not in METHODS:
        raise ValueError(f"unknown method {cfg.method!r}; valid: {', '.join(METHODS)}")

    t_start = time.perf_counter()
    p = np.asarray(p0, dtype=np.float64).copy()
    bounds = prob.bounds() if cfg.bound_mode == "project" else None
    if bounds is not None and (np.any(p < bounds[0]) or np.any(p > bounds[1])):
        raise InfeasiblePoint("initial parameters violate bounds")

    t0 = time.perf_counter()
    try:
        x = prob.simulate(p)
    except (NoConvergence, NumericalBlowup) as exc:
        raise ForwardSimFailure(f"initial forward solve failed: {exc}") from exc
    fwd_time = time.perf_counter() - t0
    f = prob.objective(x, p)
    g = adjoint_gradient(prob, x, p)
    records = [IterationRecord(0, f, float(np.linalg.norm(g)), 0.0, 0.0, fwd_time,
                               time.perf_counter() - t_start, float("nan"))]
    history: list[tuple[np.ndarray, np.ndarray, float]] = []
    termination = "max_iterations"

    for it in range(1, cfg.max_iterations + 1):
        if np.linalg.norm(g) <= cfg.gradient_tolerance:
            termination = "gradient_tolerance"
            break

        t0 = time.perf_counter()
        sd = _compute_direction(prob, x, p, cfg, g, history)
        dir_time = time.perf_counter() - t0
        dp = sd.dp
        if bounds is not None:
            dp = project_direction_bounds(dp, p, *bounds)
            if g @ dp >= 0.0:
                # filtered step lost descent at active bounds; the projected
                # gradient is descent whenever the point is not stationary
                dp = project_direction_bounds(-g, p, *bounds)
        if np.linalg.norm(dp) == 0.0:
            termination = "stationary"
            break
        if g @ dp >= 0.0:
            termination = "no_descent"
            break

        accepted, p_new, x_new, f_new, alpha, fwd_time = _line_search(
            prob, p, x, f, g, dp, bounds, cfg)
        if not accepted:
            termination = "line_search_failure"
            break

        g_new = adjoint_gradient(prob, x_new, p_new)
        if cfg.method in ("lbfgs", "lbfgs_sgn"):
            _push_history(history, p_new - p, g_new - g, cfg.lbfgs_history)
        p, x, f, g = p_new, x_new, f_new, g_new
        records.append(IterationRecord(
            it, f, float(np.linalg.norm(g)), alpha, dir_time, fwd_time,
            time.perf_counter() - t_start, sd.relative_residual))

    return OptimizerRun(method=cfg.method, records=records, termination=termination,
                        p=p, x=x)


def _compute_direction(prob, x, p, cfg, g, history) -> SearchDirection:
    if cfg.method == "lbfgs":
        t0 = time.perf_counter()
        dp = direction_lbfgs(history, g)
        return SearchDirection(dp=dp, assemble_s=time.perf_counter() - t0)
    if cfg.method == "lbfgs_sgn":
        return _direction_lbfgs_sgn(prob, x, p, cfg, g, history)
    return _DIRECTION_FUNCS[cfg.method](prob, x, p, cfg, grad=g)


def _direction_lbfgs_sgn(prob, x, p, cfg, g, history) -> SearchDirection:
    """Two-loop recursion with a fresh sparse Gauss-Newton initial Hessian.

    Applying the initial inverse Hessian solves the saddle-point system with
    the loop vector in the parameter slot, so an empty history reproduces the
    plain sparse Gauss-Newton direction exactly.
    """
    t0 = time.perf_counter()
    blocks = gn_blocks(prob, x, p)
    dcdx = prob.constraint_jac_x(x, p)
    dcdp = prob.constraint_jac_p(x, p)
    assemble_s = time.perf_counter() - t0
    reports: list[SolveReport] = []

    def apply_h0(q):
        kkt = kkt_from_blocks(blocks, dcdx, dcdp, q)   # rhs p-block = -q
        sol, rep = solve_kkt_stabilized(kkt, kkt.rhs, cfg.stabilization)
        reports.append(rep)
        return -kkt.split(sol)[1]                      # H^{-1} q

    dp = direction_lbfgs(history, g, apply_h0)
    rep = reports[-1]
    return SearchDirection(dp=dp, assemble_s=assemble_s, factor_s=rep.factor_time,
                           solve_s=rep.solve_time,
                           relative_residual=rep.relative_residual)


def _push_history(history, s, y, cap):
    sy = float(s @ y)
    if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        history.append((s, y, 1.0 / sy))
        if len(history) > cap:
            history.pop(0)


def _line_search(prob, p, x, f, g, dp, bounds, cfg):
    alpha = 1.0
    fwd_time = 0.0
    for _ in range(cfg.max_backtracks + 1):
        p_try = p + alpha * dp
        if bounds is not None:
            np.clip(p_try, bounds[0], bounds[1], out=p_try)
        slope = float(g @ (p_try - p))
        if slope < 0.0:
            t0 = time.perf_counter()
            try:
                x_try = prob.simulate(p_try, x_init=x)
            except (ForwardSimFailure, NoConvergence, NumericalBlowup):
                x_try = None
            fwd_time += time.perf_counter() - t0
            if x_try is not None:
                f_try = prob.objective(x_try, p_try)
                if np.isfinite(f_try) and f_try <= f + cfg.armijo_c1 * slope:
                    return True, p_try, x_try, f_try, alpha, fwd_time
        alpha *= cfg.backtrack_factor
    return False, None, None, None, 0.0, fwd_time


# ---------------------------------------------------------------------------
# SQP with an exact L1 merit function
# ---------------------------------------------------------------------------

@dataclass
class SqpStep:
    dx: np.ndarray
    dp: np.ndarray
    dlam: np.ndarray
    step_length: float
    merit_weight: float
    report: SolveReport


def sqp_step(prob, x, p, lam, cfg: OptimizerConfig, mu_prev: float = 0.0) -> SqpStep:
    """One Newton step on the KKT conditions, accepted under the L1 merit.

    The penalty weight follows the exactness rule
    mu = max(mu_prev, 1.5 * norm(lam + dlam, inf)), and state, parameters,
    and multipliers are meant to advance simultaneously by the returned step
    length.
    """
    kkt = assemble_kkt_newton(prob, x, p, lam)
    sol, rep = solve_kkt_stabilized(kkt, kkt.rhs, cfg.stabilization)
    dx, dp, dlam = kkt.split(sol)
    mu = max(mu_prev, 1.5 * float(np.linalg.norm(lam + dlam, np.inf)))
    c0 = prob.constraints(x, p)
    c0_l1 = float(np.linalg.norm(c0, 1))
    phi0 = prob.objective(x, p) + mu * c0_l1
    slope = (float(prob.objective_grad_x(x, p) @ dx)
             + float(prob.objective_grad_p(x, p) @ dp) - mu * c0_l1)
    alpha = 1.0
    for _ in range(cfg.max_backtracks + 1):
        x_t = x + alpha * dx
        p_t = p + alpha * dp
        phi_t = (prob.objective(x_t, p_t)
                 + mu * float(np.linalg.norm(prob.constraints(x_t, p_t), 1)))
        if np.isfinite(phi_t) and phi_t <= phi0 + cfg.armijo_c1 * alpha * slope:
            return SqpStep(dx, dp, dlam, alpha, mu, rep)
        alpha *= cfg.backtrack_factor
    raise MeritLineSearchFailure(
        f"merit line search found no acceptable step (mu={mu:.3e})")


def run_sqp(prob: EquilibriumProblem, p0: np.ndarray, cfg: OptimizerConfig) -> OptimizerRun:
    """Drive SQP from a simulated equilibrium with adjoint multipliers.

    The gradient column reports the KKT residual (Lagrangian gradient and
    constraint violation, max norm); the objective itself is not forced
    monotone, only the merit function is.
    """
    t_start = time.perf_counter()
    p = np.asarray(p0, dtype=np.float64).copy()
    x = prob.simulate(p)
    lam = adjoint_multipliers(prob, x, p)
    mu = 0.0
    records = []
    termination = "max_iterations"
    for it in range(cfg.max_iterations + 1):
        grad_x_lag = prob.objective_grad_x(x, p) + prob.constraint_jac_x(x, p).to_scipy().T @ lam
        grad_p_lag = prob.objective_grad_p(x, p) + prob.constraint_jac_p(x, p).to_scipy().T @ lam
        c = prob.constraints(x, p)
        kkt_res = max(np.linalg.norm(grad_x_lag, np.inf),
                      np.linalg.norm(grad_p_lag, np.inf),
                      np.linalg.norm(c, np.inf))
        records.append(IterationRecord(
            it, prob.objective(x, p), float(kkt_res), 0.0, 0.0, 0.0,
            time.perf_counter() - t_start, float("nan")))
        if kkt_res <= cfg.gradient_tolerance:
            termination = "gradient_tolerance"
            break
        if it == cfg.max_iterations:
            break
        t0 = time.perf_counter()
        try:
            step = sqp_step(prob, x, p, lam, cfg, mu_prev=mu)
        except MeritLineSearchFailure:
            termination = "line_search_failure"
            break
        x = x + step.step_length * step.dx
        p = p + step.step_length * step.dp
        lam = lam + step.step_length * step.dlam
        mu = step.merit_weight
        rec = records[-1]
        rec.step_length = step.step_length
        rec.direction_time = time.perf_counter() - t0
        rec.lin_rel_residual = step.report.relative_residual
    return OptimizerRun(method="sqp", records=records, termination=termination,
                        p=p, x=x)
