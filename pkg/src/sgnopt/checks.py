"""Equivalence and derivative-correctness checks behind `sgn-opt verify`.

Each check returns a :class:`CheckResult` with the worst observed discrepancy;
the suite doubles as the library-level face of the acceptance tests.  A
deliberate-fault mode flips the sign of the sparse Gauss-Newton right-hand
side so the harness itself can be validated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear_solvers import solve_kkt_stabilized
from .optimize import (
    OptimizerConfig,
    direction_dgn,
    direction_sgn,
    _direction_lbfgs_sgn,
)
from .problems import (
    CubicRootToy,
    QuadraticConstraintToy,
    RandomLeastSquaresInstance,
    build_car,
    build_cloth,
    build_spring_bar,
)
from .sensitivity import (
    adjoint_gradient,
    adjoint_multipliers,
    assemble_kkt_newton,
    assemble_sgn,
    dense_full_hessian,
    gn_blocks,
    solve_block_gn,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<34} worst={self.worst:.3e}  {self.detail}"


def default_benchmarks() -> dict:
    """Small instances of the three benchmark problems for equivalence checks."""
    return {
        "spring_bar": build_spring_bar(8, 4, w_reg=1e-2),
        "car": build_car(40, target_position=(0.8, 0.5), target_heading=0.6),
        "cloth": build_cloth(3, 4, total_time=0.4),
    }


def sgn_step(prob, x, p, cfg: OptimizerConfig | None = None,
             mutate_sign: bool = False):
    """Parameter block of the sparse Gauss-Newton solve, with optional fault."""
    cfg = cfg or OptimizerConfig()
    kkt = assemble_sgn(prob, x, p, gn_blocks(prob, x, p))
    rhs = kkt.rhs if not mutate_sign else -kkt.rhs
    sol, rep = solve_kkt_stabilized(kkt, rhs, cfg.stabilization)
    return kkt.split(sol)[1], rep


def check_sparse_dense_step_random(seed: int = 0, count: int = 100,
                          mutate_sign: bool = False) -> CheckResult:
    """Sparse and dense Gauss-Newton steps agree on random instances."""
    rng = np.random.default_rng(seed)
    cfg = OptimizerConfig()
    worst = 0.0
    for _ in range(count):
        n_x = int(rng.integers(5, 51))
        n_p = int(rng.integers(2, 31))
        prob = RandomLeastSquaresInstance.make(rng, n_x, n_p)
        p = rng.standard_normal(n_p)
        x = prob.simulate(p)
        dp_sgn, _ = sgn_step(prob, x, p, cfg, mutate_sign=mutate_sign)
        dp_dgn = direction_dgn(prob, x, p, cfg).dp
        err = np.linalg.norm(dp_sgn - dp_dgn) / (1.0 + np.linalg.norm(dp_dgn))
        worst = max(worst, err)
    return CheckResult("sparse-dense-step-random", worst <= 1e-6, worst,
                       f"{count} instances")


def _first_iterates(prob, p0, cfg, n_iters):
    """(x, p) pairs visited by a plain SGN descent with Armijo backtracking."""
    p = p0.copy()
    x = prob.simulate(p)
    out = [(x, p.copy())]
    f = prob.objective(x, p)
    for _ in range(n_iters - 1):
        g = adjoint_gradient(prob, x, p)
        dp, _ = sgn_step(prob, x, p, cfg)
        alpha = 1.0
        for _ in range(40):
            p_try = p + alpha * dp
            try:
                x_try = prob.simulate(p_try, x_init=x)
            except Exception:
                alpha *= 0.5
                continue
            f_try = prob.objective(x_try, p_try)
            if f_try <= f + 1e-4 * alpha * (g @ dp):
                p, x, f = p_try, x_try, f_try
                break
            alpha *= 0.5
        out.append((x, p.copy()))
    return out


def check_sparse_dense_step_benchmarks(n_iters: int = 5,
                              mutate_sign: bool = False) -> CheckResult:
    cfg = OptimizerConfig()
    worst = 0.0
    for name, prob in default_benchmarks().items():
        for x, p in _first_iterates(prob, prob.default_parameters(), cfg, n_iters):
            dp_sgn, _ = sgn_step(prob, x, p, cfg, mutate_sign=mutate_sign)
            dp_dgn = direction_dgn(prob, x, p, cfg).dp
            err = np.linalg.norm(dp_sgn - dp_dgn) / (1.0 + np.linalg.norm(dp_dgn))
            worst = max(worst, err)
    return CheckResult("sparse-dense-step-benchmarks", worst <= 1e-6, worst,
                       f"first {n_iters} iterates of 3 problems")


def check_block_solve(n_iters: int = 5) -> CheckResult:
    """Block substitution equals the saddle-point step when B = C = 0."""
    cfg = OptimizerConfig()
    prob = build_spring_bar(8, 4, w_reg=0.0)
    worst = 0.0
    for x, p in _first_iterates(prob, prob.default_parameters(), cfg, n_iters):
        dp_sgn, _ = sgn_step(prob, x, p, cfg)
        dp_bgn = solve_block_gn(prob, x, p, gn_blocks(prob, x, p).A)
        err = np.linalg.norm(dp_bgn - dp_sgn) / np.linalg.norm(dp_sgn)
        worst = max(worst, err)
    return CheckResult("block-solve-equivalence", worst <= 1e-8, worst,
                       "spring bar without regularizer")


def check_newton_kkt_step_toys(count: int = 20, seed: int = 0) -> CheckResult:
    """Newton-KKT step with adjoint multipliers equals the dense-Hessian step."""
    rng = np.random.default_rng(seed)
    cfg = OptimizerConfig()
    worst = 0.0
    scalar = CubicRootToy()
    quad = QuadraticConstraintToy(seed=seed + 1)
    for _ in range(count):
        x_val = rng.uniform(0.6, 1.8)
        cases = [
            (scalar, np.array([x_val]), np.array([x_val ** 3])),
        ]
        p2 = 0.5 * rng.standard_normal(2)
        cases.append((quad, quad.simulate(p2), p2))
        for prob, x, p in cases:
            lam = adjoint_multipliers(prob, x, p)
            kkt = assemble_kkt_newton(prob, x, p, lam)
            sol, _ = solve_kkt_stabilized(kkt, kkt.rhs, cfg.stabilization)
            dp_kkt = kkt.split(sol)[1]
            h = dense_full_hessian(prob, x, p)
            g = adjoint_gradient(prob, x, p)
            dp_dense = np.linalg.solve(h, -g)
            err = np.linalg.norm(dp_kkt - dp_dense) / (1.0 + np.linalg.norm(dp_dense))
            worst = max(worst, err)
    return CheckResult("newton-kkt-vs-dense-hessian", worst <= 1e-6, worst,
                       f"{count} feasible points x 2 toys")


def directional_fd_error(prob, p, rng, h, n_dirs=2):
    """Worst relative error of the adjoint gradient against central differences."""
    x = prob.simulate(p)
    g = adjoint_gradient(prob, x, p)
    worst = 0.0
    for _ in range(n_dirs):
        u = rng.standard_normal(p.size)
        u /= np.linalg.norm(u)
        fp = prob.objective(prob.simulate(p + h * u), p + h * u)
        fm = prob.objective(prob.simulate(p - h * u), p - h * u)
        fd = (fp - fm) / (2.0 * h)
        denom = max(abs(g @ u), 1e-12)
        worst = max(worst, abs(fd - g @ u) / denom)
    return worst


def check_gradients_fd(seed: int = 0, points: int = 2) -> CheckResult:
    """Adjoint gradients against finite differences through the simulation."""
    rng = np.random.default_rng(seed)
    worst_overall = 0.0
    passed = True
    details = []
    cases = [
        ("spring_bar", build_spring_bar(6, 3), 1e-5, 1e-4, 0.02),
        ("car", build_car(30, target_position=(0.6, 0.4)), 1e-6, 1e-4, 0.2),
        ("cloth", build_cloth(2, 3, total_time=0.3), 1e-4, 1e-3, 0.01),
    ]
    for name, prob, h, tol, jitter in cases:
        p0 = prob.default_parameters()
        worst = 0.0
        for _ in range(points):
            p = p0 + jitter * rng.standard_normal(p0.size)
            worst = max(worst, directional_fd_error(prob, p, rng, h))
        passed &= worst <= tol
        worst_overall = max(worst_overall, worst)
        details.append(f"{name}:{worst:.1e}")
    return CheckResult("adjoint-gradient-vs-fd", passed, worst_overall,
                       " ".join(details))


def check_hybrid_lbfgs_identity() -> CheckResult:
    """Empty-history hybrid L-BFGS equals the sparse Gauss-Newton direction."""
    cfg = OptimizerConfig()
    worst = 0.0
    for name, prob in default_benchmarks().items():
        p = prob.default_parameters()
        x = prob.simulate(p)
        g = adjoint_gradient(prob, x, p)
        dp_sgn = direction_sgn(prob, x, p, cfg, grad=g).dp
        dp_hyb = _direction_lbfgs_sgn(prob, x, p, cfg, g, []).dp
        diff = float(np.max(np.abs(dp_sgn - dp_hyb)))
        worst = max(worst, diff)
    return CheckResult("hybrid-lbfgs-empty-history", worst == 0.0, worst,
                       "bitwise identical systems")


def check_solve_reports() -> CheckResult:
    """Stabilized saddle-point solves reach 1e-10 relative residual."""
    cfg = OptimizerConfig()
    worst = 0.0
    iters = 0
    for name, prob in default_benchmarks().items():
        p = prob.default_parameters()
        x = prob.simulate(p)
        _, rep = sgn_step(prob, x, p, cfg)
        worst = max(worst, rep.relative_residual)
        iters = max(iters, rep.refine_iterations)
    ok = worst <= 1e-10 and iters <= 50
    return CheckResult("stabilized-solve-accuracy", ok, worst,
                       f"max refinement iterations {iters}")


def run_all(seed: int = 0, inject_fault: str | None = None) -> list[CheckResult]:
    mutate = inject_fault == "sgn-sign"
    return [
        check_sparse_dense_step_random(seed=seed, mutate_sign=mutate),
        check_sparse_dense_step_benchmarks(mutate_sign=mutate),
        check_block_solve(),
        check_newton_kkt_step_toys(seed=seed),
        check_gradients_fd(seed=seed),
        check_hybrid_lbfgs_identity(),
        check_solve_reports(),
    ]
