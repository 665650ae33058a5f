import numpy as np
import pytest

from sgnopt import (
    InfeasiblePoint,
    OptimizerConfig,
    adjoint_gradient,
    adjoint_multipliers,
    dense_full_hessian,
    direction_bgn,
    direction_cg_gn,
    direction_dgn,
    direction_gd,
    direction_ggn,
    direction_lbfgs,
    direction_newton,
    direction_sgn,
    minimize,
    project_direction_bounds,
    run_sqp,
    sqp_step,
)
from sgnopt.optimize import _direction_lbfgs_sgn
from sgnopt.problems import (
    CubicRootToy,
    LinearMapProblem,
    QuadraticConstraintToy,
    build_car,
    build_spring_bar,
)


def quadratic_toy():
    return LinearMapProblem(np.eye(3), np.array([1.0, -0.5, 2.0]))


def test_minimize_quadratic_toy_two_iterations():
    prob = quadratic_toy()
    cfg = OptimizerConfig(method="sgn", gradient_tolerance=1e-12, max_iterations=5)
    run = minimize(prob, np.zeros(3), cfg)
    assert run.termination == "gradient_tolerance"
    assert len(run.records) - 1 <= 2
    assert run.grad_norms()[-1] <= 1e-12
    np.testing.assert_allclose(run.p, [1.0, -0.5, 2.0], atol=1e-12)


def test_minimize_sgn_dgn_identical_sequences():
    prob = build_spring_bar(8, 4, w_reg=1e-2, mass=6e-5)
    p0 = prob.default_parameters()
    cfg = dict(gradient_tolerance=1e-9, max_iterations=8)
    run_s = minimize(prob, p0.copy(), OptimizerConfig(method="sgn", **cfg))
    run_d = minimize(prob, p0.copy(), OptimizerConfig(method="dgn", **cfg))
    fs, fd = run_s.f_values(), run_d.f_values()
    n = min(len(fs), len(fd))
    assert n >= 3
    np.testing.assert_allclose(fs[:n], fd[:n], rtol=1e-8)


def test_minimize_gd_monotone_and_slow():
    prob = build_spring_bar(8, 4, w_reg=0.0)
    p0 = prob.default_parameters()
    run_s = minimize(prob, p0.copy(),
                     OptimizerConfig(method="sgn", gradient_tolerance=1e-5,
                                     max_iterations=50))
    assert run_s.termination == "gradient_tolerance"
    n_sgn = len(run_s.records) - 1
    run_g = minimize(prob, p0.copy(),
                     OptimizerConfig(method="gd", gradient_tolerance=1e-5,
                                     max_iterations=5 * n_sgn))
    fg = run_g.f_values()
    assert np.all(np.diff(fg) < 0)
    # after the same number of iterations GD is nowhere near SGN's gradient
    assert run_g.grad_norms()[n_sgn] > 10.0 * run_s.grad_norms()[-1]


def test_directions_zero_at_stationary_point():
    prob = quadratic_toy()
    p = np.array([1.0, -0.5, 2.0])     # the optimum: x(p) = p = target
    x = prob.simulate(p)
    cfg = OptimizerConfig()
    g = adjoint_gradient(prob, x, p)
    assert np.linalg.norm(g) <= 1e-15
    for func in (direction_sgn, direction_dgn, direction_cg_gn, direction_gd,
                 direction_ggn, direction_newton):
        d = func(prob, x, p, cfg)
        assert np.linalg.norm(d.dp) <= 1e-12, func.__name__
    np.testing.assert_array_equal(direction_lbfgs([], g), -g)


def test_directions_are_descent():
    prob = build_spring_bar(6, 3, w_reg=1e-2)
    p = prob.default_parameters()
    x = prob.simulate(p)
    cfg = OptimizerConfig()
    g = adjoint_gradient(prob, x, p)
    for func in (direction_sgn, direction_dgn, direction_cg_gn, direction_gd,
                 direction_ggn):
        d = func(prob, x, p, cfg)
        assert g @ d.dp < 0, func.__name__


def test_sparse_dense_first_iterate_direction_match():
    prob = build_spring_bar(6, 3, w_reg=1e-2)
    p = prob.default_parameters()
    x = prob.simulate(p)
    cfg = OptimizerConfig()
    d_s = direction_sgn(prob, x, p, cfg)
    d_d = direction_dgn(prob, x, p, cfg)
    assert np.linalg.norm(d_s.dp - d_d.dp) <= 1e-6 * (1 + np.linalg.norm(d_d.dp))


def test_bgn_direction_matches_sgn():
    prob = build_spring_bar(6, 3, w_reg=0.0)
    p = prob.default_parameters()
    x = prob.simulate(p)
    cfg = OptimizerConfig()
    d_b = direction_bgn(prob, x, p, cfg)
    d_s = direction_sgn(prob, x, p, cfg)
    assert np.linalg.norm(d_b.dp - d_s.dp) <= 1e-8 * np.linalg.norm(d_s.dp)


def test_lbfgs_plain_empty_history_is_steepest_descent():
    g = np.array([0.3, -1.2, 0.7])
    np.testing.assert_array_equal(direction_lbfgs([], g), -g)


def test_lbfgs_hybrid_empty_history_equals_sgn_exactly():
    prob = build_spring_bar(6, 3, w_reg=1e-2)
    p = prob.default_parameters()
    x = prob.simulate(p)
    cfg = OptimizerConfig()
    g = adjoint_gradient(prob, x, p)
    d_sgn = direction_sgn(prob, x, p, cfg, grad=g)
    d_hyb = _direction_lbfgs_sgn(prob, x, p, cfg, g, [])
    np.testing.assert_array_equal(d_sgn.dp, d_hyb.dp)


def test_lbfgs_finite_termination_on_quadratic():
    # CG-like termination: n+1 exact-line-search steps on an n-dim quadratic
    rng = np.random.default_rng(7)
    n = 5
    a = rng.standard_normal((n, n))
    h = a.T @ a + np.eye(n)
    b = rng.standard_normal(n)
    p = np.zeros(n)
    history = []
    g = h @ p - b
    for _ in range(n + 1):
        if np.linalg.norm(g) <= 1e-10:
            break
        d = direction_lbfgs(history, g)
        alpha = -(g @ d) / (d @ (h @ d))
        s = alpha * d
        p = p + s
        g_new = h @ p - b
        y = g_new - g
        history.append((s, y, 1.0 / (s @ y)))
        g = g_new
    assert np.linalg.norm(h @ p - b) <= 1e-10


def test_lbfgs_skips_flat_curvature_pairs():
    from sgnopt.optimize import _push_history
    history = []
    s = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])   # s.y = 0, must be skipped
    _push_history(history, s, y, cap=5)
    assert history == []
    _push_history(history, s, np.array([2.0, 0.0]), cap=5)
    assert len(history) == 1


def test_minimize_lbfgs_variants_converge():
    prob = build_spring_bar(6, 3, w_reg=1e-2)
    p0 = prob.default_parameters()
    for method in ("lbfgs", "lbfgs_sgn"):
        run = minimize(prob, p0.copy(),
                       OptimizerConfig(method=method, gradient_tolerance=1e-6,
                                       max_iterations=60))
        assert run.termination == "gradient_tolerance", method
        fs = run.f_values()
        assert np.all(np.diff(fs) < 0)


def test_sqp_step_zero_at_kkt_point():
    toy = CubicRootToy()
    p = np.array([8.0])       # optimum: x = 2
    x = toy.simulate(p)
    lam = adjoint_multipliers(toy, x, p)
    step = sqp_step(toy, x, p, lam, OptimizerConfig())
    assert np.linalg.norm(step.dx) <= 1e-10
    assert np.linalg.norm(step.dp) <= 1e-10
    assert np.linalg.norm(step.dlam) <= 1e-10


def test_sqp_step_matches_full_newton_sensitivity_step():
    toy = CubicRootToy()
    p = np.array([1.3 ** 3])
    x = toy.simulate(p)
    lam = adjoint_multipliers(toy, x, p)
    step = sqp_step(toy, x, p, lam, OptimizerConfig())
    h = dense_full_hessian(toy, x, p)
    dp_newton = np.linalg.solve(h, -adjoint_gradient(toy, x, p))
    assert np.linalg.norm(step.dp - dp_newton) <= 1e-8 * (1 + np.linalg.norm(dp_newton))


def test_sqp_full_step_solves_linear_constraints():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    prob = LinearMapProblem(m, rng.standard_normal(3))
    p = rng.standard_normal(3)
    x = prob.simulate(p) + 0.5 * rng.standard_normal(3)   # infeasible start
    lam = np.zeros(3)
    c0 = np.linalg.norm(prob.constraints(x, p), 1)
    assert c0 > 0
    step = sqp_step(prob, x, p, lam, OptimizerConfig())
    c1 = np.linalg.norm(prob.constraints(x + step.dx, p + step.dp), 1)
    assert c1 < 1e-10 * max(1.0, c0)    # Newton solves linear constraints exactly


def test_run_sqp_converges_on_toys():
    for toy, p0 in ((CubicRootToy(), np.array([1.5])),
                    (QuadraticConstraintToy(seed=1), np.array([0.4, -0.3]))):
        run = run_sqp(toy, p0, OptimizerConfig(max_iterations=50,
                                               gradient_tolerance=1e-9))
        assert run.termination == "gradient_tolerance"
        assert run.grad_norms()[-1] <= 1e-9


def test_project_direction_bounds_interior_unchanged():
    p = np.array([0.0, 0.5])
    dp = np.array([1.0, -1.0])
    out = project_direction_bounds(dp, p, -np.ones(2), np.ones(2))
    np.testing.assert_array_equal(out, dp)


def test_project_direction_bounds_zeroes_active():
    p = np.array([1.0, -1.0, 0.0])
    dp = np.array([0.5, -0.5, 0.2])
    out = project_direction_bounds(dp, p, -np.ones(3), np.ones(3))
    np.testing.assert_array_equal(out, [0.0, 0.0, 0.2])


def test_project_direction_bounds_infeasible_raises():
    with pytest.raises(InfeasiblePoint):
        project_direction_bounds(np.zeros(2), np.array([2.0, 0.0]),
                                 -np.ones(2), np.ones(2))


class BoundsRecorder:
    """Wraps a problem and records every simulated parameter vector."""

    def __init__(self, prob):
        self._prob = prob
        self.simulated = []

    def __getattr__(self, name):
        return getattr(self._prob, name)

    def simulate(self, p, x_init=None):
        self.simulated.append(p.copy())
        return self._prob.simulate(p, x_init=x_init)


def test_car_run_respects_bounds_at_every_simulated_point():
    base = build_car(60, target_position=(0.7, 0.4),
                     target_heading=float(np.arctan2(0.4, 0.7)),
                     bounds={"v_max": 1.0, "s_max": 0.3})
    prob = BoundsRecorder(base)
    cfg = OptimizerConfig(method="sgn", gradient_tolerance=1e-6,
                          max_iterations=40, bound_mode="project")
    run = minimize(prob, base.default_parameters(), cfg)
    lo, hi = base.bounds()
    for p in prob.simulated:
        assert np.all(p >= lo - 1e-15) and np.all(p <= hi + 1e-15)
    fs = run.f_values()
    assert np.all(np.diff(fs) < 0)


def test_minimize_rejects_unknown_method():
    with pytest.raises(ValueError):
        minimize(quadratic_toy(), np.zeros(3), OptimizerConfig(method="nope"))


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(gradient_tolerance=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(backtrack_factor=1.5)


def test_run_csv_schema(tmp_path):
    prob = quadratic_toy()
    run = minimize(prob, np.zeros(3),
                   OptimizerConfig(method="sgn", gradient_tolerance=1e-12))
    path = tmp_path / "run.csv"
    run.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ("iter,f,grad_norm,step_len,dir_time_s,fwd_time_s,"
                        "elapsed_s,lin_rel_residual")
    assert len(lines) == len(run.records) + 1


def test_method_equivalence_iterate_sequences_on_spring_bar():
    # sparse, dense, block, and tight-eta CG variants of the same step give
    # matching objective sequences
    prob = build_spring_bar(8, 4, w_reg=0.0, mass=6e-5)
    p0 = prob.default_parameters()
    runs = {}
    for method in ("sgn", "dgn", "bgn", "cg_gn"):
        cfg = OptimizerConfig(method=method, gradient_tolerance=1e-9,
                              max_iterations=8, cg_eta=1e-12)
        runs[method] = minimize(prob, p0.copy(), cfg).f_values()
    n = min(len(f) for f in runs.values())
    assert n >= 3
    ref = runs["sgn"][:n]
    for method, fs in runs.items():
        # values below the float noise of f0 are all "converged to zero"
        np.testing.assert_allclose(fs[:n], ref, rtol=1e-6, atol=1e-15 * ref[0],
                                   err_msg=method)


def test_sqp_step_matches_newton_direction_at_every_feasible_iterate():
    # drive the full-Newton sensitivity loop; at each visited equilibrium the
    # Newton-KKT step with adjoint multipliers equals the loop's direction
    toy = QuadraticConstraintToy(seed=5)
    cfg = OptimizerConfig(method="newton", gradient_tolerance=1e-11,
                          max_iterations=15)
    p = np.array([0.4, -0.5])
    for _ in range(5):
        x = toy.simulate(p)
        g = adjoint_gradient(toy, x, p)
        if np.linalg.norm(g) <= cfg.gradient_tolerance:
            break
        d_newton = direction_newton(toy, x, p, cfg, grad=g)
        lam = adjoint_multipliers(toy, x, p)
        step = sqp_step(toy, x, p, lam, cfg)
        assert np.linalg.norm(step.dp - d_newton.dp) <= 1e-6 * (
            1 + np.linalg.norm(d_newton.dp))
        p = p + d_newton.dp
