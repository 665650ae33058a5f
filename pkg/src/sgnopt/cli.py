"""Command-line front end: `sgn-opt optimize|scaling|verify|kkt-dump`.

Configuration comes from a JSON document (see README for per-problem
examples).  Exit codes: 0 on success, 1 on verification failure, 2 on usage
or configuration errors.  CSV and JSON artifacts land in the --out directory;
everything except the timing columns is deterministic for a fixed seed.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks
from .errors import ToolkitError
from .linear_solvers import factor_sparse
from .optimize import (
    METHODS,
    OptimizerConfig,
    minimize,
)
from .optimize import _DIRECTION_FUNCS, _direction_lbfgs_sgn
from .problems import LinearMapProblem, build_car, build_cloth, build_spring_bar
from .sensitivity import assemble_sgn, gn_blocks
from .sparse import write_matrix_market

SCALING_HEADER = ("problem,method,n_x,n_p,direction_time_median_s,assemble_s,"
                  "factor_s,solve_s,sens_matrix_s,dense_factor_s,error")

PROBLEM_NAMES = ("spring_bar", "car", "cloth", "quadratic_toy")


class ConfigError(Exception):
    pass


@dataclass
class BenchSpec:
    """Parsed benchmark configuration: problem, methods, sweep, and knobs."""

    problem: str
    problem_cfg: dict
    methods: list[str]
    optimizer_cfg: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    repetitions: int = 5
    seed: int = 0

    @classmethod
    def load(cls, path: str, seed: int = 0) -> "BenchSpec":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}") from exc
        problem = raw.get("problem")
        if problem not in PROBLEM_NAMES:
            raise ConfigError(
                f"config field 'problem' must be one of {', '.join(PROBLEM_NAMES)}; "
                f"got {problem!r}")
        methods = raw.get("methods", ["sgn"])
        for m in methods:
            if m not in METHODS:
                raise ConfigError(
                    f"unknown method {m!r}; valid methods: {', '.join(METHODS)}")
        return cls(
            problem=problem,
            problem_cfg=raw.get(problem, {}),
            methods=list(methods),
            optimizer_cfg=raw.get("optimizer", {}),
            sweep=raw.get("sweep", {}),
            repetitions=int(raw.get("repetitions", 5)),
            seed=seed,
        )


def build_problem(spec: BenchSpec, size_override: int | None = None):
    cfg = dict(spec.problem_cfg)
    if spec.problem == "spring_bar":
        if size_override is not None:
            free = size_override // 2
            # near-square lattices keep the stiffness matrix well conditioned
            n_h = int(cfg.get("sweep_n_h", round(np.sqrt(free))))
            if size_override % 2 or free % n_h:
                raise ConfigError(
                    f"spring_bar sweep size n_p={size_override} must equal "
                    f"2*(n_w-1)*n_h for integer n_w with n_h={n_h}")
            cfg["n_w"] = free // n_h + 1
            cfg["n_h"] = n_h
        return build_spring_bar(
            int(cfg.get("n_w", 8)), int(cfg.get("n_h", 4)),
            w_reg=float(cfg.get("regularizer_weight", 0.0)),
            stiffness=float(cfg.get("stiffness", 2.0)),
            mass=float(cfg.get("mass", 2e-5)),
            spacing=float(cfg.get("spacing", 0.25)),
        )
    if spec.problem == "car":
        n_steps = size_override if size_override is not None else int(cfg.get("n_steps", 120))
        return build_car(
            int(n_steps),
            target_position=tuple(cfg.get("target_position", (1.0, 1.0))),
            target_heading=float(cfg.get("target_heading", 0.0)),
            weights=cfg.get("weights"),
            bounds=cfg.get("bounds"),
        )
    if spec.problem == "cloth":
        n_steps = size_override if size_override is not None else int(cfg.get("n_steps", 10))
        return build_cloth(
            int(cfg.get("v_side", 5)), int(n_steps),
            keyframes=cfg.get("keyframes"),
            weights=cfg.get("weights"),
            total_time=float(cfg.get("total_time", 1.66)),
        )
    if spec.problem == "quadratic_toy":
        n = size_override if size_override is not None else int(cfg.get("n", 8))
        rng = np.random.default_rng(int(cfg.get("target_seed", 0)))
        return LinearMapProblem(np.eye(int(n)), rng.standard_normal(int(n)))
    raise ConfigError(f"unhandled problem {spec.problem!r}")


def make_optimizer_config(spec: BenchSpec, method: str) -> OptimizerConfig:
    oc = spec.optimizer_cfg
    bound_mode = str(oc.get("bound_mode", "none"))
    if bound_mode == "projected-direction":
        bound_mode = "project"
    return OptimizerConfig(
        method=method,
        max_iterations=int(oc.get("max_iterations", 100)),
        gradient_tolerance=float(oc.get("gradient_tolerance", 1e-5)),
        lbfgs_history=int(oc.get("lbfgs_history", 10)),
        cg_eta=float(oc.get("cg_eta", 1e-3)),
        bound_mode=bound_mode,
        max_backtracks=int(oc.get("max_backtracks", 60)),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_optimize(spec: BenchSpec, out_dir: Path, jobs: int = 1) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(method):
        # per-method instances: runs share no mutable state when threaded
        problem = build_problem(spec)
        p0 = problem.default_parameters()
        t0 = time.perf_counter()
        run = minimize(problem, p0, make_optimizer_config(spec, method))
        return method, run, time.perf_counter() - t0

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, spec.methods))
    else:
        results = [run_one(m) for m in spec.methods]

    f_min = min(min(r.f_values()) for _, r, _ in results)
    summary = {}
    for method, run, wall in results:
        run.write_csv(out_dir / f"convergence_{method}.csv")
        fs = run.f_values()
        summary[method] = {
            "termination": run.termination,
            "iterations": len(run.records) - 1,
            "final_f": float(fs[-1]),
            "final_grad_norm": float(run.grad_norms()[-1]),
            "total_time_s": wall,
            "suboptimality": [float(v - f_min) for v in fs],
        }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"problem": spec.problem, "f_min": float(f_min),
                   "methods": summary}, fh, indent=2)
    print(f"wrote {len(results)} convergence files + summary.json to {out_dir}")
    return 0


def time_direction(problem, x, p, cfg, method, repetitions):
    """Median component timings of repeated direction computations.

    BLAS is pinned to one thread while the clock runs: thread wake-up jitter
    otherwise dominates millisecond-scale cells, and the sparse path is
    single-threaded anyway.
    """
    if method == "lbfgs_sgn":
        from .sensitivity import adjoint_gradient
        g = adjoint_gradient(problem, x, p)
        func = lambda: _direction_lbfgs_sgn(problem, x, p, cfg, g, [])
    else:
        func = lambda: _DIRECTION_FUNCS[method](problem, x, p, cfg)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # fall back to whatever the BLAS default is
        from contextlib import nullcontext as threadpool_limits
    import gc

    func()  # warm-up run off the clock
    totals, samples = [], []
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        with threadpool_limits(limits=1):
            for _ in range(repetitions):
                t0 = time.perf_counter()
                sd = func()
                totals.append(time.perf_counter() - t0)
                samples.append(sd)
    finally:
        if gc_was_enabled:
            gc.enable()
    med = statistics.median
    sd = samples[int(np.argsort(totals)[len(totals) // 2])]
    return {
        "direction_time_median_s": med(totals),
        "assemble_s": med([s.assemble_s for s in samples]),
        "factor_s": med([s.factor_s for s in samples]),
        "solve_s": med([s.solve_s for s in samples]),
        "sens_matrix_s": sd.extra.get("sens_matrix_s", 0.0),
        "dense_factor_s": sd.extra.get("dense_factor_s", 0.0),
    }


def cmd_scaling(spec: BenchSpec, out_dir: Path, jobs: int = 1) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = spec.sweep.get("n_p") or spec.sweep.get("n_steps")
    if not sizes:
        raise ConfigError("scaling needs a 'sweep' with 'n_p' or 'n_steps' sizes")
    rows = []
    for size in sizes:
        try:
            problem = build_problem(spec, size_override=int(size))
            p = problem.default_parameters()
            x = problem.simulate(p)
        except (ToolkitError, ConfigError) as exc:
            for method in spec.methods:
                rows.append(f"{spec.problem},{method},,,,,,,,,\"{exc}\"")
            continue
        for method in spec.methods:
            try:
                cfg = make_optimizer_config(spec, method)
                t = time_direction(problem, x, p, cfg, method, spec.repetitions)
                rows.append(
                    f"{spec.problem},{method},{problem.n_x},{problem.n_p},"
                    f"{t['direction_time_median_s']:.6g},{t['assemble_s']:.6g},"
                    f"{t['factor_s']:.6g},{t['solve_s']:.6g},"
                    f"{t['sens_matrix_s']:.6g},{t['dense_factor_s']:.6g},")
            except ToolkitError as exc:
                rows.append(
                    f"{spec.problem},{method},{problem.n_x},{problem.n_p},"
                    f",,,,,,\"{exc}\"")
    path = out_dir / "scaling.csv"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(SCALING_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_verify(seed: int, inject_fault: str | None) -> int:
    results = checks.run_all(seed=seed, inject_fault=inject_fault)
    for res in results:
        print(res.line())
    if all(r.passed for r in results):
        print("verification suite: all checks passed")
        return 0
    worst = max((r for r in results if not r.passed), key=lambda r: r.worst)
    print(f"verification suite: FAILED ({worst.name}, discrepancy {worst.worst:.3e})")
    return 1


def cmd_kkt_dump(spec: BenchSpec, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(spec)
    p = problem.default_parameters()
    x = problem.simulate(p)
    kkt = assemble_sgn(problem, x, p, gn_blocks(problem, x, p))
    mtx_path = out_dir / "kkt.mtx"
    write_matrix_market(kkt.matrix, mtx_path)
    fill = factor_sparse(kkt.matrix).fill_nnz
    stats = {
        "problem": spec.problem,
        "dimension": kkt.matrix.rows,
        "n_x": kkt.n_x,
        "n_p": kkt.n_p,
        "nnz": kkt.matrix.nnz,
        "factor_fill_nnz": fill,
    }
    with open(out_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2)
    print(f"wrote {mtx_path} (dim {kkt.matrix.rows}, nnz {kkt.matrix.nnz}, "
          f"fill {fill})")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgn-opt",
        description="Benchmark harness for sparse Gauss-Newton inverse design")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("optimize", "scaling", "kkt-dump"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
    sv = sub.add_parser("verify")
    sv.add_argument("--config", required=False, help="ignored; the suite is self-contained")
    sv.add_argument("--out", default=".")
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--jobs", type=int, default=1)
    sv.add_argument("--inject-fault", choices=["sgn-sign"], default=None,
                    help="deliberately break the sparse step (harness self-test)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.seed, args.inject_fault)
        spec = BenchSpec.load(args.config, seed=args.seed)
        out_dir = Path(args.out)
        if args.command == "optimize":
            return cmd_optimize(spec, out_dir, jobs=args.jobs)
        if args.command == "scaling":
            return cmd_scaling(spec, out_dir, jobs=args.jobs)
        if args.command == "kkt-dump":
            return cmd_kkt_dump(spec, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
