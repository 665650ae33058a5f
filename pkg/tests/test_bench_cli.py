import json

import numpy as np
import pytest

from sgnopt.cli import main
from sgnopt import read_matrix_market


def write_config(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return str(path)


@pytest.fixture()
def spring_config(tmp_path):
    return write_config(tmp_path / "sb.json", {
        "problem": "spring_bar",
        "spring_bar": {"n_w": 8, "n_h": 4, "regularizer_weight": 0.0},
        "methods": ["sgn", "dgn"],
        "optimizer": {"max_iterations": 20, "gradient_tolerance": 1e-6},
        "sweep": {"n_p": [32]},
        "repetitions": 2,
    })


def read_csv_column(path, name):
    lines = path.read_text().splitlines()
    idx = lines[0].split(",").index(name)
    return np.array([float(row.split(",")[idx]) for row in lines[1:]])


def test_optimize_writes_matching_convergence_files(tmp_path, spring_config):
    out = tmp_path / "out"
    assert main(["optimize", "--config", spring_config, "--out", str(out)]) == 0
    f_sgn = read_csv_column(out / "convergence_sgn.csv", "f")
    f_dgn = read_csv_column(out / "convergence_dgn.csv", "f")
    n = min(f_sgn.size, f_dgn.size)
    np.testing.assert_allclose(f_sgn[:n], f_dgn[:n], rtol=1e-8)
    summary = json.loads((out / "summary.json").read_text())
    for method in ("sgn", "dgn"):
        sub = np.array(summary["methods"][method]["suboptimality"])
        assert np.all(sub >= 0)
        assert np.all(np.diff(sub) <= 0)


def test_optimize_gd_on_quadratic_toy_monotone(tmp_path):
    cfg = write_config(tmp_path / "toy.json", {
        "problem": "quadratic_toy",
        "quadratic_toy": {"n": 6},
        "methods": ["gd"],
        "optimizer": {"max_iterations": 15, "gradient_tolerance": 1e-10},
    })
    out = tmp_path / "toy_out"
    assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
    f = read_csv_column(out / "convergence_gd.csv", "f")
    assert np.all(np.diff(f) < 0)


def test_unknown_method_exits_2_and_lists_valid(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json", {
        "problem": "spring_bar",
        "methods": ["sgn", "made-up"],
    })
    code = main(["optimize", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "made-up" in err and "sgn" in err and "dgn" in err


def test_config_parse_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text('{"problem": "spring_bar",,}')
    code = main(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line" in capsys.readouterr().err


def test_scaling_single_cell(tmp_path, spring_config):
    out = tmp_path / "scal"
    assert main(["scaling", "--config", spring_config, "--out", str(out)]) == 0
    lines = (out / "scaling.csv").read_text().splitlines()
    assert lines[0].startswith("problem,method,n_x,n_p,direction_time_median_s")
    assert len(lines) == 3     # one sweep size, two methods


def test_scaling_dgn_breakdown_accounting(tmp_path, spring_config):
    out = tmp_path / "scal2"
    assert main(["scaling", "--config", spring_config, "--out", str(out)]) == 0
    rows = (out / "scaling.csv").read_text().splitlines()[1:]
    dgn = [r for r in rows if r.split(",")[1] == "dgn"][0].split(",")
    total = float(dgn[4])
    sens = float(dgn[8])
    dense_factor = float(dgn[9])
    assert sens >= 0 and dense_factor >= 0
    assert sens + dense_factor <= total * 1.5   # medians of separate reps


def test_verify_passes_and_mutation_fails():
    assert main(["verify", "--seed", "0"]) == 0
    assert main(["verify", "--seed", "0", "--inject-fault", "sgn-sign"]) == 1


def test_verify_random_checks_stable_across_seeds():
    from sgnopt.checks import check_sparse_dense_step_random
    for seed in range(10):
        assert check_sparse_dense_step_random(seed=seed, count=10).passed


def test_kkt_dump(tmp_path):
    cfg = write_config(tmp_path / "dump.json", {
        "problem": "spring_bar",
        "spring_bar": {"n_w": 4, "n_h": 2},
        "methods": ["sgn"],
    })
    out = tmp_path / "dump_out"
    assert main(["kkt-dump", "--config", cfg, "--out", str(out)]) == 0
    stats = json.loads((out / "stats.json").read_text())
    # 4x2 grid: 6 free vertices -> n_x = n_p = 12, dimension 2*12+12
    assert stats["dimension"] == 2 * stats["n_x"] + stats["n_p"]
    assert stats["dimension"] == 36
    m = read_matrix_market(out / "kkt.mtx")
    dense = m.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-14)
    header = (out / "kkt.mtx").read_text().splitlines()[0]
    assert header == "%%MatrixMarket matrix coordinate real general"


def test_kkt_dump_sparse_beats_dense_storage(tmp_path):
    cfg = write_config(tmp_path / "dump32.json", {
        "problem": "spring_bar",
        "spring_bar": {"n_w": 32, "n_h": 8},
        "methods": ["sgn"],
    })
    out = tmp_path / "dump32_out"
    assert main(["kkt-dump", "--config", cfg, "--out", str(out)]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["nnz"] < 0.2 * stats["n_p"] ** 2


def test_optimize_deterministic_up_to_timing(tmp_path, spring_config):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["optimize", "--config", spring_config, "--out", str(out1)]) == 0
    assert main(["optimize", "--config", spring_config, "--out", str(out2)]) == 0
    for method in ("sgn", "dgn"):
        for col in ("f", "grad_norm", "step_len"):
            c1 = read_csv_column(out1 / f"convergence_{method}.csv", col)
            c2 = read_csv_column(out2 / f"convergence_{method}.csv", col)
            np.testing.assert_array_equal(c1, c2)


def test_optimize_parallel_jobs(tmp_path, spring_config):
    out = tmp_path / "jobs"
    assert main(["optimize", "--config", spring_config, "--out", str(out),
                 "--jobs", "2"]) == 0
    assert (out / "convergence_sgn.csv").exists()
    assert (out / "convergence_dgn.csv").exists()
