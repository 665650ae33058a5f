import numpy as np
import pytest

from sgnopt import (
    CscMatrix,
    DimensionMismatch,
    TripletIndexError,
    TripletMatrix,
    csc_from_triplets,
    read_matrix_market,
    spmv,
    spmv_transpose,
    stack_kkt_blocks,
    write_matrix_market,
)


def random_triplets(rng, rows, cols, density):
    n = max(1, int(rows * cols * density))
    return TripletMatrix(
        rows, cols,
        rng.integers(0, rows, n),
        rng.integers(0, cols, n),
        rng.standard_normal(n),
    )


def test_duplicate_entries_sum():
    t = TripletMatrix.from_entries(2, 2, [(0, 0, 1.0), (0, 0, 2.0)])
    m = csc_from_triplets(t)
    assert m.nnz == 1
    assert m.to_dense()[0, 0] == 3.0


def test_empty_triplets_give_zero_matrix():
    m = csc_from_triplets(TripletMatrix(3, 3))
    assert m.nnz == 0
    assert m.shape == (3, 3)
    np.testing.assert_array_equal(m.to_dense(), np.zeros((3, 3)))


def test_conversion_matches_triplet_matvec_oracle():
    rng = np.random.default_rng(7)
    t = random_triplets(rng, 20, 20, 0.2)
    m = csc_from_triplets(t)
    for _ in range(10):
        v = rng.standard_normal(20)
        expect = t.matvec(v)  # brute-force accumulation
        got = spmv(m, v)
        assert np.linalg.norm(got - expect) <= 1e-14 * max(1.0, np.linalg.norm(expect))


def test_out_of_bounds_triplet_reports_entry():
    t = TripletMatrix.from_entries(2, 2, [(0, 0, 1.0), (5, 1, 2.0)])
    with pytest.raises(TripletIndexError) as exc:
        csc_from_triplets(t)
    assert exc.value.position == 1
    assert exc.value.row == 5
    assert "(5, 1)" in str(exc.value)


def test_spmv_identity_and_zero():
    eye = CscMatrix.identity(4)
    v = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(spmv(eye, v), v)
    z = CscMatrix.zeros(3, 4)
    np.testing.assert_array_equal(spmv(z, v), np.zeros(3))


def test_spmv_matches_dense_expansion():
    rng = np.random.default_rng(3)
    t = random_triplets(rng, 15, 7, 0.3)
    m = csc_from_triplets(t)
    dense = m.to_dense()
    v = rng.standard_normal(7)
    w = rng.standard_normal(15)
    assert np.linalg.norm(spmv(m, v) - dense @ v) <= 1e-14 * np.linalg.norm(dense @ v)
    assert np.linalg.norm(spmv_transpose(m, w) - dense.T @ w) <= 1e-14 * (
        1 + np.linalg.norm(dense.T @ w))


def test_spmv_transpose_equals_transposed_spmv():
    rng = np.random.default_rng(11)
    m = csc_from_triplets(random_triplets(rng, 12, 9, 0.25))
    for _ in range(5):
        w = rng.standard_normal(12)
        np.testing.assert_allclose(
            spmv_transpose(m, w), spmv(m.transpose(), w), rtol=0, atol=1e-15)


def test_spmv_dimension_mismatch():
    m = CscMatrix.identity(4)
    with pytest.raises(DimensionMismatch):
        spmv(m, np.ones(5))
    with pytest.raises(DimensionMismatch):
        spmv_transpose(m, np.ones(3))


def test_round_trip_preserves_entries_exactly():
    rng = np.random.default_rng(5)
    t = random_triplets(rng, 10, 8, 0.3)
    m = csc_from_triplets(t)
    again = CscMatrix.from_dense(m.to_dense())
    np.testing.assert_array_equal(m.to_dense(), again.to_dense())
    m.validate()
    again.validate()


def test_stack_kkt_blocks_hand_layout():
    a = CscMatrix.identity(2)
    b = CscMatrix.zeros(1, 2)
    c = CscMatrix.zeros(1, 1)
    dcdx = CscMatrix.identity(2)
    dcdp = CscMatrix.from_dense(np.array([[1.0], [1.0]]))
    k = stack_kkt_blocks(a, b, c, dcdx, dcdp).to_dense()
    assert k.shape == (5, 5)
    np.testing.assert_array_equal(k[:2, :2], np.eye(2))
    np.testing.assert_array_equal(k[:2, 3:5], np.eye(2))
    np.testing.assert_array_equal(k[3:5, :2], np.eye(2))
    np.testing.assert_array_equal(k[3:5, 2], np.array([1.0, 1.0]))
    np.testing.assert_array_equal(k[2, 3:5], np.array([1.0, 1.0]))
    np.testing.assert_array_equal(k[3:, 3:], np.zeros((2, 2)))


def test_stack_kkt_blocks_zero_blocks():
    n_x, n_p = 3, 2
    k = stack_kkt_blocks(
        CscMatrix.zeros(n_x, n_x), CscMatrix.zeros(n_p, n_x),
        CscMatrix.zeros(n_p, n_p), CscMatrix.zeros(n_x, n_x),
        CscMatrix.zeros(n_x, n_p))
    assert k.shape == (2 * n_x + n_p, 2 * n_x + n_p)
    np.testing.assert_array_equal(k.to_dense(), np.zeros((8, 8)))


def test_stack_kkt_blocks_matches_dense_concatenation():
    rng = np.random.default_rng(9)
    n_x, n_p = 8, 3
    a_d = rng.standard_normal((n_x, n_x))
    a_d = a_d + a_d.T
    c_d = rng.standard_normal((n_p, n_p))
    c_d = c_d + c_d.T
    b_d = rng.standard_normal((n_p, n_x))
    jx = rng.standard_normal((n_x, n_x))
    jp = rng.standard_normal((n_x, n_p))
    k = stack_kkt_blocks(
        CscMatrix.from_dense(a_d), CscMatrix.from_dense(b_d),
        CscMatrix.from_dense(c_d), CscMatrix.from_dense(jx),
        CscMatrix.from_dense(jp))
    expect = np.block([
        [a_d, b_d.T, jx.T],
        [b_d, c_d, jp.T],
        [jx, jp, np.zeros((n_x, n_x))],
    ])
    np.testing.assert_array_equal(k.to_dense(), expect)
    # symmetric whenever A and C are symmetric
    np.testing.assert_allclose(k.to_dense(), k.to_dense().T, atol=1e-15)


def test_stack_kkt_blocks_dimension_errors():
    with pytest.raises(DimensionMismatch):
        stack_kkt_blocks(
            CscMatrix.identity(2), CscMatrix.zeros(1, 2), CscMatrix.zeros(1, 1),
            CscMatrix.zeros(3, 2), CscMatrix.zeros(3, 1))  # n_c != n_x
    with pytest.raises(DimensionMismatch):
        stack_kkt_blocks(
            CscMatrix.identity(2), CscMatrix.zeros(1, 3), CscMatrix.zeros(1, 1),
            CscMatrix.identity(2), CscMatrix.zeros(2, 1))  # B wrong shape


def test_matrix_market_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    m = csc_from_triplets(random_triplets(rng, 6, 5, 0.4))
    path = tmp_path / "m.mtx"
    write_matrix_market(m, path)
    header = path.read_text().splitlines()[0]
    assert header == "%%MatrixMarket matrix coordinate real general"
    back = read_matrix_market(path)
    np.testing.assert_array_equal(m.to_dense(), back.to_dense())
