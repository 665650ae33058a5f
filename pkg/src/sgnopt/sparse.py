"""Sparse and dense matrix containers plus the block-stacking and I/O helpers.

Dense matrices and vectors are plain ``numpy.ndarray`` objects throughout the
package; the containers here exist to pin down the assembly (triplet) and
compressed-column storage that every Jacobian and saddle-point block uses.
All containers are immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, TripletIndexError


@dataclass
class TripletMatrix:
    """Sparse matrix in assembly form: parallel (row, col, value) arrays.

    Duplicate (row, col) pairs are allowed and sum on conversion, matching
    finite-element style assembly.
    """

    rows: int
    cols: int
    row_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    col_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))

    def __post_init__(self):
        self.row_idx = np.asarray(self.row_idx, dtype=np.int64).ravel()
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (self.row_idx.size == self.col_idx.size == self.values.size):
            raise DimensionMismatch("triplet arrays must have equal length")

    @classmethod
    def from_entries(cls, rows: int, cols: int, entries) -> "TripletMatrix":
        """Build from an iterable of (row, col, value) tuples."""
        entries = list(entries)
        if not entries:
            return cls(rows, cols)
        r, c, v = zip(*entries)
        return cls(rows, cols, np.array(r), np.array(c), np.array(v))

    @property
    def nnz(self) -> int:
        return self.values.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Accumulate the matrix-vector product entry by entry (oracle-grade)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.cols,):
            raise DimensionMismatch(f"expected vector of length {self.cols}")
        out = np.zeros(self.rows)
        np.add.at(out, self.row_idx, self.values * v[self.col_idx])
        return out


class CscMatrix:
    """Compressed sparse column matrix with sorted, unique row indices."""

    __slots__ = ("rows", "cols", "indptr", "indices", "data", "_scipy")

    def __init__(self, rows: int, cols: int, indptr, indices, data):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self._scipy = None
        if self.indptr.size != self.cols + 1:
            raise DimensionMismatch("column pointer array must have cols+1 entries")
        if self.indices.size != self.data.size or self.indices.size != self.indptr[-1]:
            raise DimensionMismatch("row index / value arrays inconsistent with nnz")

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_scipy(cls, m) -> "CscMatrix":
        m = sp.csc_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        out = cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)
        out._scipy = m
        return out

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "CscMatrix":
        return cls.from_scipy(sp.csc_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "CscMatrix":
        return cls.from_scipy(sp.identity(n, format="csc"))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "CscMatrix":
        return cls.from_scipy(sp.csc_matrix((rows, cols)))

    def to_scipy(self) -> sp.csc_matrix:
        if self._scipy is None:
            self._scipy = sp.csc_matrix(
                (self.data, self.indices, self.indptr), shape=(self.rows, self.cols)
            )
        return self._scipy

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "CscMatrix":
        return CscMatrix.from_scipy(self.to_scipy().T)

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def validate(self) -> None:
        """Check the storage invariants (monotone pointers, sorted unique rows)."""
        if np.any(np.diff(self.indptr) < 0):
            raise DimensionMismatch("column pointers must be non-decreasing")
        for j in range(self.cols):
            rows = self.indices[self.indptr[j]:self.indptr[j + 1]]
            if rows.size and (np.any(np.diff(rows) <= 0) or rows[0] < 0 or rows[-1] >= self.rows):
                raise DimensionMismatch(f"column {j} has unsorted or out-of-range rows")

    def __repr__(self) -> str:
        return f"CscMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def csc_from_triplets(t: TripletMatrix) -> CscMatrix:
    """Convert assembly triplets to compressed-column form, summing duplicates."""
    if t.nnz:
        bad = (t.row_idx < 0) | (t.row_idx >= t.rows) | (t.col_idx < 0) | (t.col_idx >= t.cols)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise TripletIndexError(k, int(t.row_idx[k]), int(t.col_idx[k]), t.rows, t.cols)
    coo = sp.coo_matrix((t.values, (t.row_idx, t.col_idx)), shape=(t.rows, t.cols))
    return CscMatrix.from_scipy(coo.tocsc())


def spmv(m: CscMatrix, v: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product ``m @ v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.cols,):
        raise DimensionMismatch(f"matrix is {m.rows}x{m.cols}, vector has length {v.size}")
    return m.to_scipy() @ v


def spmv_transpose(m: CscMatrix, v: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product ``m.T @ v`` without materializing the transpose."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.rows,):
        raise DimensionMismatch(f"matrix is {m.rows}x{m.cols}, vector has length {v.size}")
    return m.to_scipy().T @ v


def stack_kkt_blocks(A: CscMatrix, B: CscMatrix, C: CscMatrix,
                     dcdx: CscMatrix, dcdp: CscMatrix) -> CscMatrix:
    """Assemble the symmetric saddle-point matrix

        [[A,    B^T,  dcdx^T],
         [B,    C,    dcdp^T],
         [dcdx, dcdp, 0     ]]

    of dimension 2*n_x + n_p.  Requires as many constraints as states.
    """
    n_x, n_p, n_c = A.rows, C.rows, dcdx.rows
    if A.cols != n_x:
        raise DimensionMismatch("A must be square")
    if C.cols != n_p:
        raise DimensionMismatch("C must be square")
    if B.shape != (n_p, n_x):
        raise DimensionMismatch(f"B must be {n_p}x{n_x}, got {B.shape}")
    if n_c != n_x:
        raise DimensionMismatch(f"need n_c == n_x, got {n_c} constraints for {n_x} states")
    if dcdx.cols != n_x or dcdp.shape != (n_c, n_p):
        raise DimensionMismatch("constraint Jacobian shapes inconsistent with blocks")
    a, b, c = A.to_scipy(), B.to_scipy(), C.to_scipy()
    jx, jp = dcdx.to_scipy(), dcdp.to_scipy()
    k = sp.bmat(
        [[a, b.T, jx.T],
         [b, c, jp.T],
         [jx, jp, None]],
        format="csc",
    )
    return CscMatrix.from_scipy(k)


_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def write_matrix_market(m: CscMatrix, path) -> None:
    """Write the matrix in 1-based MatrixMarket coordinate format."""
    coo = m.to_scipy().tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_MM_HEADER + "\n")
        fh.write(f"{m.rows} {m.cols} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix_market(path) -> CscMatrix:
    """Read a matrix written by :func:`write_matrix_market`."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("%%MatrixMarket matrix coordinate real"):
            raise ValueError(f"unsupported MatrixMarket header: {header!r}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        rows, cols, nnz = (int(tok) for tok in line.split())
        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            ri, ci, vi = fh.readline().split()
            r[k], c[k], v[k] = int(ri) - 1, int(ci) - 1, float(vi)
    return csc_from_triplets(TripletMatrix(rows, cols, r, c, v))
