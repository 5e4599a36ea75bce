"""Complex sparse (CSR) and dense matrices used throughout the package.

All hot loops in the propagation engine are row-oriented matrix-vector
products, so compressed sparse row storage is the native format.  Matrices
are immutable after construction; exact zeros are dropped at construction
time so that the stored-element count is an honest measure of memory and
of per-row work in the rounding-error model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SparseMatrixError",
    "CsrMatrix",
    "DenseMatrix",
    "build_csr",
    "from_dense",
    "identity_csr",
    "matvec",
    "one_norm",
    "inf_norm",
    "max_row_nnz",
    "linear_combine",
    "aux_embed",
    "is_hermitian",
    "is_anti_hermitian",
    "save_matrix",
    "load_matrix",
    "save_vector",
    "load_vector",
]


class SparseMatrixError(ValueError):
    """Raised on malformed construction input or shape mismatch."""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Immutable complex matrix in compressed sparse row format.

    Invariants (established by :func:`build_csr`):

    * ``row_offsets`` is non-decreasing, has length ``n_rows + 1`` and its
      last entry equals ``len(col_indices) == len(values)``;
    * column indices are strictly increasing within each row;
    * all stored values are finite and none is exactly zero.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        """Number of stored elements."""
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def matvec(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if v.shape != (self.n_cols,):
            raise SparseMatrixError(
                f"matvec dimension mismatch: matrix is {self.n_rows}x{self.n_cols}, "
                f"vector has shape {v.shape}"
            )
        if out is None:
            out = np.empty(self.n_rows, dtype=np.complex128)
        if self.nnz == 0:
            out[:] = 0.0
            return out
        products = self.values * v[self.col_indices]
        starts = self.row_offsets[:-1]
        # reduceat misbehaves on empty segments: it returns products[start]
        # instead of 0 and cannot take start == len(products).
        np.add.reduceat(products, np.minimum(starts, products.size - 1), out=out)
        empty = starts == self.row_offsets[1:]
        if empty.any():
            out[empty] = 0.0
        return out

    def col_abs_sums(self) -> np.ndarray:
        return np.bincount(self.col_indices, weights=np.abs(self.values), minlength=self.n_cols)

    def row_abs_sums(self) -> np.ndarray:
        sums = np.zeros(self.n_rows)
        if self.nnz:
            sums = np.add.reduceat(
                np.abs(self.values), np.minimum(self.row_offsets[:-1], self.nnz - 1)
            )
            sums[self.row_offsets[:-1] == self.row_offsets[1:]] = 0.0
        return sums

    def row_nnz_counts(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def one_norm(self) -> float:
        """Maximum absolute column sum."""
        if self.nnz == 0:
            return 0.0
        return float(self.col_abs_sums().max())

    def inf_norm(self) -> float:
        """Maximum absolute row sum."""
        if self.nnz == 0:
            return 0.0
        return float(self.row_abs_sums().max())

    def max_row_nnz(self) -> int:
        """Largest per-row count of stored elements."""
        if self.n_rows == 0:
            return 0
        return int(self.row_nnz_counts().max())

    def scaled(self, factor: complex) -> "CsrMatrix":
        """Return ``factor * self`` with the same sparsity pattern."""
        if factor == 0:
            return build_csr([], self.n_rows, self.n_cols)
        return CsrMatrix(
            self.n_rows,
            self.n_cols,
            self.row_offsets,
            self.col_indices,
            self.values * complex(factor),
        )

    def conj_transpose(self) -> "CsrMatrix":
        rows, cols, vals = self.triplets()
        return build_csr_arrays(cols, rows, np.conj(vals), self.n_cols, self.n_rows)

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coordinate view ``(rows, cols, values)`` of the stored elements."""
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        return rows, self.col_indices.copy(), self.values.copy()

    def to_dense(self) -> np.ndarray:
        """Column-major dense copy (used by oracles and the eigensolver backend)."""
        dense = np.zeros((self.n_rows, self.n_cols), dtype=np.complex128, order="F")
        rows, cols, vals = self.triplets()
        dense[rows, cols] = vals
        return dense


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Dense complex matrix with the same operation surface as :class:`CsrMatrix`.

    Used for the dense-storage benchmark mode, where every one of the
    ``n_rows * n_cols`` entries counts as stored.
    """

    array: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asfortranarray(np.asarray(self.array, dtype=np.complex128))
        if arr.ndim != 2:
            raise SparseMatrixError("DenseMatrix expects a 2-d array")
        if not np.isfinite(arr).all():
            raise SparseMatrixError("matrix entries must be finite")
        object.__setattr__(self, "array", arr)

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "DenseMatrix":
        """Wrap an internally produced complex array without re-validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "array", arr)
        return obj

    @property
    def n_rows(self) -> int:
        return self.array.shape[0]

    @property
    def n_cols(self) -> int:
        return self.array.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.array.shape

    @property
    def nnz(self) -> int:
        return self.array.size

    def matvec(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if v.shape != (self.n_cols,):
            raise SparseMatrixError("matvec dimension mismatch")
        if out is None:
            return self.array @ v
        np.matmul(self.array, v, out=out)
        return out

    def col_abs_sums(self) -> np.ndarray:
        return np.abs(self.array).sum(axis=0)

    def row_abs_sums(self) -> np.ndarray:
        return np.abs(self.array).sum(axis=1)

    def row_nnz_counts(self) -> np.ndarray:
        return np.full(self.n_rows, self.n_cols, dtype=np.int64)

    def one_norm(self) -> float:
        if self.array.size == 0:
            return 0.0
        return float(np.abs(self.array).sum(axis=0).max())

    def inf_norm(self) -> float:
        if self.array.size == 0:
            return 0.0
        return float(np.abs(self.array).sum(axis=1).max())

    def max_row_nnz(self) -> int:
        # Every entry is stored, so each row dot product touches n_cols elements.
        return self.n_cols

    def scaled(self, factor: complex) -> "DenseMatrix":
        return DenseMatrix._trusted(self.array * complex(factor))

    def conj_transpose(self) -> "DenseMatrix":
        return DenseMatrix(self.array.conj().T)

    def to_dense(self) -> np.ndarray:
        return self.array.copy(order="F")


Matrix = CsrMatrix | DenseMatrix


def build_csr_arrays(rows, cols, vals, n_rows: int, n_cols: int) -> CsrMatrix:
    """Build a CSR matrix from coordinate arrays, summing duplicates.

    Entries whose duplicate sum is exactly zero are dropped.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.complex128)
    if not (rows.shape == cols.shape == vals.shape):
        raise SparseMatrixError("rows, cols and values must have equal length")
    if n_rows < 0 or n_cols < 0:
        raise SparseMatrixError("matrix dimensions must be non-negative")
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows:
            raise SparseMatrixError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise SparseMatrixError("column index out of range")
        if not np.isfinite(vals).all():
            raise SparseMatrixError("matrix entries must be finite")

    keys = rows * np.int64(n_cols) + cols
    uniq, inverse = np.unique(keys, return_inverse=True)
    summed = np.zeros(uniq.size, dtype=np.complex128)
    np.add.at(summed, inverse, vals)
    keep = summed != 0
    uniq = uniq[keep]
    summed = summed[keep]

    out_rows = uniq // n_cols
    out_cols = uniq % n_cols
    counts = np.bincount(out_rows, minlength=n_rows)
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CsrMatrix(n_rows, n_cols, offsets, out_cols.astype(np.int64), summed)


def build_csr(triplets, n_rows: int, n_cols: int) -> CsrMatrix:
    """Build a CSR matrix from an iterable of ``(row, col, value)`` triplets."""
    entries = list(triplets)
    if not entries:
        return build_csr_arrays(
            np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.complex128),
            n_rows, n_cols,
        )
    rows, cols, vals = zip(*entries)
    return build_csr_arrays(rows, cols, vals, n_rows, n_cols)


def from_dense(array: np.ndarray) -> CsrMatrix:
    """CSR copy of a dense array, keeping exact nonzeros only."""
    array = np.asarray(array, dtype=np.complex128)
    rows, cols = np.nonzero(array)
    return build_csr_arrays(rows, cols, array[rows, cols], array.shape[0], array.shape[1])


def identity_csr(n: int) -> CsrMatrix:
    idx = np.arange(n, dtype=np.int64)
    return build_csr_arrays(idx, idx, np.ones(n, dtype=np.complex128), n, n)


def matvec(m: Matrix, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    return m.matvec(np.asarray(v, dtype=np.complex128), out=out)


def one_norm(m: Matrix) -> float:
    return m.one_norm()


def inf_norm(m: Matrix) -> float:
    return m.inf_norm()


def max_row_nnz(m: Matrix) -> int:
    return m.max_row_nnz()


def linear_combine(coeffs, mats) -> Matrix:
    """Weighted sum ``sum_i coeffs[i] * mats[i]`` of equally shaped matrices."""
    mats = list(mats)
    coeffs = [complex(c) for c in coeffs]
    if len(coeffs) != len(mats):
        raise SparseMatrixError("need one coefficient per matrix")
    if not mats:
        raise SparseMatrixError("linear_combine of no matrices")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise SparseMatrixError("shape mismatch in linear_combine")

    if any(isinstance(m, DenseMatrix) for m in mats):
        total = np.zeros(shape, dtype=np.complex128, order="F")
        work = np.empty(shape, dtype=np.complex128, order="F")
        for c, m in zip(coeffs, mats):
            if c == 0:
                continue
            source = m.array if isinstance(m, DenseMatrix) else m.to_dense()
            np.multiply(source, c, out=work)
            total += work
        return DenseMatrix._trusted(total)

    rows_all, cols_all, vals_all = [], [], []
    for c, m in zip(coeffs, mats):
        if c == 0 or m.nnz == 0:
            continue
        r, k, v = m.triplets()
        rows_all.append(r)
        cols_all.append(k)
        vals_all.append(c * v)
    if not rows_all:
        return build_csr([], shape[0], shape[1])
    return build_csr_arrays(
        np.concatenate(rows_all), np.concatenate(cols_all), np.concatenate(vals_all),
        shape[0], shape[1],
    )


def aux_embed(h_step: Matrix, h_control: Matrix, dt: float) -> Matrix:
    """Block embedding whose exponential action yields propagator derivatives.

    Returns the ``2d x 2d`` matrix ``[[-i*h_step*dt, -i*h_control*dt],
    [0, -i*h_step*dt]]``.  Applying the exponential of this matrix to a
    stacked vector ``(0, psi)`` produces the derivative of the short-time
    propagator with respect to the control amplitude in the top block and
    the propagated state in the bottom block.
    """
    if h_step.shape != h_control.shape or h_step.n_rows != h_step.n_cols:
        raise SparseMatrixError("aux_embed expects two square matrices of equal dimension")
    d = h_step.n_rows
    scale = -1j * dt
    if isinstance(h_step, DenseMatrix) or isinstance(h_control, DenseMatrix):
        step_arr = h_step.array if isinstance(h_step, DenseMatrix) else h_step.to_dense()
        ctrl_arr = (
            h_control.array if isinstance(h_control, DenseMatrix) else h_control.to_dense()
        )
        embedded = np.zeros((2 * d, 2 * d), dtype=np.complex128, order="F")
        embedded[:d, :d] = scale * step_arr
        embedded[:d, d:] = scale * ctrl_arr
        embedded[d:, d:] = embedded[:d, :d]
        return DenseMatrix._trusted(embedded)
    hr, hc, hv = h_step.triplets()
    cr, cc, cv = h_control.triplets()
    rows = np.concatenate([hr, cr, hr + d])
    cols = np.concatenate([hc, cc + d, hc + d])
    vals = scale * np.concatenate([hv, cv, hv])
    return build_csr_arrays(rows, cols, vals, 2 * d, 2 * d)


def _max_abs_combination(a: Matrix, b_coeff: complex) -> float:
    """max |a + b_coeff * a^dagger| over stored positions of the combination."""
    combined = linear_combine([1.0, b_coeff], [a, a.conj_transpose()])
    if isinstance(combined, DenseMatrix):
        return float(np.abs(combined.array).max()) if combined.array.size else 0.0
    if combined.nnz == 0:
        return 0.0
    return float(np.abs(combined.values).max())


def is_hermitian(m: Matrix, tol: float) -> bool:
    """True when ``max |M - M^dagger|`` does not exceed ``tol``."""
    if m.n_rows != m.n_cols:
        return False
    return _max_abs_combination(m, -1.0) <= tol


def is_anti_hermitian(m: Matrix, tol: float) -> bool:
    """True when ``max |M + M^dagger|`` does not exceed ``tol``."""
    if m.n_rows != m.n_cols:
        return False
    return _max_abs_combination(m, 1.0) <= tol


def save_matrix(path, m: Matrix) -> None:
    """Write a matrix in the line-based text exchange format.

    Header line ``n_rows n_cols nnz`` followed by one ``row col re im``
    line per stored element.
    """
    if isinstance(m, DenseMatrix):
        m = from_dense(m.array)
    rows, cols, vals = m.triplets()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def load_matrix(path) -> CsrMatrix:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise SparseMatrixError(f"{path}: malformed matrix header")
        n_rows, n_cols, nnz = (int(x) for x in header)
        rows = np.empty(nnz, np.int64)
        cols = np.empty(nnz, np.int64)
        vals = np.empty(nnz, np.complex128)
        for i in range(nnz):
            parts = fh.readline().split()
            if len(parts) != 4:
                raise SparseMatrixError(f"{path}: malformed matrix entry on line {i + 2}")
            rows[i] = int(parts[0])
            cols[i] = int(parts[1])
            vals[i] = complex(float(parts[2]), float(parts[3]))
    return build_csr_arrays(rows, cols, vals, n_rows, n_cols)


def save_vector(path, v: np.ndarray) -> None:
    """Write a state vector: header ``dim``, then one ``re im`` line per entry."""
    v = np.asarray(v, dtype=np.complex128)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{v.size}\n")
        for z in v:
            fh.write(f"{z.real:.17g} {z.imag:.17g}\n")


def load_vector(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        dim = int(fh.readline().split()[0])
        out = np.empty(dim, np.complex128)
        for i in range(dim):
            parts = fh.readline().split()
            if len(parts) != 2:
                raise SparseMatrixError(f"{path}: malformed vector entry on line {i + 2}")
            out[i] = complex(float(parts[0]), float(parts[1]))
    return out
