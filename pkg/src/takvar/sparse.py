"""Sparse storage and sparsity-pattern calculus.

Matrices are kept in compressed-column form with *explicit* entries: a stored
value may be exactly zero and still counts as part of the structure. Pattern
algebra (sum, product, containment) always acts on the structural entries, so
a sum or product whose values happen to cancel still yields a structural
nonzero.

Indices are 0-based throughout; Matrix Market I/O converts to 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray

from takvar import _kernels

__all__ = [
    "SparsePattern",
    "SparseMatrix",
    "Permutation",
    "ones",
    "pattern_add",
    "pattern_mul",
    "pattern_geq",
    "pattern_difference",
    "gram_pattern",
    "rcm_ordering",
    "permute_symmetric",
    "bandwidth",
    "NegativeEntryError",
]


class NegativeEntryError(ValueError):
    """Raised when a matrix required to be nonnegative has a negative entry."""


def _canonical(
    rows: NDArray, cols: NDArray, vals: NDArray | None, shape: tuple[int, int]
) -> tuple[NDArray, NDArray, NDArray | None]:
    """Sort triplets column-major and merge duplicates (values are summed).

    Merging keeps the entry even when the summed value is zero.
    """
    nrows, ncols = shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size and (
        rows.min() < 0 or cols.min() < 0 or rows.max() >= nrows or cols.max() >= ncols
    ):
        raise IndexError(f"entry index out of bounds for shape {shape}")
    keys = cols * nrows + rows
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    uniq, start = np.unique(keys, return_index=True)
    if vals is not None:
        vals = np.asarray(vals, dtype=np.float64)[order]
        vals = np.add.reduceat(vals, start) if vals.size else vals
    indices = (uniq % nrows).astype(np.int64) if nrows else uniq
    colidx = (uniq // nrows).astype(np.int64) if nrows else uniq
    indptr = np.zeros(ncols + 1, dtype=np.int64)
    np.add.at(indptr, colidx + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, indices, vals


def _keys(indptr: NDArray, indices: NDArray, nrows: int) -> NDArray:
    cols = np.repeat(np.arange(indptr.size - 1, dtype=np.int64), np.diff(indptr))
    return cols * nrows + indices


@dataclass(frozen=True, eq=False)
class SparsePattern:
    """Binary sparsity structure in compressed-column layout."""

    shape: tuple[int, int]
    indptr: NDArray[np.int64]
    indices: NDArray[np.int64]

    def __post_init__(self) -> None:
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[tuple[int, int]], shape: tuple[int, int]
    ) -> "SparsePattern":
        pairs = list(pairs)
        if pairs:
            rows, cols = (np.array(x, dtype=np.int64) for x in zip(*pairs))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
        indptr, indices, _ = _canonical(rows, cols, None, shape)
        return cls(tuple(shape), indptr, indices)

    @classmethod
    def from_dense(cls, mask: ArrayLike) -> "SparsePattern":
        mask = np.asarray(mask, dtype=bool)
        cols, rows = np.nonzero(mask.T)
        indptr, indices, _ = _canonical(rows, cols, None, mask.shape)
        return cls(mask.shape, indptr, indices)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparsePattern":
        coo = m.tocoo()
        indptr, indices, _ = _canonical(coo.row, coo.col, None, coo.shape)
        return cls(tuple(coo.shape), indptr, indices)

    @classmethod
    def identity(cls, n: int) -> "SparsePattern":
        idx = np.arange(n, dtype=np.int64)
        return cls((n, n), np.arange(n + 1, dtype=np.int64), idx)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def keys(self) -> NDArray[np.int64]:
        """Column-major linear keys ``col * nrows + row``, sorted ascending."""
        return _keys(self.indptr, self.indices, self.shape[0])

    def entries(self) -> set[tuple[int, int]]:
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self.indptr))
        return set(zip(self.indices.tolist(), cols.tolist()))

    def to_dense(self) -> NDArray[np.bool_]:
        out = np.zeros(self.shape, dtype=bool)
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self.indptr))
        out[self.indices, cols] = True
        return out

    def to_scipy(self) -> sp.csc_matrix:
        """Indicator matrix with value 1 on every entry."""
        return sp.csc_matrix(
            (np.ones(self.nnz), self.indices.copy(), self.indptr.copy()), shape=self.shape
        )

    @property
    def T(self) -> "SparsePattern":
        return SparsePattern.from_scipy(self.to_scipy().T)

    def is_symmetric(self) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        return self._flags[0]

    def has_full_diagonal(self) -> bool:
        if self.shape[0] != self.shape[1]:
            n = min(self.shape)
            diag = np.arange(n, dtype=np.int64) * self.shape[0] + np.arange(n)
            return bool(np.isin(diag, self.keys, assume_unique=True).all())
        return self._flags[1]

    @cached_property
    def _flags(self) -> tuple[bool, bool]:
        sym, diag = _kernels.pattern_flags(self.shape[0], self.indptr, self.indices)
        return bool(sym), bool(diag)

    def lower(self) -> "SparsePattern":
        """Lower triangle including the diagonal."""
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self.indptr))
        keep = self.indices >= cols
        indptr, indices, _ = _canonical(self.indices[keep], cols[keep], None, self.shape)
        return SparsePattern(self.shape, indptr, indices)

    def symmetric_closure(self) -> "SparsePattern":
        return pattern_add(self, self.T)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparsePattern):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.keys, other.keys)

    def __repr__(self) -> str:
        return f"SparsePattern(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real compressed-column matrix; explicit zero entries are kept.

    Build instances through the classmethods, which sort entries and merge
    duplicates.
    """

    shape: tuple[int, int]
    indptr: NDArray[np.int64]
    indices: NDArray[np.int64]
    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.data.size != self.indices.size:
            raise ValueError("data and indices must have equal length")
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    @classmethod
    def from_triplets(
        cls, rows: ArrayLike, cols: ArrayLike, vals: ArrayLike, shape: tuple[int, int]
    ) -> "SparseMatrix":
        indptr, indices, data = _canonical(
            np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=np.float64), shape
        )
        return cls((int(shape[0]), int(shape[1])), indptr, indices, data)

    @classmethod
    def from_dense(cls, a: ArrayLike) -> "SparseMatrix":
        """Stores the nonzero values of a dense array (no structural zeros)."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        cols, rows = np.nonzero(a.T)
        return cls.from_triplets(rows, cols, a[rows, cols], a.shape)

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparseMatrix":
        coo = m.tocoo()
        return cls.from_triplets(coo.row, coo.col, coo.data, coo.shape)

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "SparseMatrix":
        return cls.diag(np.full(n, scale, dtype=np.float64))

    @classmethod
    def diag(cls, values: ArrayLike) -> "SparseMatrix":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        return cls(
            (n, n), np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64), values.copy()
        )

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "SparseMatrix":
        empty = np.zeros(0, dtype=np.int64)
        return cls.from_triplets(empty, empty, np.zeros(0), shape)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def pattern(self) -> SparsePattern:
        """Structural pattern: every explicit entry, whatever its value."""
        return SparsePattern(self.shape, self.indptr.copy(), self.indices.copy())

    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix(
            (self.data.copy(), self.indices.copy(), self.indptr.copy()), shape=self.shape
        )

    def to_dense(self) -> NDArray[np.float64]:
        out = np.zeros(self.shape)
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self.indptr))
        out[self.indices, cols] = self.data
        return out

    def triplets(self) -> tuple[NDArray, NDArray, NDArray]:
        cols = np.repeat(np.arange(self.shape[1], dtype=np.int64), np.diff(self.indptr))
        return self.indices.copy(), cols, self.data.copy()

    def scale(self, c: float) -> "SparseMatrix":
        return SparseMatrix(self.shape, self.indptr, self.indices, self.data * c)

    def diagonal(self) -> NDArray[np.float64]:
        rows, cols, vals = self.triplets()
        out = np.zeros(min(self.shape))
        on = rows == cols
        out[rows[on]] = vals[on]
        return out

    def is_diagonal(self) -> bool:
        rows, cols, _ = self.triplets()
        return bool(np.all(rows == cols))

    def is_symmetric(self) -> bool:
        """Structure and values symmetric (bitwise equality of values)."""
        if self.shape[0] != self.shape[1]:
            return False
        t = self.T
        return bool(
            np.array_equal(self.indptr, t.indptr)
            and np.array_equal(self.indices, t.indices)
            and np.array_equal(self.data, t.data)
        )

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.data >= 0))

    def row_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.indices, minlength=self.shape[0])

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def with_pattern(values: sp.spmatrix, pattern: SparsePattern) -> SparseMatrix:
    """Place the entries of ``values`` onto a (larger) structural pattern.

    Positions of ``pattern`` without a stored value in ``values`` become
    explicit zeros. ``values`` must be structurally contained in ``pattern``.
    """
    coo = values.tocoo()
    target = pattern.keys
    vkeys = coo.col.astype(np.int64) * pattern.shape[0] + coo.row
    pos = np.searchsorted(target, vkeys)
    if vkeys.size and (pos.max() >= target.size or not np.array_equal(target[pos], vkeys)):
        raise ValueError("values are not contained in the target pattern")
    data = np.zeros(pattern.nnz)
    np.add.at(data, pos, coo.data)
    return SparseMatrix(pattern.shape, pattern.indptr.copy(), pattern.indices.copy(), data)


@dataclass(frozen=True, eq=False)
class Permutation:
    """Symmetric reordering: new index ``i`` holds old index ``perm[i]``."""

    perm: NDArray[np.int64]
    pinv: NDArray[np.int64]

    def __post_init__(self) -> None:
        n = self.perm.size
        if self.pinv.size != n or not np.array_equal(self.pinv[self.perm], np.arange(n)):
            raise ValueError("not a permutation of 0..n-1, or perm and pinv are not mutually inverse")
        self.perm.setflags(write=False)
        self.pinv.setflags(write=False)

    @classmethod
    def from_array(cls, perm: ArrayLike) -> "Permutation":
        perm = np.asarray(perm, dtype=np.int64).copy()
        n = perm.size
        if n and (perm.min() < 0 or perm.max() >= n):
            raise ValueError("not a permutation of 0..n-1")
        pinv = np.empty(n, dtype=np.int64)
        pinv[perm] = np.arange(n)
        return cls(perm, pinv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls.from_array(np.arange(n))

    @property
    def n(self) -> int:
        return int(self.perm.size)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.perm, np.arange(self.n)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.perm, other.perm)

    def __repr__(self) -> str:
        return f"Permutation(n={self.n})"


def ones(m: SparseMatrix, structural: bool = False) -> SparsePattern:
    """Sparsity pattern of ``m``.

    By default only stored entries with a nonzero value are reported. With
    ``structural=True`` every explicit entry is reported, including stored
    zeros.
    """
    if structural:
        return m.pattern()
    rows, cols, vals = m.triplets()
    keep = vals != 0
    indptr, indices, _ = _canonical(rows[keep], cols[keep], None, m.shape)
    return SparsePattern(m.shape, indptr, indices)


def _as_pattern(p: SparsePattern | SparseMatrix) -> SparsePattern:
    return p.pattern() if isinstance(p, SparseMatrix) else p


def pattern_add(*patterns: SparsePattern | SparseMatrix) -> SparsePattern:
    """Union of structural entries (a computed sum never cancels)."""
    pats = [_as_pattern(p) for p in patterns]
    shape = pats[0].shape
    for p in pats[1:]:
        if p.shape != shape:
            raise ValueError(f"dimension mismatch: {p.shape} vs {shape}")
    keys = np.unique(np.concatenate([p.keys for p in pats]))
    nrows, ncols = shape
    indptr = np.zeros(ncols + 1, dtype=np.int64)
    if keys.size:
        np.add.at(indptr, keys // nrows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return SparsePattern(shape, indptr, (keys % nrows if nrows else keys).astype(np.int64))


def pattern_mul(*patterns: SparsePattern | SparseMatrix) -> SparsePattern:
    """Boolean product: ``(i, j)`` present iff some path ``i -> k -> ... -> j`` exists."""
    pats = [_as_pattern(p) for p in patterns]
    for left, right in zip(pats, pats[1:]):
        if left.shape[1] != right.shape[0]:
            raise ValueError(f"inner dimension mismatch: {left.shape} x {right.shape}")
    # Products of positive indicator matrices are positive: nothing can cancel.
    acc = pats[0].to_scipy()
    for p in pats[1:]:
        acc = acc @ p.to_scipy()
        acc.data[:] = 1.0
    return SparsePattern.from_scipy(acc)


def pattern_difference(p: SparsePattern, q: SparsePattern) -> list[tuple[int, int]]:
    """Entries of ``p`` that are absent from ``q``, as (row, col) pairs."""
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    missing = np.setdiff1d(p.keys, q.keys, assume_unique=True)
    nrows = p.shape[0]
    return [(int(k % nrows), int(k // nrows)) for k in missing]


def pattern_geq(
    p1: SparsePattern | SparseMatrix, p2: SparsePattern | SparseMatrix
) -> tuple[bool, tuple[int, int] | None]:
    """Elementwise ``p1 >= p2``; on failure also returns one violating entry."""
    p1, p2 = _as_pattern(p1), _as_pattern(p2)
    if p1.shape != p2.shape:
        raise ValueError(f"dimension mismatch: {p1.shape} vs {p2.shape}")
    missing = np.setdiff1d(p2.keys, p1.keys, assume_unique=True)
    if missing.size == 0:
        return True, None
    k = int(missing[0])
    return False, (k % p1.shape[0], k // p1.shape[0])


def check_nonnegative(m: SparseMatrix, name: str = "matrix") -> None:
    if m.nnz and m.data.min() < 0:
        idx = int(np.argmin(m.data))
        rows, cols, _ = m.triplets()
        raise NegativeEntryError(
            f"{name} has a negative entry {m.data[idx]!r} at ({rows[idx]}, {cols[idx]})"
        )


def gram_pattern(a: SparseMatrix, structural: bool = True) -> SparsePattern:
    """Pattern of ``a.T @ a`` for nonnegative ``a``.

    Computed as the boolean product of the transposed pattern with the
    pattern, which is exact because nonnegative terms cannot cancel.
    """
    check_nonnegative(a, "A")
    p = ones(a, structural=structural)
    return pattern_mul(p.T, p)


def bandwidth(p: SparsePattern | SparseMatrix) -> int:
    """Largest ``|i - j|`` over the entries."""
    p = _as_pattern(p)
    if p.nnz == 0:
        return 0
    cols = np.repeat(np.arange(p.shape[1]), np.diff(p.indptr))
    return int(np.abs(p.indices - cols).max())


def rcm_ordering(p: SparsePattern | SparseMatrix) -> Permutation:
    """Reverse Cuthill-McKee ordering of a symmetric pattern.

    Each connected component starts from a pseudo-peripheral vertex found
    from the lowest-index minimum-degree vertex; neighbours are visited in
    order of (degree, index). If the result has a larger bandwidth than the
    natural order, the identity is returned instead.
    """
    p = _as_pattern(p)
    if not p.is_symmetric():
        raise ValueError("RCM ordering requires a symmetric pattern")
    n = p.shape[0]
    result = Permutation.from_array(_kernels.rcm(n, p.indptr, p.indices))
    natural = _kernels.permuted_bandwidth(n, p.indptr, p.indices, np.arange(n))
    if _kernels.permuted_bandwidth(n, p.indptr, p.indices, result.pinv) > natural:
        return Permutation.identity(n)
    return result


def permute_pattern(p: SparsePattern, perm: Permutation) -> SparsePattern:
    if p.shape != (perm.n, perm.n):
        raise ValueError(f"dimension mismatch: {p.shape} vs permutation of size {perm.n}")
    cols = np.repeat(np.arange(p.shape[1]), np.diff(p.indptr))
    indptr, indices, _ = _canonical(perm.pinv[p.indices], perm.pinv[cols], None, p.shape)
    return SparsePattern(p.shape, indptr, indices)


def permute_symmetric(m: SparseMatrix, perm: Permutation) -> SparseMatrix:
    """``P M P^T`` where row/column ``i`` of the result is old index ``perm[i]``."""
    if m.shape[0] != m.shape[1] or m.shape[0] != perm.n:
        raise ValueError(f"dimension mismatch: {m.shape} vs permutation of size {perm.n}")
    rows, cols, vals = m.triplets()
    return SparseMatrix.from_triplets(perm.pinv[rows], perm.pinv[cols], vals, m.shape)


def permute_columns(m: SparseMatrix, perm: Permutation) -> SparseMatrix:
    """``M P^T``: column ``j`` of the result is old column ``perm[j]``."""
    if m.shape[1] != perm.n:
        raise ValueError(f"dimension mismatch: {m.shape} vs permutation of size {perm.n}")
    rows, cols, vals = m.triplets()
    return SparseMatrix.from_triplets(rows, perm.pinv[cols], vals, m.shape)


def hstack(blocks: list[SparseMatrix]) -> SparseMatrix:
    nrows = blocks[0].shape[0]
    rows, cols, vals, off = [], [], [], 0
    for b in blocks:
        if b.shape[0] != nrows:
            raise ValueError("row count mismatch in hstack")
        r, c, v = b.triplets()
        rows.append(r)
        cols.append(c + off)
        vals.append(v)
        off += b.shape[1]
    return SparseMatrix.from_triplets(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (nrows, off)
    )


def block_diag(blocks: list[SparseMatrix]) -> SparseMatrix:
    rows, cols, vals, ro, co = [], [], [], 0, 0
    for b in blocks:
        r, c, v = b.triplets()
        rows.append(r + ro)
        cols.append(c + co)
        vals.append(v)
        ro += b.shape[0]
        co += b.shape[1]
    return SparseMatrix.from_triplets(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (ro, co)
    )
