"""Symbolic and numeric sparse Cholesky factorization plus triangular solves.

The factor pattern is computed from the elimination tree: row ``k`` of the
factor is the union of tree paths from the entries of row ``k`` of the
matrix's upper triangle. This is the same set as the one defined through
graph separation (``L[j, i]`` is structurally nonzero iff ``i`` and ``j`` are
joined by a path whose interior vertices all precede ``i``), but computed in
time proportional to the number of factor entries.

Values are stored at *every* position of the symbolic pattern, including
positions where the numeric value cancels to zero.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from takvar import _kernels
from takvar.sparse import (
    Permutation,
    SparseMatrix,
    SparsePattern,
    rcm_ordering,
)

__all__ = [
    "SymbolicFactor",
    "NumericFactor",
    "NotPositiveDefiniteError",
    "symbolic_cholesky",
    "numeric_cholesky",
    "cholesky",
    "make_ordering",
    "forward_solve",
    "backward_solve",
    "save_factor",
    "load_factor",
]

PIVOT_TOL = 1e-300
_BLOCK = 256


class NotPositiveDefiniteError(ValueError):
    """A non-positive pivot was met during numeric factorization."""


def default_threads() -> int:
    """Thread cap from ``TAKVAR_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TAKVAR_THREADS", "1")))
    except ValueError:
        return 1


def _permuted_upper(indptr, indices, data, perm: Permutation):
    """Upper triangle of the symmetrically permuted matrix (unsorted columns)."""
    return _kernels.symperm_upper(perm.n, indptr, indices, data, perm.pinv)


@dataclass(frozen=True, eq=False)
class SymbolicFactor:
    """Ordering, elimination tree and lower-triangular factor pattern.

    The pattern is held in the permuted index space. Each column lists its
    diagonal first, then the strictly-lower rows in increasing order.
    """

    permutation: Permutation
    etree: NDArray[np.int64]
    Ls_pattern: SparsePattern

    @property
    def n(self) -> int:
        return self.permutation.n

    @property
    def nnz(self) -> int:
        return self.Ls_pattern.nnz

    @property
    def bandwidth(self) -> int:
        p = self.Ls_pattern
        cols = np.repeat(np.arange(p.shape[1]), np.diff(p.indptr))
        return int((p.indices - cols).max()) if p.nnz else 0


@dataclass(frozen=True, eq=False)
class NumericFactor:
    """Cholesky factor values aligned to ``symbolic.Ls_pattern``.

    ``inv_diag`` holds the reciprocals of the diagonal, produced during
    factorization and reused by the solves and the inverse-subset sweep.
    """

    symbolic: SymbolicFactor
    values: NDArray[np.float64]
    inv_diag: NDArray[np.float64]
    op_count: int = 0
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.values.size != self.symbolic.nnz:
            raise ValueError("factor values do not match the symbolic pattern")
        self.values.setflags(write=False)
        self.inv_diag.setflags(write=False)
        pat = self.symbolic.Ls_pattern
        object.__setattr__(self, "_arrays", (pat.indptr, pat.indices, self.values, self.inv_diag))

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def permutation(self) -> Permutation:
        return self.symbolic.permutation

    @property
    def bandwidth(self) -> int:
        return self.symbolic.bandwidth

    def to_matrix(self) -> SparseMatrix:
        """L as a sparse matrix (permuted index space, structural zeros kept)."""
        pat = self.symbolic.Ls_pattern
        return SparseMatrix(pat.shape, pat.indptr, pat.indices, self.values.copy())

    def diagonal(self) -> NDArray[np.float64]:
        return self.values[self.symbolic.Ls_pattern.indptr[:-1]].copy()


def make_ordering(pattern: SparsePattern, ordering: str = "rcm") -> Permutation:
    if ordering == "rcm":
        return rcm_ordering(pattern)
    if ordering == "natural":
        return Permutation.identity(pattern.shape[0])
    raise ValueError(f"unknown ordering {ordering!r}; use 'rcm' or 'natural'")


def symbolic_cholesky(pattern: SparsePattern, perm: Permutation | None = None) -> SymbolicFactor:
    """Factor pattern of ``P pattern P^T`` for any SPD matrix with that pattern."""
    n = pattern.shape[0]
    if pattern.shape[0] != pattern.shape[1] or not pattern.is_symmetric():
        raise ValueError("symbolic Cholesky requires a symmetric pattern")
    if not pattern.has_full_diagonal():
        raise ValueError("symbolic Cholesky requires a full diagonal")
    perm = Permutation.identity(n) if perm is None else perm
    if perm.n != n:
        raise ValueError(f"dimension mismatch: pattern of order {n}, permutation of size {perm.n}")
    cp, ci, _ = _permuted_upper(pattern.indptr, pattern.indices, np.zeros(pattern.nnz), perm)
    parent = _kernels.etree(n, cp, ci)
    lp, li = _kernels.symbolic(n, cp, ci, parent)
    return SymbolicFactor(perm, parent, SparsePattern((n, n), lp, li))


def numeric_cholesky(p: SparseMatrix, sym: SymbolicFactor) -> NumericFactor:
    """Up-looking Cholesky of ``P p P^T`` on the given symbolic pattern."""
    n = sym.n
    if p.shape != (n, n):
        raise ValueError(f"dimension mismatch: {p.shape} vs factor of order {n}")
    cp, ci, cx = _permuted_upper(p.indptr, p.indices, p.data, sym.permutation)
    lp, li = sym.Ls_pattern.indptr, sym.Ls_pattern.indices
    lx, inv_diag, status, ops = _kernels.cholesky(n, cp, ci, cx, sym.etree, lp, li, PIVOT_TOL)
    if status <= -2:
        raise ValueError(
            f"matrix pattern does not match the symbolic factor (permuted row {-2 - status})"
        )
    if status >= 0:
        raise NotPositiveDefiniteError(
            f"non-positive pivot at permuted index {status}; matrix is not positive definite"
        )
    return NumericFactor(sym, lx, inv_diag, int(ops))


def cholesky(p: SparseMatrix, ordering: str | Permutation = "rcm") -> NumericFactor:
    """Order, analyse and factor ``p`` in one call."""
    pattern = p.pattern()
    perm = ordering if isinstance(ordering, Permutation) else make_ordering(pattern, ordering)
    return numeric_cholesky(p, symbolic_cholesky(pattern, perm))


def _dense_rhs(b: SparseMatrix | NDArray) -> NDArray:
    if isinstance(b, SparseMatrix):
        return b.to_dense()
    return np.array(b, dtype=np.float64, copy=True, ndmin=2)


def _run_blocks(fn, ncols: int, threads: int) -> int:
    starts = list(range(0, ncols, _BLOCK))
    if threads <= 1 or len(starts) <= 1:
        return sum(fn(s) for s in starts)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return sum(pool.map(fn, starts))


def forward_solve(
    factor: NumericFactor,
    rhs: SparseMatrix | NDArray,
    threads: int | None = None,
    return_ops: bool = False,
):
    """Solve ``L G = rhs`` in the permuted index space.

    Columns are processed in blocks; each block starts at the first row that
    holds a nonzero of any of its columns. Blocks are independent, so the
    result does not depend on ``threads``.
    """
    g = _dense_rhs(rhs)
    if g.shape[0] != factor.n:
        raise ValueError(f"dimension mismatch: rhs has {g.shape[0]} rows, factor {factor.n}")
    lp, li, lx, inv = factor._arrays
    threads = default_threads() if threads is None else threads

    def solve(s: int) -> int:
        nz = np.flatnonzero(np.any(g[:, s : s + _BLOCK] != 0, axis=1))
        start = int(nz[0]) if nz.size else factor.n
        block = np.ascontiguousarray(g[start:, s : s + _BLOCK])
        ops = _kernels.forward_block(lp, li, lx, inv, block, start)
        g[start:, s : s + _BLOCK] = block
        return ops

    ops = _run_blocks(solve, g.shape[1], threads)
    return (g, ops) if return_ops else g


def backward_solve(
    factor: NumericFactor, w: NDArray, threads: int | None = None, return_ops: bool = False
):
    """Solve ``L^T V = w`` in the permuted index space."""
    v = _dense_rhs(w)
    if v.shape[0] != factor.n:
        raise ValueError(f"dimension mismatch: rhs has {v.shape[0]} rows, factor {factor.n}")
    lp, li, lx, inv = factor._arrays
    threads = default_threads() if threads is None else threads

    def solve(s: int) -> int:
        block = np.ascontiguousarray(v[:, s : s + _BLOCK])
        ops = _kernels.backward_block(lp, li, lx, inv, block)
        v[:, s : s + _BLOCK] = block
        return ops

    ops = _run_blocks(solve, v.shape[1], threads)
    return (v, ops) if return_ops else v


def save_factor(factor: NumericFactor, path: str | Path) -> None:
    """Write ``<path>.mtx`` (lower factor) and ``<path>.json`` (ordering, tree)."""
    from takvar.mmio import write_matrix

    path = Path(path)
    write_matrix(path.with_suffix(".mtx"), factor.to_matrix())
    meta = {
        "n": factor.n,
        "permutation": factor.permutation.perm.tolist(),
        "etree": factor.symbolic.etree.tolist(),
        "op_count": factor.op_count,
    }
    path.with_suffix(".json").write_text(json.dumps(meta))


def load_factor(path: str | Path) -> NumericFactor:
    from takvar.mmio import read_matrix

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    lmat = read_matrix(path.with_suffix(".mtx"))
    sym = SymbolicFactor(
        Permutation.from_array(meta["permutation"]),
        np.asarray(meta["etree"], dtype=np.int64),
        lmat.pattern(),
    )
    values = np.array(lmat.data)
    diag = values[lmat.indptr[:-1]]
    return NumericFactor(sym, values, 1.0 / diag, int(meta.get("op_count", 0)))
