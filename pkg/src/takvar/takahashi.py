"""Sparse inverse subset via the Takahashi recursions.

Given ``P = L L^T`` (permuted), the entries of ``S = P^{-1}`` on the factor
pattern satisfy, for column ``i`` swept from last to first,

    S[j, i] = -(1 / L[i, i]) * sum_{k > i} L[k, i] S[k, j]          (j > i)
    S[i, i] = (1 / L[i, i]) * (1 / L[i, i] - sum_{k > i} L[k, i] S[k, i])

Every ``S[k, j]`` read on the right lies on the factor pattern because the
pattern is closed along the elimination tree, so the full inverse is never
needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from takvar import _kernels
from takvar.cholesky import NumericFactor, SymbolicFactor
from takvar.sparse import Permutation, SparseMatrix, SparsePattern, pattern_add

__all__ = ["SparseInverseSubset", "takahashi", "save_subset", "load_subset"]


@dataclass(frozen=True, eq=False)
class SparseInverseSubset:
    """Entries of the inverse on the symmetric closure of the factor pattern.

    Only the lower triangle is stored, aligned position-for-position with the
    factor pattern; the upper triangle follows by symmetry. Indices live in
    the permuted space of ``symbolic.permutation``.
    """

    symbolic: SymbolicFactor
    lower_values: NDArray[np.float64]
    op_count: int = 0

    def __post_init__(self) -> None:
        if self.lower_values.size != self.symbolic.nnz:
            raise ValueError("subset values do not match the factor pattern")

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def permutation(self) -> Permutation:
        return self.symbolic.permutation

    @property
    def pattern(self) -> SparsePattern:
        lower = self.symbolic.Ls_pattern
        return pattern_add(lower, lower.T)

    def lower(self) -> SparseMatrix:
        pat = self.symbolic.Ls_pattern
        return SparseMatrix(pat.shape, pat.indptr, pat.indices, self.lower_values.copy())

    def to_matrix(self) -> SparseMatrix:
        """Full symmetric subset (permuted index space)."""
        rows, cols, vals = self.lower().triplets()
        off = rows != cols
        return SparseMatrix.from_triplets(
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
            (self.n, self.n),
        )

    def get(self, j: int, k: int) -> float | None:
        """Entry ``(j, k)`` in permuted indices, or ``None`` outside the subset."""
        if j < k:
            j, k = k, j
        pat = self.symbolic.Ls_pattern
        pos = _kernels._find(pat.indptr, pat.indices, k, j)
        return None if pos < 0 else float(self.lower_values[pos])

    def marginal_variances(self) -> NDArray[np.float64]:
        """Diagonal of the inverse in the *original* index order."""
        diag = self.lower_values[self.symbolic.Ls_pattern.indptr[:-1]]
        out = np.empty(self.n)
        out[self.permutation.perm] = diag
        return out

    def with_lower_values(self, values: NDArray[np.float64]) -> "SparseInverseSubset":
        return SparseInverseSubset(self.symbolic, np.asarray(values, dtype=np.float64))


def takahashi(factor: NumericFactor) -> SparseInverseSubset:
    """Run the Takahashi sweep over a numeric factor."""
    lp, li, lx, inv = factor._arrays
    if not np.all(np.isfinite(inv)) or np.any(factor.diagonal() == 0):
        raise ZeroDivisionError("factor has a zero diagonal entry")
    sx, status, ops = _kernels.takahashi(lp, li, lx, inv)
    if status >= 0:
        raise RuntimeError(
            f"factor pattern is not closed under the elimination tree (column {status})"
        )
    return SparseInverseSubset(factor.symbolic, sx, int(ops))


def save_subset(subset: SparseInverseSubset, path: str | Path) -> None:
    """Write ``<path>.mtx`` (lower triangle) and ``<path>.json`` (ordering, tree)."""
    from takvar.mmio import write_matrix

    path = Path(path)
    write_matrix(path.with_suffix(".mtx"), subset.lower())
    meta = {
        "n": subset.n,
        "permutation": subset.permutation.perm.tolist(),
        "etree": subset.symbolic.etree.tolist(),
        "op_count": subset.op_count,
    }
    path.with_suffix(".json").write_text(json.dumps(meta))


def load_subset(path: str | Path) -> SparseInverseSubset:
    from takvar.mmio import read_matrix

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    lower = read_matrix(path.with_suffix(".mtx"))
    sym = SymbolicFactor(
        Permutation.from_array(meta["permutation"]),
        np.asarray(meta["etree"], dtype=np.int64),
        lower.pattern(),
    )
    return SparseInverseSubset(sym, np.array(lower.data), int(meta.get("op_count", 0)))
