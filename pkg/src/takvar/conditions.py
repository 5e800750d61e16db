"""Pattern conditions under which the inverse subset gives exact variances.

Every pair ``(j, k)`` that some prediction row couples (a nonzero of
``A^T A``) must be structurally present in the computed precision. Two
sufficient routes exist: the observations couple the same pairs
(``ones(B^T B) >= ones(A^T A)``), or the prior does
(``ones(Q) >= ones(A^T A)``). The general condition accepts either source
pair by pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from takvar.sparse import (
    SparseMatrix,
    SparsePattern,
    gram_pattern,
    pattern_add,
    pattern_difference,
)

__all__ = [
    "ConditionReport",
    "check_case1",
    "check_case2",
    "check_theorem",
    "is_permutation_pattern",
    "pad_Q",
]

Pairs = list[tuple[int, int]]


def _upper_pairs(pairs: Pairs) -> Pairs:
    """Keep one representative ``(j, k)`` with ``j <= k`` per symmetric pair."""
    return sorted({(min(j, k), max(j, k)) for j, k in pairs})


def is_permutation_pattern(a: SparseMatrix) -> bool:
    """True if the value pattern of ``a`` is a permutation matrix."""
    nz = a.data != 0
    if a.shape[0] != a.shape[1] or nz.sum() != a.shape[0]:
        return False
    rows, cols, _ = a.triplets()
    return len(np.unique(rows[nz])) == a.shape[0] and len(np.unique(cols[nz])) == a.shape[1]


def check_case1(a: SparseMatrix, b: SparseMatrix) -> tuple[bool, Pairs]:
    """``ones(B^T B) >= ones(A^T A)``; witnesses are the uncovered pairs (j <= k)."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("A and B must have the same number of columns")
    missing = pattern_difference(gram_pattern(a), gram_pattern(b))
    w = _upper_pairs(missing)
    return not w, w


def check_case2(a: SparseMatrix, q: SparseMatrix) -> tuple[bool, Pairs]:
    """``ones(Q) >= ones(A^T A)`` on the structural pattern of ``Q``."""
    if a.shape[1] != q.shape[0]:
        raise ValueError("A and Q disagree on the latent dimension")
    missing = pattern_difference(gram_pattern(a), q.pattern())
    w = _upper_pairs(missing)
    return not w, w


@dataclass
class ConditionReport:
    case1: bool
    case2: bool
    theorem: bool
    case1_witnesses: Pairs = field(default_factory=list)
    case2_witnesses: Pairs = field(default_factory=list)
    witnesses: Pairs = field(default_factory=list)
    padding_required: int = 0
    a_is_permutation: bool = False

    def to_dict(self, max_witnesses: int | None = 100) -> dict:
        out = asdict(self)
        for key in ("case1_witnesses", "case2_witnesses", "witnesses"):
            pairs = out[key]
            out[f"n_{key}"] = len(pairs)
            out[key] = [list(p) for p in pairs[:max_witnesses]]
        return out


def check_theorem(a: SparseMatrix, b: SparseMatrix, q: SparseMatrix) -> ConditionReport:
    """Full report: each nonzero of ``A^T A`` covered by ``B^T B`` or by ``Q``.

    ``padding_required`` counts the explicit entries (both triangles) that
    :func:`pad_Q` would add to ``Q``.
    """
    gram_a = gram_pattern(a)
    gram_b = gram_pattern(b)
    qpat = q.pattern()
    case1, w1 = check_case1(a, b)
    case2, w2 = check_case2(a, q)
    uncovered = pattern_difference(gram_a, pattern_add(gram_b, qpat))
    return ConditionReport(
        case1=case1,
        case2=case2,
        theorem=not uncovered,
        case1_witnesses=w1,
        case2_witnesses=w2,
        witnesses=_upper_pairs(uncovered),
        padding_required=len(pattern_difference(gram_a, qpat)),
        a_is_permutation=is_permutation_pattern(a),
    )


def pad_Q(q: SparseMatrix, a: SparseMatrix) -> SparseMatrix:
    """Insert explicit zeros into ``Q`` wherever ``A^T A`` is nonzero and ``Q`` is not.

    Values of ``Q`` are unchanged; only its structure grows.
    """
    gram_a = gram_pattern(a)
    missing = pattern_difference(gram_a, q.pattern())
    if not missing:
        return q
    extra = np.asarray(missing, dtype=np.int64)
    rows, cols, vals = q.triplets()
    # gram pattern is symmetric, so extra already contains both triangles
    return SparseMatrix.from_triplets(
        np.r_[rows, extra[:, 0]], np.r_[cols, extra[:, 1]], np.r_[vals, np.zeros(len(extra))], q.shape
    )


def padded_pattern(q: SparseMatrix, a: SparseMatrix) -> SparsePattern:
    return pattern_add(q.pattern(), gram_pattern(a))
