"""Prediction variances ``d = diag(A P^{-1} A^T)`` by three routes.

* ``direct``: forward-solve ``L G = A^T`` and sum squares down the columns.
* ``sparse_inv``: Takahashi inverse subset, then ``(A o (A S))1``; exact only
  when the pattern conditions hold, which is checked before computing.
* ``cond_sim``: sample ``v = L^{-T} w`` with ``w`` standard normal and take
  empirical variances of ``A v``.

All work happens in the permuted index space of the factor, so ``A`` is
column-permuted to match.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from takvar import _kernels
from takvar.cholesky import (
    NumericFactor,
    _BLOCK,
    default_threads,
    make_ordering,
    numeric_cholesky,
    symbolic_cholesky,
)
from takvar.conditions import ConditionReport, check_theorem, pad_Q
from takvar.model import HierarchicalModel, assemble_precision
from takvar.sparse import SparseMatrix, permute_columns
from takvar.takahashi import SparseInverseSubset, takahashi

__all__ = [
    "PHASES",
    "ConditionCheckFailed",
    "VarianceReport",
    "variances_direct",
    "variances_sparse_inv",
    "variances_cond_sim",
    "simulate_posterior",
    "sample_variances",
    "relative_error_summary",
    "compute_variances",
]

PHASES = ("Cholesky", "Solve", "Hadamard", "PartInv", "Sim", "Interp")
METHODS = ("direct", "sparse_inv", "cond_sim")


class ConditionCheckFailed(RuntimeError):
    """The inverse subset does not cover every pair the predictions need."""

    def __init__(self, report: ConditionReport):
        self.report = report
        j, k = report.witnesses[0]
        super().__init__(
            f"condition check failed: {len(report.witnesses)} uncovered pair(s), e.g. ({j}, {k}); "
            "pad Q first"
        )


@dataclass
class VarianceReport:
    d: NDArray[np.float64]
    method: str
    M: int | None = None
    timings: dict[str, float] = field(default_factory=dict)
    op_counts: dict[str, int] = field(default_factory=dict)
    seed: int | None = None
    rng: str | None = None
    condition: ConditionReport | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total_time(self) -> float:
        return float(sum(self.timings.get(p, 0.0) for p in PHASES))

    @property
    def dominant_phase(self) -> str:
        present = {p: self.timings[p] for p in PHASES if p in self.timings}
        return max(present, key=present.get) if present else ""

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "d"])
            for i, v in enumerate(self.d):
                w.writerow([i, repr(float(v))])

    def telemetry(self) -> dict:
        return {
            "method": self.method,
            "M": self.M,
            "seed": self.seed,
            "rng": self.rng,
            "timings": self.timings,
            "total_time": self.total_time,
            "dominant_phase": self.dominant_phase,
            "op_counts": self.op_counts,
            "condition": None if self.condition is None else self.condition.to_dict(),
            **self.extra,
        }

    def write_telemetry(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.telemetry(), indent=2))


def _permuted_rows(model: HierarchicalModel, factor_or_subset) -> SparseMatrix:
    a = model.A
    if a.shape[1] != factor_or_subset.n:
        raise ValueError(f"A has {a.shape[1]} columns, factor has order {factor_or_subset.n}")
    return permute_columns(a, factor_or_subset.permutation)


def variances_direct(
    model: HierarchicalModel, factor: NumericFactor, threads: int | None = None
) -> VarianceReport:
    """``d_i = sum_k G[k, i]^2`` with ``L G = (A P^T)^T``.

    Prediction rows are sorted by their first permuted column and solved in
    blocks that start at the first nonzero row, so leading zeros are skipped.
    ``G`` is never held in full.
    """
    ap = _permuted_rows(model, factor).to_scipy().tocsr()
    ap.sort_indices()
    n, nrow = factor.n, ap.shape[0]
    lp, li, lx, inv = factor._arrays
    counts = np.diff(ap.indptr)
    first = np.where(counts > 0, ap.indices[np.minimum(ap.indptr[:-1], max(ap.nnz - 1, 0))], n)
    order = np.argsort(first, kind="stable")
    d = np.zeros(nrow)
    threads = default_threads() if threads is None else threads

    def block(s: int) -> tuple[int, int, float, float]:
        rows = order[s : s + _BLOCK]
        start = int(first[rows[0]])
        t0 = time.perf_counter()
        if start >= n:
            return 0, 0, 0.0, 0.0
        sub = ap[rows]
        g = np.zeros((n - start, rows.size))
        r = np.repeat(np.arange(rows.size), np.diff(sub.indptr))
        g[sub.indices - start, r] = sub.data
        solve_ops = _kernels.forward_block(lp, li, lx, inv, g, start)
        t1 = time.perf_counter()
        out = np.empty(rows.size)
        had_ops = _kernels.column_sumsq(g, out)
        d[rows] = out
        return solve_ops, had_ops, t1 - t0, time.perf_counter() - t1

    starts = range(0, nrow, _BLOCK)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    return VarianceReport(
        d=d,
        method="direct",
        timings={"Solve": sum(p[2] for p in parts), "Hadamard": sum(p[3] for p in parts)},
        op_counts={"Solve": int(sum(p[0] for p in parts)), "Hadamard": int(sum(p[1] for p in parts))},
    )


def variances_sparse_inv(
    model: HierarchicalModel,
    subset: SparseInverseSubset,
    unsafe_skip_check: bool = False,
    condition: ConditionReport | None = None,
) -> VarianceReport:
    """``d = (A o (A S))1`` using only the stored inverse subset.

    Refuses with :class:`ConditionCheckFailed` unless every nonzero of
    ``A^T A`` is covered by ``B^T B`` or ``Q``. ``unsafe_skip_check`` skips
    the check; entries outside the subset are then read as zero.
    """
    if not unsafe_skip_check:
        condition = condition or check_theorem(model.A, model.B, model.Q)
        if not condition.theorem:
            raise ConditionCheckFailed(condition)
    ap = _permuted_rows(model, subset).to_scipy().tocsr()
    ap.sort_indices()
    pat = subset.symbolic.Ls_pattern
    d = np.empty(ap.shape[0])
    t0 = time.perf_counter()
    ops, missing = _kernels.hadamard_rows(
        ap.indptr.astype(np.int64),
        ap.indices.astype(np.int64),
        ap.data,
        pat.indptr,
        pat.indices,
        subset.lower_values,
        d,
    )
    elapsed = time.perf_counter() - t0
    return VarianceReport(
        d=d,
        method="sparse_inv",
        timings={"Hadamard": elapsed},
        op_counts={"Hadamard": int(ops), "missing_reads": int(missing)},
        condition=condition,
    )


def simulate_posterior(
    factor: NumericFactor, M: int, seed: int | None, threads: int | None = None
) -> tuple[NDArray[np.float64], int]:
    """``M`` draws ``v = L^{-T} w`` (permuted space, columns are draws)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((factor.n, M))
    lp, li, lx, inv = factor._arrays
    threads = default_threads() if threads is None else threads

    def solve(s: int) -> int:
        blk = np.ascontiguousarray(w[:, s : s + _BLOCK])
        ops = _kernels.backward_block(lp, li, lx, inv, blk)
        w[:, s : s + _BLOCK] = blk
        return ops

    starts = range(0, M, _BLOCK)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ops = sum(pool.map(solve, starts))
    else:
        ops = sum(solve(s) for s in starts)
    return w, int(ops)


def sample_variances(samples: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise sample variance with divisor ``M - 1``."""
    return samples.var(axis=1, ddof=1)


def variances_cond_sim(
    model: HierarchicalModel,
    factor: NumericFactor,
    M: int = 50,
    seed: int | None = 0,
    threads: int | None = None,
) -> VarianceReport:
    """Empirical variances of ``A v`` over ``M`` conditional simulations."""
    if M < 2:
        raise ValueError("conditional simulation needs M >= 2")
    ap = _permuted_rows(model, factor).to_scipy().tocsr()
    t0 = time.perf_counter()
    v, sim_ops = simulate_posterior(factor, M, seed, threads)
    t1 = time.perf_counter()
    av = ap @ v
    d = sample_variances(av)
    t2 = time.perf_counter()
    return VarianceReport(
        d=d,
        method="cond_sim",
        M=M,
        seed=seed,
        rng="numpy.PCG64/standard_normal",
        timings={"Sim": t1 - t0, "Interp": t2 - t1},
        op_counts={"Sim": sim_ops, "Interp": int(ap.nnz * M + 2 * ap.shape[0] * M)},
    )


def relative_error_summary(
    d_exact: NDArray[np.float64], d_hat_per_M: dict[int, NDArray[np.float64]]
) -> list[tuple[int, float, float]]:
    """Rows ``(M, mean relative error, sd of relative error)`` of the standard errors.

    The relative error of prediction ``i`` is
    ``(sqrt(d_hat_i) - sqrt(d_i)) / sqrt(d_i)``; the spread uses divisor
    ``N - 1``.
    """
    sigma = np.sqrt(np.asarray(d_exact, dtype=np.float64))
    if np.any(sigma <= 0):
        raise ValueError("exact variances must be positive")
    rows = []
    for M in sorted(d_hat_per_M):
        rel = (np.sqrt(d_hat_per_M[M]) - sigma) / sigma
        spread = float(rel.std(ddof=1)) if rel.size > 1 else 0.0
        rows.append((int(M), float(rel.mean()), spread))
    return rows


def compute_variances(
    model: HierarchicalModel,
    method: str = "sparse_inv",
    ordering: str = "rcm",
    M: int = 50,
    seed: int | None = 0,
    pad: bool = False,
    unsafe_skip_check: bool = False,
    threads: int | None = None,
) -> VarianceReport:
    """Assemble, factor and run one method, timing each phase.

    The ``Cholesky`` phase covers ordering, symbolic and numeric
    factorization. Assembly of the precision and the condition check are
    timed separately (``Assemble``, ``Check``) and are not part of
    :attr:`VarianceReport.total_time`.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if pad:
        model = model.with_Q(pad_Q(model.Q, model.A))
    condition = None
    t_check = 0.0
    if method == "sparse_inv" and not unsafe_skip_check:
        t0 = time.perf_counter()
        condition = check_theorem(model.A, model.B, model.Q)
        t_check = time.perf_counter() - t0
        if not condition.theorem:
            raise ConditionCheckFailed(condition)

    t0 = time.perf_counter()
    p = assemble_precision(model)
    t_asm = time.perf_counter() - t0

    t0 = time.perf_counter()
    pattern = p.pattern()
    perm = make_ordering(pattern, ordering)
    factor = numeric_cholesky(p, symbolic_cholesky(pattern, perm))
    t_chol = time.perf_counter() - t0

    timings = {"Cholesky": t_chol}
    ops = {"Cholesky": factor.op_count}
    if method == "direct":
        rep = variances_direct(model, factor, threads)
    elif method == "sparse_inv":
        t0 = time.perf_counter()
        subset = takahashi(factor)
        timings["PartInv"] = time.perf_counter() - t0
        ops["PartInv"] = subset.op_count
        rep = variances_sparse_inv(model, subset, unsafe_skip_check=True)
        rep.condition = condition
    else:
        rep = variances_cond_sim(model, factor, M, seed, threads)
    timings.update(rep.timings)
    ops.update(rep.op_counts)
    rep.timings = timings
    rep.op_counts = ops
    rep.extra.update(
        {
            "Assemble": t_asm,
            "Check": t_check,
            "ordering": ordering,
            "bandwidth": factor.bandwidth,
            "nnz_L": factor.symbolic.nnz,
            "n": model.n,
            "N": model.N,
            "m": model.m,
        }
    )
    return rep
