"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` or ``python3 tests/test_acceptance.py``.
The lines are also repeated in the pytest terminal summary.
"""

from __future__ import annotations

import time

import numpy as np

from acceptance_models import random_exact_model
from conftest import random_spd, separation_fill, spd_from_mask, symmetric_mask
from takvar.bench import (
    ExperimentGrid,
    car1d_model,
    frk_car_model,
    relerr_study,
    run_car1d_grid,
    summarize_timings,
)
from takvar.cholesky import cholesky, symbolic_cholesky
from takvar.conditions import check_case1, check_case2, check_theorem, pad_Q
from takvar.gmrf import RegionGraph, aggregation_matrix
from takvar.model import HierarchicalModel, assemble_precision
from takvar.sparse import SparseMatrix, SparsePattern
from takvar.takahashi import takahashi
from takvar.variance import compute_variances, variances_direct, variances_sparse_inv

RESULTS: list[str] = []


def _record(number: int, ok: bool, detail: str, elapsed: float, limit: float | None) -> None:
    within = limit is None or elapsed < limit
    budget = "no limit" if limit is None else f"limit {limit:.0f}s"
    line = f"[{'PASS' if ok and within else 'FAIL'}] criterion {number}: {detail} ({elapsed:.1f}s, {budget})"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line
    assert within, line


def _prior_only(q: SparseMatrix, a: SparseMatrix) -> HierarchicalModel:
    n = q.shape[0]
    return HierarchicalModel(A=a, B=SparseMatrix.zeros((0, n)), Q=q, R=SparseMatrix.zeros((0, 0)))


def test_criterion_1_takahashi_matches_dense_inverse():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_scaled = worst_entrywise = 0.0
    for t in range(100):
        n = int(rng.integers(5, 301))
        kind = ("random", "banded", "block")[t % 3]
        if kind == "random":
            kw = {"density": float(rng.uniform(0.005, 0.05))}
        elif kind == "banded":
            kw = {"band": int(rng.integers(1, 8))}
        else:
            kw = {}
        p, dense = random_spd(rng, n, kind, **kw)
        subset = takahashi(cholesky(p))
        perm = subset.permutation.perm
        inv = np.linalg.inv(dense)[np.ix_(perm, perm)]
        rows, cols, vals = subset.to_matrix().triplets()
        exact = inv[rows, cols]
        diag = np.diag(inv)
        # error on the scale of the entry's own bound |S_jk| <= sqrt(S_jj S_kk)
        scale = np.sqrt(diag[rows] * diag[cols])
        worst_scaled = max(worst_scaled, float(np.max(np.abs(vals - exact) / scale)))
        worst_entrywise = max(worst_entrywise, float(np.max(np.abs(vals - exact) / np.abs(exact))))
    elapsed = time.perf_counter() - t0
    _record(
        1,
        worst_scaled < 1e-10,
        f"max relative error {worst_scaled:.2e} (scaled by sqrt(S_jj S_kk)); "
        f"raw entrywise max {worst_entrywise:.2e}",
        elapsed,
        60,
    )


def test_criterion_2_sparse_inverse_is_exact():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, padded, kinds = 0.0, 0, set()
    for _ in range(200):
        model, info = random_exact_model(rng)
        assert check_theorem(model.A, model.B, model.Q).theorem
        padded += info["padded"]
        kinds.add((info["prior"], info["A"], info["B"]))
        d_direct = compute_variances(model, "direct").d
        d_sparse = compute_variances(model, "sparse_inv").d
        pos = d_direct > 0
        assert np.array_equal(d_sparse[~pos], d_direct[~pos])
        worst = max(worst, float(np.max(np.abs(d_sparse - d_direct)[pos] / d_direct[pos])))
    elapsed = time.perf_counter() - t0
    _record(
        2,
        worst < 1e-9 and len(kinds) == 8,
        f"max |d_sparse - d_direct|/d_direct {worst:.2e} over 200 models "
        f"({padded} padded, {len(kinds)}/8 prior/A/B combinations)",
        elapsed,
        120,
    )


def test_criterion_3_untouched_entries_do_not_matter():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    ok, invariant, sensitive = True, 0, 0
    for _ in range(20):
        n = int(rng.integers(8, 25))
        q, _ = random_spd(rng, n, "random", density=float(rng.uniform(0.1, 0.4)))
        rows_a = int(rng.integers(3, 10))
        a = SparseMatrix.from_dense(rng.uniform(0.5, 1.0, (rows_a, n)) * (rng.random((rows_a, n)) < 0.25))
        model = _prior_only(pad_Q(q, a), a)
        subset = takahashi(cholesky(assemble_precision(model)))
        base = variances_sparse_inv(model, subset).d
        gram = (a.to_dense().T @ a.to_dense()) != 0
        perm = subset.permutation.perm
        lower = subset.symbolic.Ls_pattern
        cols = np.repeat(np.arange(lower.shape[1]), np.diff(lower.indptr))
        changed_here = False
        for pos, (i, j) in enumerate(zip(lower.indices, cols)):
            values = subset.lower_values.copy()
            values[pos] += 1.0
            d = variances_sparse_inv(model, subset.with_lower_values(values)).d
            if gram[perm[i], perm[j]]:
                changed_here |= not np.array_equal(d, base)
                sensitive += 1
            else:
                ok &= np.array_equal(d, base)
                invariant += 1
        ok &= changed_here
    elapsed = time.perf_counter() - t0
    _record(
        3,
        ok,
        f"{invariant} perturbations outside ones(A^T A) left d bit-identical; "
        f"every model changed under some of its {sensitive} covered perturbations",
        elapsed,
        None,
    )


def test_criterion_4_padding_recipe():
    t0 = time.perf_counter()
    model = frk_car_model(n_xi=400, n_basis=20, seed=0)
    unpadded_ok, witnesses = check_case2(model.A, model.Q)
    padded = model.with_Q(pad_Q(model.Q, model.A))
    padded_ok, _ = check_case2(padded.A, padded.Q)
    d_direct = compute_variances(padded, "direct").d
    d_sparse = compute_variances(padded, "sparse_inv").d
    worst = float(np.max(np.abs(d_sparse - d_direct) / d_direct))
    elapsed = time.perf_counter() - t0
    _record(
        4,
        (not unpadded_ok) and padded_ok and worst < 1e-9,
        f"unpadded case2 {unpadded_ok} ({len(witnesses)} uncovered pairs), padded case2 {padded_ok}, "
        f"max relative difference {worst:.2e} (n={model.n}, N={model.N}, m={model.m})",
        elapsed,
        10,
    )


def test_criterion_5_timing_trends():
    t0 = time.perf_counter()
    grid = ExperimentGrid(
        n_values=(100, 1_000, 10_000),
        N_values=(10, 100, 1_000, 10_000),
        m=10_000,
        methods=("direct", "sparse_inv"),
        seed=0,
        repetitions=5,
    )
    summary = summarize_timings(run_car1d_grid(grid))
    cell = {(s["n"], s["N"], s["method"]): s for s in summary}
    direct_ratio = cell[(1_000, 10_000, "direct")]["median_s"] / cell[(1_000, 10, "direct")]["median_s"]
    sparse_times = [cell[(1_000, N, "sparse_inv")]["median_s"] for N in grid.N_values]
    sparse_ratio = max(sparse_times) / min(sparse_times)
    direct_phase = {n: cell[(n, 10_000, "direct")]["dominant_phase"] for n in grid.n_values}
    sparse_phase = {N: cell[(10_000, N, "sparse_inv")]["dominant_phase"] for N in grid.N_values}
    ok_a = direct_ratio >= 20
    ok_b = sparse_ratio <= 3
    ok_c = direct_phase[10_000] == "Solve" and all(p in ("Cholesky", "PartInv") for p in sparse_phase.values())
    elapsed = time.perf_counter() - t0
    _record(
        5,
        ok_a and ok_b and ok_c,
        f"(a) direct N=1e4/N=1e1 at n=1e3 {direct_ratio:.1f}x; (b) sparse_inv max/min at n=1e3 "
        f"{sparse_ratio:.2f}x; (c) direct at N=1e4 dominated by {direct_phase}, sparse_inv at n=1e4 "
        f"by {sorted(set(sparse_phase.values()))}",
        elapsed,
        15 * 60,
    )


def test_criterion_6_operation_counts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_tak = worst_solve = 0.0
    for n in (100, 1_000):
        for b in (1, 2, 5):
            q, _ = random_spd(rng, n, "banded", band=b)
            factor = cholesky(q, "natural")
            assert factor.bandwidth == b
            subset = takahashi(factor)
            worst_tak = max(worst_tak, subset.op_count / ((b + 1) ** 2 * (n - b / 2)))
            for N in (10, 500):
                cols = rng.integers(0, n, N)
                a = SparseMatrix.from_triplets(np.arange(N), cols, rng.uniform(0.5, 1.5, N), (N, n))
                ops = variances_direct(_prior_only(q, a), factor).op_counts["Solve"]
                worst_solve = max(worst_solve, ops / (N * (b + 1) * (n - b / 2)))
    elapsed = time.perf_counter() - t0
    _record(
        6,
        worst_tak <= 1.1 and worst_solve <= 1.1,
        f"max Takahashi ops / (b+1)^2(n-b/2) {worst_tak:.3f}; "
        f"max solve ops / N(b+1)(n-b/2) {worst_solve:.3f}",
        elapsed,
        60,
    )


def test_criterion_7_simulation_statistics():
    t0 = time.perf_counter()
    model = car1d_model(500, 1_000, 10_000, seed=0)
    rows = relerr_study(model, range(10, 101, 10), seed=0)
    M = np.array([r[0] for r in rows], dtype=np.float64)
    r_abs = np.abs([r[1] for r in rows])
    s_scaled = np.array([r[2] for r in rows]) * np.sqrt(M)
    slope = float(np.polyfit(M, r_abs, 1)[0])
    band = float(s_scaled.max() / s_scaled.min())
    ok = r_abs[-1] < r_abs[0] and slope < 0 and band <= 2
    elapsed = time.perf_counter() - t0
    _record(
        7,
        ok,
        f"|r(10)| {r_abs[0]:.4f} -> |r(100)| {r_abs[-1]:.4f}, trend slope {slope:.2e}; "
        f"s*sqrt(M) max/min {band:.2f}",
        elapsed,
        120,
    )


def test_criterion_8_symbolic_factor_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    ok, total = True, 0
    for t in range(50):
        n = int(rng.integers(1, 51))
        kind = ("random", "banded", "block")[t % 3]
        mask = symmetric_mask(rng, n, kind, density=float(rng.uniform(0.02, 0.3)), band=int(rng.integers(1, 5)))
        ls = symbolic_cholesky(SparsePattern.from_dense(mask)).Ls_pattern.to_dense()
        dense_nz = np.linalg.cholesky(spd_from_mask(rng, mask)) != 0
        ok &= np.array_equal(ls, separation_fill(mask)) and np.array_equal(ls, dense_nz)
        total += int(ls.sum())
    elapsed = time.perf_counter() - t0
    _record(8, ok, f"50 patterns agree with both oracles ({total} factor entries)", elapsed, 30)


def _nested_partition(rng) -> tuple[RegionGraph, np.ndarray]:
    n = int(rng.integers(10, 200))
    n_fine = int(rng.integers(2, max(3, n // 2)))
    fine = np.r_[np.arange(n_fine), rng.integers(0, n_fine, n - n_fine)]
    rng.shuffle(fine)
    n_coarse = int(rng.integers(2, n_fine + 1))
    fine_to_coarse = np.r_[np.arange(n_coarse), rng.integers(0, n_coarse, n_fine - n_coarse)]
    rng.shuffle(fine_to_coarse)
    coarse = fine_to_coarse[fine]
    graph = RegionGraph.path(n, weights=rng.uniform(0.1, 10.0, n), memberships=[fine, coarse])
    return graph, fine_to_coarse


def test_criterion_9_nesting_condition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(50):
        graph, fine_to_coarse = _nested_partition(rng)
        fine, coarse = graph.memberships
        assert graph.is_nested(0, 1)
        a_fine = aggregation_matrix(graph, 0)
        nested_ok, nested_w = check_case1(a_fine, aggregation_matrix(graph, 1))
        ok &= nested_ok and nested_w == []
        # move one region of a multi-member fine group to another coarse group
        sizes = np.bincount(fine)
        region = int(rng.choice(np.flatnonzero(sizes[fine] >= 2)))
        others = np.setdiff1d(np.arange(coarse.max() + 1), [coarse[region]])
        broken = coarse.copy()
        broken[region] = int(rng.choice(others))
        moved = RegionGraph(graph.n, graph.edges, graph.weights, [fine, broken])
        broken_ok, witnesses = check_case1(a_fine, aggregation_matrix(moved, 1))
        mates = np.flatnonzero(fine == fine[region])
        expected = sorted((min(region, int(k)), max(region, int(k))) for k in mates if k != region)
        ok &= (not broken_ok) and witnesses == expected
    elapsed = time.perf_counter() - t0
    _record(
        9,
        ok,
        "50 nested partitions pass; each broken one fails with exactly the moved region's fine-group pairs",
        elapsed,
        10,
    )


if __name__ == "__main__":
    import sys

    import pytest

    sys.exit(pytest.main([__file__, "-v", "-s"]))
