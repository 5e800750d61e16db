"""Timing grids and Monte Carlo error studies on synthetic models.

The timing grid builds, for each ``(n, N)`` cell, a one-dimensional model
on ``[0, 1]``: ``n`` equispaced bisquare basis functions, a second-order CAR
prior, ``m`` observations at uniform random locations with error variance
0.1 and ``N`` equispaced prediction locations. Every method is run on the
same model and timed phase by phase.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from numpy.typing import NDArray

from takvar.cholesky import cholesky
from takvar.conditions import check_theorem
from takvar.gmrf import (
    Basis1D,
    RegionGraph,
    aggregation_matrix,
    bisquare_eval,
    car1d_second_order,
    car_first_order,
    frk_car_assemble,
)
from takvar.model import HierarchicalModel, assemble_precision
from takvar.sparse import SparseMatrix, permute_columns
from takvar.takahashi import takahashi
from takvar.variance import (
    METHODS,
    PHASES,
    compute_variances,
    relative_error_summary,
    sample_variances,
    simulate_posterior,
    variances_cond_sim,
    variances_direct,
    variances_sparse_inv,
)

__all__ = [
    "TIMING_SCHEMA",
    "ExperimentGrid",
    "car1d_model",
    "nested_aggregation_model",
    "frk_car_model",
    "estimate_cell_bytes",
    "run_car1d_grid",
    "summarize_timings",
    "write_rows",
    "relerr_study",
]

TIMING_SCHEMA = "takvar-timing/1"
DESK_MAX_N = 10_000
DESK_MAX_NPRED = 100_000
DEFAULT_MEMORY_LIMIT = 4 * 2**30
OBS_ERROR_VARIANCE = 0.1

TIMING_COLUMNS = (
    ["schema", "n", "N", "m", "method", "rep", "seed", "ordering", "status", "total_s"]
    + [f"{p}_s" for p in PHASES]
    + ["dominant_phase"]
    + [f"ops_{p}" for p in PHASES]
    + ["bandwidth", "nnz_L", "max_rel_diff_vs_direct"]
)
SUMMARY_COLUMNS = [
    "schema", "n", "N", "method", "reps", "median_s", "min_s", "max_s", "spread", "dominant_phase",
]


@dataclass(frozen=True)
class ExperimentGrid:
    n_values: tuple[int, ...] = (100, 1_000, 10_000)
    N_values: tuple[int, ...] = (10, 100, 1_000, 10_000)
    m: int = 10_000
    methods: tuple[str, ...] = METHODS
    M: int = 50
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_values", tuple(int(v) for v in self.n_values))
        object.__setattr__(self, "N_values", tuple(int(v) for v in self.N_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        counts = list(self.n_values) + list(self.N_values) + [self.m, self.M]
        if not self.n_values or not self.N_values or any(c <= 0 for c in counts):
            raise ValueError("grid counts must be positive and non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        if min(self.n_values) < 3:
            raise ValueError("the second-order CAR prior needs n >= 3")

    def cells(self) -> list[tuple[int, int]]:
        return [(n, N) for n in self.n_values for N in self.N_values]

    def check_desk_scale(self) -> None:
        """Refuse cells beyond the desk-scale caps (lifted by ``full=True`` in the runner)."""
        if max(self.n_values) > DESK_MAX_N or max(self.N_values) > DESK_MAX_NPRED:
            raise ValueError(
                f"grid exceeds desk scale (n <= {DESK_MAX_N}, N <= {DESK_MAX_NPRED}); "
                "use --full to run it anyway"
            )


def car1d_model(
    n: int,
    N: int,
    m: int,
    seed: int = 0,
    rho: float = 1 / 12,
    tau: float = 12.0,
    aperture: float | None = None,
) -> HierarchicalModel:
    """1-D bisquare model with a second-order CAR prior and ``R = 10 I``."""
    rng = np.random.default_rng(seed)
    basis = Basis1D.equispaced(n, aperture)
    b = bisquare_eval(basis, rng.uniform(0.0, 1.0, m))
    a = bisquare_eval(basis, np.linspace(0.0, 1.0, N))
    q = car1d_second_order(n, rho, tau)
    r = SparseMatrix.identity(m, 1.0 / OBS_ERROR_VARIANCE)
    return HierarchicalModel(A=a, B=b, Q=q, R=r)


def _lattice_edges(side: int) -> NDArray[np.int64]:
    idx = np.arange(side * side).reshape(side, side)
    return np.r_[
        np.c_[idx[:, :-1].ravel(), idx[:, 1:].ravel()],
        np.c_[idx[:-1, :].ravel(), idx[1:, :].ravel()],
    ]


def nested_aggregation_model(
    side: int = 16,
    fine_block: int = 2,
    coarse_block: int = 4,
    seed: int = 0,
    rho: float = 0.9,
) -> HierarchicalModel:
    """Lattice of ``side x side`` regions with two nested aggregation levels.

    Observations average over ``coarse_block``-square groups; predictions
    average over ``fine_block``-square groups nested inside them. Population
    weights are random and positive.
    """
    if coarse_block % fine_block or side % coarse_block:
        raise ValueError("blocks must nest and tile the lattice")
    rng = np.random.default_rng(seed)
    r_idx, c_idx = np.divmod(np.arange(side * side), side)

    def groups(block: int) -> NDArray[np.int64]:
        per_row = side // block
        return (r_idx // block) * per_row + c_idx // block

    g = RegionGraph(
        side * side,
        _lattice_edges(side),
        weights=rng.uniform(0.5, 2.0, side * side),
        memberships=[groups(fine_block), groups(coarse_block)],
    )
    a = aggregation_matrix(g, 0)
    b = aggregation_matrix(g, 1)
    q = car_first_order(g, rho, tau=1.0)
    return HierarchicalModel(A=a, B=b, Q=q, R=SparseMatrix.identity(b.shape[0], 10.0))


def frk_car_model(
    n_xi: int = 400,
    n_basis: int = 20,
    seed: int = 0,
    obs_fraction: float = 0.5,
    pad: bool = False,
) -> HierarchicalModel:
    """FRK-CAR model on a 1-D chain of ``n_xi`` fine cells.

    ``n_basis`` equispaced bisquares with wide support carry the large-scale
    signal; an exponential covariance between their centres gives ``K``. A
    random subset of cells is observed.
    """
    rng = np.random.default_rng(seed)
    s = (np.arange(n_xi) + 0.5) / n_xi
    basis = Basis1D.equispaced(n_basis, aperture=2.5 / n_basis)
    a_basis = bisquare_eval(basis, s)
    dist = np.abs(basis.centroids[:, None] - basis.centroids[None, :])
    k = np.exp(-dist / 0.3) + 1e-8 * np.eye(n_basis)
    n_obs = max(1, int(round(obs_fraction * n_xi)))
    cells = np.sort(rng.choice(n_xi, n_obs, replace=False))
    b_fine = SparseMatrix.from_triplets(np.arange(n_obs), cells, np.ones(n_obs), (n_obs, n_xi))
    b_basis = bisquare_eval(basis, s[cells])
    q_xi = car_first_order(RegionGraph.path(n_xi), rho=0.95, tau=1.0)
    r = SparseMatrix.identity(n_obs, 10.0)
    return frk_car_assemble(a_basis, b_basis, k, q_xi, r=r, b_fine=b_fine, pad=pad)


def estimate_cell_bytes(n: int, N: int, m: int, method: str, M: int = 50) -> int:
    """Peak working memory of one grid cell, dominated by the dense blocks.

    ``direct`` keeps at most one ``n x 256`` block of ``G`` plus the output;
    ``cond_sim`` holds ``n x M`` draws and the ``N x M`` interpolated
    ensemble. Sparse inputs are counted at 3 entries per row.
    """
    sparse_in = 8 * 2 * 3 * (m + N + 5 * n)
    if method == "direct":
        dense = n * min(N, 256) + N
    elif method == "cond_sim":
        dense = n * M + N * M
    else:
        dense = 3 * n + N
    return int(sparse_in + 8 * dense)


def _rel_diff(d: NDArray, ref: NDArray) -> float:
    return float(np.max(np.abs(d - ref) / np.abs(ref))) if ref.size else 0.0


def _run_cell(
    n: int,
    N: int,
    grid: ExperimentGrid,
    ordering: str,
    memory_limit: int,
    threads: int | None,
) -> list[dict]:
    rows = []
    base = {"schema": TIMING_SCHEMA, "n": n, "N": N, "m": grid.m, "seed": grid.seed, "ordering": ordering}
    model = car1d_model(n, N, grid.m, seed=grid.seed)
    reference = None
    for method in grid.methods:
        est = estimate_cell_bytes(n, N, grid.m, method, grid.M)
        if est > memory_limit:
            rows.append({**base, "method": method, "rep": 0, "status": f"refused:{est}B"})
            continue
        for rep in range(grid.repetitions):
            r = compute_variances(
                model, method, ordering=ordering, M=grid.M, seed=grid.seed, threads=threads
            )
            if method == "direct" and reference is None:
                reference = r.d
            row = {
                **base,
                "method": method,
                "rep": rep,
                "status": "ok",
                "total_s": r.total_time,
                "dominant_phase": r.dominant_phase,
                "bandwidth": r.extra["bandwidth"],
                "nnz_L": r.extra["nnz_L"],
                "max_rel_diff_vs_direct": "" if reference is None else _rel_diff(r.d, reference),
            }
            for p in PHASES:
                row[f"{p}_s"] = r.timings.get(p, "")
                row[f"ops_{p}"] = r.op_counts.get(p, "")
            rows.append(row)
    return rows


def _warm_up(methods: Iterable[str]) -> None:
    """Load the compiled kernels so the first timed cell does not pay for it."""
    model = car1d_model(8, 4, 16, seed=0)
    for method in methods:
        compute_variances(model, method, M=2)


def run_car1d_grid(
    grid: ExperimentGrid,
    ordering: str = "rcm",
    full: bool = False,
    memory_limit: int = DEFAULT_MEMORY_LIMIT,
    parallel_cells: int = 1,
    threads: int | None = None,
) -> list[dict]:
    """Time every method on every ``(n, N)`` cell; one row per repetition.

    Cells run one after another unless ``parallel_cells > 1``, which is meant
    for correctness runs only since concurrent cells distort the timings.
    """
    if not full:
        grid.check_desk_scale()
    _warm_up(grid.methods)

    def work(cell: tuple[int, int]) -> list[dict]:
        return _run_cell(*cell, grid, ordering, memory_limit, threads)

    cells = grid.cells()
    if parallel_cells > 1:
        with ThreadPoolExecutor(max_workers=parallel_cells) as pool:
            chunks = list(pool.map(work, cells))
    else:
        chunks = [work(c) for c in cells]
    return [row for chunk in chunks for row in chunk]


def summarize_timings(rows: Iterable[dict]) -> list[dict]:
    """Median, range and relative spread of total time per ``(n, N, method)``."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if row.get("status") == "ok":
            groups.setdefault((row["n"], row["N"], row["method"]), []).append(row)
    out = []
    for (n, N, method), rs in groups.items():
        t = np.array([r["total_s"] for r in rs], dtype=np.float64)
        med = float(np.median(t))
        phases = [r["dominant_phase"] for r in rs]
        out.append(
            {
                "schema": TIMING_SCHEMA,
                "n": n,
                "N": N,
                "method": method,
                "reps": len(rs),
                "median_s": med,
                "min_s": float(t.min()),
                "max_s": float(t.max()),
                "spread": float((t.max() - t.min()) / med) if med > 0 else 0.0,
                "dominant_phase": max(set(phases), key=phases.count),
            }
        )
    return out


def write_rows(path: str | Path, rows: list[dict], columns: list[str] | tuple[str, ...]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _exact_variances(model: HierarchicalModel) -> NDArray[np.float64]:
    factor = cholesky(assemble_precision(model), "rcm")
    if check_theorem(model.A, model.B, model.Q).theorem:
        return variances_sparse_inv(model, takahashi(factor), unsafe_skip_check=True).d
    return variances_direct(model, factor).d


def relerr_study(
    model: HierarchicalModel,
    M_values: Iterable[int] = tuple(range(10, 101, 10)),
    seed: int = 0,
    incremental: bool = False,
    d_exact: NDArray[np.float64] | None = None,
    d_hat_hook: Callable[[int], NDArray[np.float64]] | None = None,
) -> list[tuple[int, float, float]]:
    """Bias and spread of simulated standard errors as ``M`` grows.

    By default every ``M`` uses fresh draws from its own child seed. With
    ``incremental=True`` one ensemble of ``max(M)`` draws is shared and each
    ``M`` uses its leading columns. ``d_hat_hook(M)`` replaces the simulated
    variances, which is useful for testing the bookkeeping.
    """
    M_values = sorted(int(M) for M in M_values)
    if not M_values or M_values[0] < 2:
        raise ValueError("every M must be at least 2")
    d = _exact_variances(model) if d_exact is None else np.asarray(d_exact, dtype=np.float64)
    d_hat: dict[int, NDArray[np.float64]] = {}
    if d_hat_hook is not None:
        d_hat = {M: np.asarray(d_hat_hook(M), dtype=np.float64) for M in M_values}
        return relative_error_summary(d, d_hat)
    factor = cholesky(assemble_precision(model), "rcm")
    if incremental:
        ap = permute_columns(model.A, factor.permutation).to_scipy().tocsr()
        v, _ = simulate_posterior(factor, M_values[-1], seed)
        av = ap @ v
        d_hat = {M: sample_variances(av[:, :M]) for M in M_values}
    else:
        children = np.random.SeedSequence(seed).spawn(len(M_values))
        for M, child in zip(M_values, children):
            child_seed = int(child.generate_state(1, dtype=np.uint64)[0])
            d_hat[M] = variances_cond_sim(model, factor, M, child_seed).d
    return relative_error_summary(d, d_hat)
