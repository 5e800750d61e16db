"""Model building blocks: CAR precisions, bisquare bases, aggregation operators.

Also assembles the FRK-CAR model, whose latent vector stacks a few dense
basis-function weights on top of a fine-scale CAR field.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from takvar.cholesky import NotPositiveDefiniteError, cholesky
from takvar.sparse import SparseMatrix, block_diag, hstack

__all__ = [
    "car1d_second_order",
    "car_first_order",
    "Basis1D",
    "bisquare",
    "bisquare_eval",
    "RegionGraph",
    "aggregation_matrix",
    "frk_car_assemble",
]


def _require_spd(q: SparseMatrix, what: str) -> None:
    try:
        cholesky(q, "natural")
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def car1d_second_order(n: int, rho: float = 1 / 12, tau: float = 12.0) -> SparseMatrix:
    """``tau * (I - rho * W)`` with ``W`` = 4 at lag 1 and 1 at lag 2.

    Lags that fall outside ``0..n-1`` are dropped at the boundary.
    """
    if n < 3:
        raise ValueError("second-order CAR needs n >= 3")
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, float(tau))]
    if rho != 0:
        for lag, w in ((1, 4.0), (2, 1.0)):
            i = np.arange(n - lag)
            off = np.full(n - lag, -tau * rho * w)
            rows += [i, i + lag]
            cols += [i + lag, i]
            vals += [off, off]
    q = SparseMatrix.from_triplets(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n)
    )
    _require_spd(q, f"second-order CAR precision (rho={rho}, tau={tau})")
    return q


@dataclass(frozen=True)
class Basis1D:
    """Bisquare basis functions on [0, 1]: centroids and a shared aperture."""

    centroids: NDArray[np.float64]
    aperture: float

    def __post_init__(self) -> None:
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 1 or c.size == 0 or np.any(np.diff(c) <= 0):
            raise ValueError("centroids must be a strictly increasing 1-D array")
        if not self.aperture > 0:
            raise ValueError("aperture must be positive")
        object.__setattr__(self, "centroids", c)

    @classmethod
    def equispaced(cls, n: int, aperture: float | None = None) -> "Basis1D":
        """``n`` centroids at cell midpoints ``(i + 1/2) / n``; aperture defaults to ``1/n``.

        With the default aperture any point meets at most two functions.
        """
        return cls((np.arange(n) + 0.5) / n, 1.0 / n if aperture is None else aperture)

    @property
    def n(self) -> int:
        return int(self.centroids.size)


def bisquare(s: ArrayLike, centre: ArrayLike, aperture: float) -> NDArray[np.float64]:
    u = np.abs(np.asarray(s, dtype=np.float64) - centre) / aperture
    return np.where(u <= 1, (1 - u**2) ** 2, 0.0)


def bisquare_eval(basis: Basis1D, locations: ArrayLike) -> SparseMatrix:
    """``(len(locations), basis.n)`` matrix of basis evaluations.

    Only strictly positive values are stored.
    """
    s = np.asarray(locations, dtype=np.float64).ravel()
    c, r = basis.centroids, basis.aperture
    lo = np.searchsorted(c, s - r, side="left")
    hi = np.searchsorted(c, s + r, side="right")
    counts = hi - lo
    rows = np.repeat(np.arange(s.size), counts)
    offset = np.arange(rows.size) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = np.repeat(lo, counts) + offset
    vals = bisquare(s[rows], c[cols], r)
    keep = vals > 0
    return SparseMatrix.from_triplets(rows[keep], cols[keep], vals[keep], (s.size, basis.n))


@dataclass
class RegionGraph:
    """Regions with symmetric adjacency, population weights and coarse memberships.

    ``memberships[level][i]`` is the coarse region containing fine region ``i``
    at that level.
    """

    n: int
    edges: NDArray[np.int64]
    weights: NDArray[np.float64] | None = None
    memberships: list[NDArray[np.int64]] = field(default_factory=list)

    def __post_init__(self) -> None:
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-edges are not allowed")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        e = np.sort(e, axis=1)
        self.edges = np.unique(e, axis=0) if e.size else e
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.n,) or np.any(self.weights < 0):
                raise ValueError("weights must be n nonnegative values")
        self.memberships = [np.asarray(m, dtype=np.int64) for m in self.memberships]
        for m in self.memberships:
            if m.shape != (self.n,) or np.any(m < 0):
                raise ValueError("each membership map must assign every region")

    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        data = np.ones(2 * len(e))
        return sp.csr_matrix(
            (data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(self.n, self.n)
        )

    def degrees(self) -> NDArray[np.int64]:
        return np.asarray(self.adjacency().sum(axis=1)).ravel().astype(np.int64)

    def is_connected(self) -> bool:
        return connected_components(self.adjacency(), directed=False)[0] == 1

    def is_nested(self, fine_level: int, coarse_level: int) -> bool:
        """Each fine-level group lies inside a single coarse-level group."""
        fine, coarse = self.memberships[fine_level], self.memberships[coarse_level]
        pairs = np.unique(np.c_[fine, coarse], axis=0)
        return len(np.unique(pairs[:, 0])) == len(pairs)

    @classmethod
    def path(cls, n: int, **kw) -> "RegionGraph":
        i = np.arange(n - 1)
        return cls(n, np.c_[i, i + 1], **kw)

    @classmethod
    def from_csv(
        cls,
        edges_csv: str | Path,
        membership_csv: str | Path | None = None,
        weights_csv: str | Path | None = None,
    ) -> "RegionGraph":
        """Load from CSV files with headers.

        * edges: ``i,j`` per row
        * membership: ``region,level0,level1,...``
        * weights: ``region,weight``
        """
        with open(edges_csv, newline="") as fh:
            edges = [(int(r["i"]), int(r["j"])) for r in csv.DictReader(fh)]
        ids = [v for e in edges for v in e]
        memberships: list[NDArray] = []
        weights = None
        if membership_csv is not None:
            with open(membership_csv, newline="") as fh:
                rows = list(csv.DictReader(fh))
            levels = [k for k in rows[0] if k != "region"]
            ids += [int(r["region"]) for r in rows]
            n = max(ids) + 1
            for lev in levels:
                m = np.full(n, -1, dtype=np.int64)
                for r in rows:
                    m[int(r["region"])] = int(r[lev])
                memberships.append(m)
        if weights_csv is not None:
            with open(weights_csv, newline="") as fh:
                wrows = list(csv.DictReader(fh))
            ids += [int(r["region"]) for r in wrows]
            n = max(ids) + 1
            weights = np.full(n, np.nan)
            for r in wrows:
                weights[int(r["region"])] = float(r["weight"])
            if np.isnan(weights).any():
                raise ValueError("weights file does not cover every region")
        n = max(ids) + 1 if ids else 0
        return cls(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), weights, memberships)


def car_first_order(graph: RegionGraph, rho: float, tau: float = 1.0) -> SparseMatrix:
    """``tau * D_w (I - rho * D_w^{-1} W)``: degree on the diagonal, ``-tau*rho`` on edges."""
    if not abs(rho) < 1:
        raise ValueError("first-order CAR needs |rho| < 1")
    if not graph.is_connected():
        warnings.warn("region graph is not connected", stacklevel=2)
    deg = graph.degrees()
    if np.any(deg == 0):
        raise NotPositiveDefiniteError("isolated region: zero row in first-order CAR precision")
    e = graph.edges
    n = graph.n
    off = np.full(len(e), -tau * rho)
    q = SparseMatrix.from_triplets(
        np.r_[np.arange(n), e[:, 0], e[:, 1]],
        np.r_[np.arange(n), e[:, 1], e[:, 0]],
        np.r_[tau * deg.astype(float), off, off],
        (n, n),
    )
    _require_spd(q, f"first-order CAR precision (rho={rho}, tau={tau})")
    return q


def aggregation_matrix(graph: RegionGraph, level: int) -> SparseMatrix:
    """Population-weighted averaging onto the coarse regions of ``level``.

    Row ``k`` holds ``w_i / sum(w over region k)`` for each member ``i``.
    """
    if graph.weights is None:
        raise ValueError("aggregation needs region weights")
    member = graph.memberships[level]
    ncoarse = int(member.max()) + 1
    totals = np.bincount(member, weights=graph.weights, minlength=ncoarse)
    if np.any(totals <= 0):
        bad = int(np.flatnonzero(totals <= 0)[0])
        raise ValueError(f"coarse region {bad} has zero total weight")
    keep = graph.weights > 0
    idx = np.arange(graph.n)[keep]
    return SparseMatrix.from_triplets(
        member[keep], idx, graph.weights[keep] / totals[member[keep]], (ncoarse, graph.n)
    )


def frk_car_assemble(
    a_basis: SparseMatrix,
    b_basis: SparseMatrix,
    k: NDArray[np.float64],
    q_xi: SparseMatrix,
    r: SparseMatrix | None = None,
    b_fine: SparseMatrix | None = None,
    pad: bool = True,
):
    """Build the FRK-CAR model with ``A = (A_basis, I)`` and ``B = (B_basis, B_fine)``.

    The prior precision is ``bdiag(K^{-1}, Q_xi)``. ``b_fine`` maps
    observations to fine-scale cells and defaults to the identity (one
    observation per cell). With ``pad=True`` the precision gets explicit zeros
    wherever ``A^T A`` needs them, which here means the off-diagonal blocks at
    the nonzeros of ``A_basis`` and its transpose.
    """
    from takvar.conditions import pad_Q
    from takvar.model import HierarchicalModel

    k = np.asarray(k, dtype=np.float64)
    nb = k.shape[0]
    nxi = q_xi.shape[0]
    if k.shape != (nb, nb) or a_basis.shape[1] != nb or b_basis.shape[1] != nb:
        raise ValueError("basis matrices and K disagree on the number of basis functions")
    if a_basis.shape[0] != nxi:
        raise ValueError("A_basis must have one row per fine-scale cell")
    try:
        kc = np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("K is not positive definite") from exc
    kinv = np.linalg.inv(kc).T @ np.linalg.inv(kc)
    kinv = (kinv + kinv.T) / 2
    if b_fine is None:
        b_fine = SparseMatrix.identity(nxi)
    if b_fine.shape != (b_basis.shape[0], nxi):
        raise ValueError("B_fine must be (observations x fine cells)")
    m = b_basis.shape[0]
    q = block_diag([SparseMatrix.from_dense(kinv), q_xi])
    a = hstack([a_basis, SparseMatrix.identity(nxi)])
    b = hstack([b_basis, b_fine])
    r = SparseMatrix.identity(m) if r is None else r
    if pad:
        q = pad_Q(q, a)
    return HierarchicalModel(A=a, B=b, Q=q, R=r)
