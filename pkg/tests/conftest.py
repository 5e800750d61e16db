"""Shared generators and independent dense oracles."""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from takvar.sparse import SparseMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def symmetric_mask(rng, n: int, kind: str = "random", density: float = 0.1, band: int = 2):
    """Boolean symmetric mask with a full diagonal."""
    if kind == "banded":
        i, j = np.indices((n, n))
        mask = np.abs(i - j) <= band
    elif kind == "block":
        sizes = rng.integers(2, max(3, n // 4) + 1, size=n)
        cuts = np.cumsum(sizes)
        cuts = cuts[cuts < n]
        labels = np.searchsorted(cuts, np.arange(n), side="right")
        mask = labels[:, None] == labels[None, :]
        links = rng.random((n, n)) < 1.0 / max(n, 1)
        mask |= links | links.T
    else:
        upper = np.triu(rng.random((n, n)) < density, 1)
        mask = upper | upper.T
    mask = mask.copy()
    np.fill_diagonal(mask, True)
    return mask


def spd_from_mask(rng, mask) -> np.ndarray:
    """Diagonally dominant SPD values on exactly ``mask`` (generic, no zeros)."""
    n = mask.shape[0]
    vals = rng.uniform(0.1, 1.0, (n, n)) * rng.choice([-1.0, 1.0], (n, n))
    vals = np.triu(vals, 1)
    vals = vals + vals.T
    vals = np.where(mask, vals, 0.0)
    np.fill_diagonal(vals, 0.0)
    vals[np.diag_indices(n)] = np.abs(vals).sum(axis=1) + rng.uniform(0.5, 2.0, n)
    return vals


def sparse_from_mask(values: np.ndarray, mask: np.ndarray) -> SparseMatrix:
    rows, cols = np.nonzero(mask)
    return SparseMatrix.from_triplets(rows, cols, values[rows, cols], mask.shape)


def random_spd(rng, n: int, kind: str = "random", **kw) -> tuple[SparseMatrix, np.ndarray]:
    mask = symmetric_mask(rng, n, kind, **kw)
    dense = spd_from_mask(rng, mask)
    return sparse_from_mask(dense, mask), dense


def separation_fill(mask: np.ndarray) -> np.ndarray:
    """Lower factor pattern from the graph definition.

    ``(j, i)`` with ``j > i`` is present iff some path joins ``i`` and ``j``
    with every interior vertex numbered below ``i``. Checked by a BFS from
    ``i`` that may only pass through vertices ``< i``.
    """
    n = mask.shape[0]
    adj = [np.flatnonzero(mask[v] & (np.arange(n) != v)) for v in range(n)]
    out = np.eye(n, dtype=bool)
    for i in range(n):
        seen = {i}
        queue = deque([i])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w in seen:
                    continue
                seen.add(w)
                if w > i:
                    out[w, i] = True
                elif w < i:
                    queue.append(w)
    return out


def dense_boolean_product(*masks: np.ndarray) -> np.ndarray:
    acc = masks[0].astype(np.int64)
    for m in masks[1:]:
        acc = (acc @ m.astype(np.int64)) > 0
        acc = acc.astype(np.int64)
    return acc > 0


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
