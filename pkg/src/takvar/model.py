"""The hierarchical model consumed by the variance engines, and its on-disk bundle."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from takvar.mmio import read_matrix, write_matrix
from takvar.sparse import (
    SparseMatrix,
    check_nonnegative,
    pattern_add,
    pattern_mul,
    with_pattern,
)

__all__ = ["HierarchicalModel", "assemble_precision", "save_bundle", "load_bundle"]


@dataclass(frozen=True)
class HierarchicalModel:
    """Prediction operator ``A`` (N x n), observation operator ``B`` (m x n),
    prior precision ``Q`` (n x n) and diagonal error precision ``R`` (m x m).
    """

    A: SparseMatrix
    B: SparseMatrix
    Q: SparseMatrix
    R: SparseMatrix

    def __post_init__(self) -> None:
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {self.Q.shape}")
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns, Q has order {n}")
        if self.B.shape[1] != n:
            raise ValueError(f"B has {self.B.shape[1]} columns, Q has order {n}")
        m = self.B.shape[0]
        if self.R.shape != (m, m):
            raise ValueError(f"R must be {m} x {m}, got {self.R.shape}")
        check_nonnegative(self.A, "A")
        check_nonnegative(self.B, "B")
        if not self.R.is_diagonal():
            raise ValueError("R must be diagonal")
        if m and not np.all(self.R.diagonal() > 0):
            raise ValueError("R must have a positive diagonal")
        if not self.Q.is_symmetric():
            raise ValueError("Q must be symmetric")
        if n and not np.all(self.Q.diagonal() > 0):
            raise ValueError("Q must have a positive diagonal")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def with_Q(self, q: SparseMatrix) -> "HierarchicalModel":
        return replace(self, Q=q)


def assemble_precision(model: HierarchicalModel) -> SparseMatrix:
    """Computed posterior precision ``B^T R B + Q``.

    The structure is that of the computed operation: every position reached by
    the product or present in ``Q`` is stored, even where values cancel.
    """
    pattern = pattern_add(pattern_mul(model.B.T, model.R, model.B), model.Q)
    b = model.B.to_scipy()
    values = (b.T @ model.R.to_scipy() @ b) + model.Q.to_scipy()
    p = with_pattern(values, pattern)
    # B^T R B is symmetric in exact arithmetic; enforce it bitwise
    sym = SparseMatrix.from_scipy(p.to_scipy().T)
    return SparseMatrix(p.shape, p.indptr, p.indices, 0.5 * (p.data + sym.data))


def save_bundle(
    model: HierarchicalModel,
    directory: str | Path,
    padded: bool = False,
    seed: int | None = None,
    **extra,
) -> Path:
    """Write A/B/Q/R as Matrix Market files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in "ABQR":
        write_matrix(d / f"{name}.mtx", getattr(model, name))
    manifest = {
        "n": model.n,
        "m": model.m,
        "N": model.N,
        "padded": padded,
        "seed": seed,
        "files": {name: f"{name}.mtx" for name in "ABQR"},
        **extra,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_bundle(directory: str | Path) -> tuple[HierarchicalModel, dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    files = manifest.get("files", {name: f"{name}.mtx" for name in "ABQR"})
    mats = {name: read_matrix(d / files[name]) for name in "ABQR"}
    model = HierarchicalModel(**mats)
    for key, value in (("n", model.n), ("m", model.m), ("N", model.N)):
        if key in manifest and manifest[key] != value:
            raise ValueError(f"manifest {key}={manifest[key]} disagrees with matrices ({value})")
    return model, manifest
