"""Matrix Market coordinate I/O that keeps explicitly stored zeros."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io

from takvar.sparse import SparseMatrix

STRUCTURAL_ZEROS_COMMENT = " structural-zeros: preserved"


def write_matrix(path: str | Path, m: SparseMatrix, symmetric: bool | None = None) -> None:
    """Write ``m`` in coordinate format (1-based indices).

    Symmetric storage is used only when both structure and values are
    symmetric; stored zeros are written as explicit ``0`` entries.
    """
    if symmetric is None:
        symmetric = m.is_symmetric()
    scipy.io.mmwrite(
        str(path),
        m.to_scipy().tocoo(),
        comment=STRUCTURAL_ZEROS_COMMENT,
        field="real",
        symmetry="symmetric" if symmetric else "general",
    )


def read_matrix(path: str | Path) -> SparseMatrix:
    path = Path(path)
    header = path.open().readline()
    if not header.startswith("%%MatrixMarket") or "coordinate" not in header:
        raise ValueError(f"{path}: not a Matrix Market coordinate file")
    m = scipy.io.mmread(str(path))
    if not hasattr(m, "tocoo"):
        raise ValueError(f"{path}: expected a sparse coordinate matrix")
    coo = m.tocoo()
    if np.iscomplexobj(coo.data):
        raise ValueError(f"{path}: complex matrices are not supported")
    return SparseMatrix.from_triplets(coo.row, coo.col, coo.data.astype(np.float64), coo.shape)
