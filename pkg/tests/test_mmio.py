from __future__ import annotations

import numpy as np
import pytest

from conftest import random_spd
from takvar.mmio import read_matrix, write_matrix
from takvar.sparse import SparseMatrix


def test_general_round_trip_keeps_zeros(tmp_path):
    m = SparseMatrix.from_triplets([0, 2, 1], [0, 1, 3], [1.5, 0.0, -2.0], (3, 4))
    write_matrix(tmp_path / "m.mtx", m)
    text = (tmp_path / "m.mtx").read_text()
    assert "general" in text and "structural-zeros: preserved" in text
    out = read_matrix(tmp_path / "m.mtx")
    assert out.shape == (3, 4)
    assert out.pattern() == m.pattern()
    np.testing.assert_array_equal(out.data, m.data)


def test_symmetric_round_trip_keeps_zeros(rng, tmp_path):
    p, _ = random_spd(rng, 12, "block")
    rows, cols, vals = p.triplets()
    extra = SparseMatrix.from_triplets(np.r_[rows, 0, 11], np.r_[cols, 11, 0], np.r_[vals, 0.0, 0.0], p.shape)
    write_matrix(tmp_path / "s.mtx", extra)
    assert "symmetric" in (tmp_path / "s.mtx").read_text().splitlines()[0]
    out = read_matrix(tmp_path / "s.mtx")
    assert out.pattern() == extra.pattern()
    np.testing.assert_array_equal(out.to_dense(), extra.to_dense())


def test_one_based_indices(tmp_path):
    write_matrix(tmp_path / "e.mtx", SparseMatrix.from_triplets([0], [0], [7.0], (1, 1)))
    body = [l for l in (tmp_path / "e.mtx").read_text().splitlines() if not l.startswith("%")]
    assert body[1].split()[:2] == ["1", "1"]


@pytest.mark.parametrize("content", ["not a matrix\n", "%%MatrixMarket matrix array real general\n1 1\n1.0\n"])
def test_rejects_bad_files(tmp_path, content):
    (tmp_path / "bad.mtx").write_text(content)
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "bad.mtx")
