from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from takvar.bench import car1d_model, frk_car_model
from takvar.cholesky import cholesky
from takvar.conditions import pad_Q
from takvar.model import HierarchicalModel, assemble_precision
from takvar.sparse import SparseMatrix
from takvar.takahashi import takahashi
from takvar.variance import (
    PHASES,
    ConditionCheckFailed,
    compute_variances,
    relative_error_summary,
    variances_cond_sim,
    variances_direct,
    variances_sparse_inv,
)


def _dense_variances(model: HierarchicalModel) -> np.ndarray:
    p = assemble_precision(model).to_dense()
    a = model.A.to_dense()
    return np.einsum("ij,ij->i", a, np.linalg.solve(p, a.T).T)


def _prior_only(q: SparseMatrix, a: SparseMatrix) -> HierarchicalModel:
    n = q.shape[0]
    return HierarchicalModel(A=a, B=SparseMatrix.zeros((0, n)), Q=q, R=SparseMatrix.zeros((0, 0)))


class TestDirect:
    def test_identity_prediction(self):
        model = _prior_only(SparseMatrix.identity(4, 4.0), SparseMatrix.identity(4))
        d = variances_direct(model, cholesky(assemble_precision(model))).d
        np.testing.assert_array_equal(d, np.full(4, 0.25))

    @pytest.mark.parametrize("kind", ["random", "banded", "block"])
    def test_against_dense_inverse(self, rng, kind):
        q, _ = random_spd(rng, 40, kind)
        a = SparseMatrix.from_dense(rng.uniform(0, 1, (30, 40)) * (rng.random((30, 40)) < 0.2))
        model = _prior_only(q, a)
        d = variances_direct(model, cholesky(assemble_precision(model))).d
        np.testing.assert_allclose(d, _dense_variances(model), rtol=1e-10)

    def test_ordering_invariance(self):
        model = car1d_model(80, 300, 200, seed=4)
        p = assemble_precision(model)
        d_nat = variances_direct(model, cholesky(p, "natural")).d
        d_rcm = variances_direct(model, cholesky(p, "rcm")).d
        np.testing.assert_allclose(d_rcm, d_nat, rtol=1e-10)

    def test_threads_give_identical_output(self):
        model = car1d_model(60, 900, 150, seed=2)
        f = cholesky(assemble_precision(model))
        np.testing.assert_array_equal(variances_direct(model, f, 1).d, variances_direct(model, f, 4).d)

    def test_empty_prediction_rows(self):
        a = SparseMatrix.from_triplets([1], [2], [1.0], (3, 4))
        model = _prior_only(SparseMatrix.identity(4, 2.0), a)
        d = variances_direct(model, cholesky(assemble_precision(model))).d
        np.testing.assert_allclose(d, [0.0, 0.5, 0.0], rtol=1e-15)


class TestSparseInverse:
    def test_identity_gives_marginals(self, rng):
        q, dense = random_spd(rng, 20, "banded")
        model = _prior_only(q, SparseMatrix.identity(20))
        subset = takahashi(cholesky(q))
        d = variances_sparse_inv(model, subset).d
        np.testing.assert_allclose(d, subset.marginal_variances(), rtol=0)
        np.testing.assert_allclose(d, np.diag(np.linalg.inv(dense)), rtol=1e-12)

    def test_matches_direct_on_car_model(self):
        model = car1d_model(100, 1000, 1000, seed=0)
        f = cholesky(assemble_precision(model))
        d_direct = variances_direct(model, f).d
        d_sinv = variances_sparse_inv(model, takahashi(f)).d
        assert np.max(np.abs(d_sinv - d_direct) / d_direct) < 1e-10

    def test_matches_direct_small_case_with_cross_check(self):
        model = car1d_model(100, 500, 300, seed=8)
        f = cholesky(assemble_precision(model))
        d = variances_sparse_inv(model, takahashi(f)).d
        np.testing.assert_allclose(d, variances_direct(model, f).d, rtol=1e-10)
        np.testing.assert_allclose(d, _dense_variances(model), rtol=1e-10)

    def test_refuses_when_condition_fails(self):
        model = frk_car_model(60, 6, seed=1)
        subset = takahashi(cholesky(assemble_precision(model)))
        with pytest.raises(ConditionCheckFailed, match="condition check failed") as info:
            variances_sparse_inv(model, subset)
        assert info.value.report.witnesses

    def test_padding_restores_exactness(self):
        model = frk_car_model(60, 6, seed=1)
        padded = model.with_Q(pad_Q(model.Q, model.A))
        f = cholesky(assemble_precision(padded))
        d = variances_sparse_inv(padded, takahashi(f)).d
        np.testing.assert_allclose(d, _dense_variances(model), rtol=1e-10)

    def test_unsafe_skip_reads_missing_as_zero(self):
        model = frk_car_model(60, 6, seed=1)
        rep = variances_sparse_inv(model, takahashi(cholesky(assemble_precision(model))), unsafe_skip_check=True)
        assert rep.op_counts["missing_reads"] > 0


class TestHadamardInvariance:
    def _setup(self, seed):
        rng = np.random.default_rng(seed)
        q, _ = random_spd(rng, 15, "random", density=0.3)
        a = SparseMatrix.from_dense(rng.uniform(0.5, 1, (6, 15)) * (rng.random((6, 15)) < 0.25))
        model = _prior_only(pad_Q(q, a), a)
        subset = takahashi(cholesky(assemble_precision(model)))
        return model, subset

    @pytest.mark.parametrize("seed", range(5))
    def test_untouched_entries_do_not_matter(self, seed):
        model, subset = self._setup(seed)
        base = variances_sparse_inv(model, subset).d
        perm = subset.permutation
        ata = model.A.to_dense().T @ model.A.to_dense() != 0
        lower = subset.symbolic.Ls_pattern
        cols = np.repeat(np.arange(lower.shape[1]), np.diff(lower.indptr))
        rows = lower.indices
        changed_any = False
        for pos, (i, j) in enumerate(zip(rows, cols)):
            values = subset.lower_values.copy()
            values[pos] += 1.0
            d = variances_sparse_inv(model, subset.with_lower_values(values)).d
            if ata[perm.perm[i], perm.perm[j]]:
                changed_any |= not np.array_equal(d, base)
            else:
                np.testing.assert_array_equal(d, base)
        assert changed_any


class TestConditionalSimulation:
    def test_converges_for_many_draws(self):
        model = car1d_model(20, 15, 40, seed=1)
        f = cholesky(assemble_precision(model))
        d = variances_direct(model, f).d
        d_hat = variances_cond_sim(model, f, M=20000, seed=3).d
        np.testing.assert_allclose(d_hat, d, rtol=0.05)

    def test_deterministic(self):
        model = car1d_model(30, 20, 50, seed=1)
        f = cholesky(assemble_precision(model))
        a = variances_cond_sim(model, f, M=50, seed=7)
        b = variances_cond_sim(model, f, M=50, seed=7, threads=3)
        np.testing.assert_array_equal(a.d, b.d)
        assert a.rng and a.seed == 7 and a.M == 50

    def test_needs_two_draws(self):
        model = car1d_model(10, 5, 20)
        with pytest.raises(ValueError):
            variances_cond_sim(model, cholesky(assemble_precision(model)), M=1)

    def test_unbiased_over_seeds(self):
        model = car1d_model(20, 20, 30, seed=6)
        f = cholesky(assemble_precision(model))
        d = variances_direct(model, f).d
        draws = np.array([variances_cond_sim(model, f, M=50, seed=s).d for s in range(200)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - d) < 3 * se)


class TestRelativeError:
    def test_exact_gives_zero(self):
        d = np.array([1.0, 2.0, 3.0])
        assert relative_error_summary(d, {10: d}) == [(10, 0.0, 0.0)]

    def test_constant_inflation(self):
        d = np.array([1.0, 2.0, 3.0])
        ((M, r, s),) = relative_error_summary(d, {20: 1.21 * d})
        assert M == 20
        assert r == pytest.approx(0.1)
        assert s == pytest.approx(0.0, abs=1e-15)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            relative_error_summary(np.array([1.0, 0.0]), {10: np.ones(2)})

    def test_spread_decays_like_inverse_root(self):
        model = car1d_model(200, 400, 1000, seed=11)
        f = cholesky(assemble_precision(model))
        d = variances_direct(model, f).d
        Ms = list(range(10, 101, 10))
        rows = relative_error_summary(d, {M: variances_cond_sim(model, f, M, seed=M).d for M in Ms})
        slope = np.polyfit(np.log(Ms), np.log([s for _, _, s in rows]), 1)[0]
        assert -0.65 <= slope <= -0.35


class TestComputeVariances:
    def test_phases_and_total(self):
        model = car1d_model(50, 100, 200, seed=1)
        for method, phases in (
            ("direct", {"Cholesky", "Solve", "Hadamard"}),
            ("sparse_inv", {"Cholesky", "PartInv", "Hadamard"}),
            ("cond_sim", {"Cholesky", "Sim", "Interp"}),
        ):
            rep = compute_variances(model, method)
            assert set(rep.timings) == phases
            assert rep.total_time == pytest.approx(sum(rep.timings.values()))
            assert rep.dominant_phase in PHASES
            assert "Assemble" in rep.extra and "Assemble" not in rep.timings
            assert np.all(rep.d >= 0)

    def test_padding_never_changes_direct_output(self):
        model = frk_car_model(80, 8, seed=2)
        a = compute_variances(model, "direct", ordering="natural").d
        b = compute_variances(model, "direct", ordering="natural", pad=True).d
        np.testing.assert_allclose(b, a, rtol=1e-12)

    def test_sparse_inv_needs_padding(self):
        model = frk_car_model(80, 8, seed=2)
        with pytest.raises(ConditionCheckFailed):
            compute_variances(model, "sparse_inv")
        d = compute_variances(model, "sparse_inv", pad=True).d
        np.testing.assert_allclose(d, compute_variances(model, "direct").d, rtol=1e-9)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            compute_variances(car1d_model(10, 5, 5), "lanczos")

    def test_outputs(self, tmp_path):
        rep = compute_variances(car1d_model(30, 12, 40), "sparse_inv")
        rep.write_csv(tmp_path / "d.csv")
        rep.write_telemetry(tmp_path / "t.json")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "index,d" and len(lines) == 13
        tel = json.loads((tmp_path / "t.json").read_text())
        assert tel["method"] == "sparse_inv"
        assert tel["condition"]["theorem"] is True
        assert set(tel["op_counts"]) >= {"Cholesky", "PartInv", "Hadamard"}


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 60), st.integers(1, 80), st.integers(1, 120), st.integers(0, 2**31 - 1))
def test_methods_agree_when_condition_holds(n, N, m, seed):
    model = car1d_model(n, N, m, seed=seed)
    f = cholesky(assemble_precision(model))
    d_direct = variances_direct(model, f).d
    d_sinv = variances_sparse_inv(model, takahashi(f)).d
    pos = d_direct > 0
    assert np.all(np.abs(d_sinv[pos] - d_direct[pos]) / d_direct[pos] < 1e-9)
