"""Instance model, A/D/z decomposition, design generators, persistence."""

import numpy as np
import pytest

from nvb.errors import InvalidInputError, ParseError
from nvb.regression import (
    DesignSpec,
    RegressionInstance,
    decompose,
    generate_design,
    load_instance,
    sample_response,
    save_instance,
)


class TestDecompose:
    def test_definitional_split(self):
        # X with X'X = [[2,1],[1,3]]
        x = np.linalg.cholesky(np.array([[2.0, 1.0], [1.0, 3.0]])).T
        inst = RegressionInstance(X=x, y=np.zeros(2), sigma2=1.0)
        dec = decompose(inst)
        np.testing.assert_allclose(dec.A, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(dec.Ddiag, [2.0, 3.0], atol=1e-12)

    def test_orthonormal_columns(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((10, 4)))
        inst = RegressionInstance(X=q, y=np.zeros(10), sigma2=2.0)
        dec = decompose(inst)
        np.testing.assert_allclose(dec.A, 0.0, atol=1e-12)
        np.testing.assert_allclose(dec.Ddiag, 1.0, atol=1e-12)
        np.testing.assert_allclose(dec.d, 0.5, atol=1e-12)

    def test_z_is_xty(self):
        inst = RegressionInstance(
            X=np.array([[1.0, 1.0], [0.0, 1.0]]), y=np.array([1.0, 2.0]), sigma2=1.0
        )
        dec = decompose(inst)
        np.testing.assert_allclose(dec.z, [1.0, 3.0])

    def test_bitfor_bit_reassembly(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((17, 6))
        inst = RegressionInstance(X=x, y=rng.standard_normal(17), sigma2=1.0)
        dec = decompose(inst)
        assert np.array_equal(dec.xtx(), x.T @ x)
        assert np.all(np.diag(dec.A) == 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            RegressionInstance(X=np.eye(3), y=np.zeros(2), sigma2=1.0)


class TestAnovaDesign:
    def test_gram_structure_ptilde4(self):
        inst = generate_design(DesignSpec(kind="anova", ptilde=4))
        p = inst.p
        assert (inst.n, p) == (16, 8)
        xtx = inst.X.T @ inst.X
        a = xtx - np.diag(np.diag(xtx))
        np.testing.assert_allclose(np.diag(xtx), 0.5, atol=1e-14)
        expected = np.zeros((p, p))
        expected[: p // 2, p // 2 :] = 1.0 / p
        expected[p // 2 :, : p // 2] = 1.0 / p
        np.testing.assert_allclose(a, expected, atol=1e-14)

    def test_row_sums_and_trace(self):
        inst = generate_design(DesignSpec(kind="anova", ptilde=8))
        dec = decompose(sample_response(inst, np.zeros(16), 1.0, 0))
        rows = np.abs(dec.A).sum(axis=1)
        np.testing.assert_allclose(rows, 0.5, atol=1e-13)
        assert np.sum(dec.A**2) == pytest.approx(0.5, abs=1e-13)
        assert np.sum(dec.A**2) / dec.p == pytest.approx(1.0 / 32, abs=1e-14)


class TestSpikedDesign:
    def test_zero_intensity_gram_near_identity(self):
        errs = []
        for seed in range(5):
            spec = DesignSpec(kind="spiked", n=4000, p=20, intensity=0.0, seed=seed)
            inst = generate_design(spec)
            errs.append(np.linalg.norm(inst.X.T @ inst.X - np.eye(20), 2))
        # spectral error ~ sqrt(p/n) ~ 0.07
        assert np.median(errs) < 0.25

    def test_rank_one_spike_appears(self):
        spec = DesignSpec(kind="spiked", n=60000, p=10, intensity=1.0, seed=1)
        inst = generate_design(spec)
        gram = inst.X.T @ inst.X
        v = np.full(10, 1.0 / np.sqrt(10))
        np.testing.assert_allclose(gram, np.eye(10) + np.outer(v, v), atol=0.05)

    def test_interpolated_intensity(self):
        spec = DesignSpec(
            kind="spiked", n=100, p=4, intensity=np.array([0.0, 1.0]), seed=0
        )
        xs = np.array([0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(spec.intensity_on_grid(xs), xs)


class TestBernoulliDesign:
    def test_zero_intensity_is_zero_matrix(self):
        inst = generate_design(
            DesignSpec(kind="sparse_bernoulli", n=50, p=10, intensity=0.0, seed=0)
        )
        assert np.all(inst.X == 0.0)

    def test_intensity_cap(self):
        with pytest.raises(InvalidInputError):
            generate_design(
                DesignSpec(kind="sparse_bernoulli", n=10, p=4, intensity=5.0, seed=0)
            )

    def test_coupling_moment_bound(self):
        # constant intensity lam: E sum_{i != j} A_ij^2 <= (lam^4 + lam^2 p^2/n)*1.5
        lam, p = 1.5, 6
        n = 10 * p * p
        vals = []
        for seed in range(40):
            inst = generate_design(
                DesignSpec(kind="sparse_bernoulli", n=n, p=p, intensity=lam, seed=seed)
            )
            xtx = inst.X.T @ inst.X
            a = xtx - np.diag(np.diag(xtx))
            vals.append(np.sum(a**2))
        bound = (lam**4 + lam**2 * p**2 / n) * 1.5
        assert np.mean(vals) <= bound


class TestSampleResponse:
    def test_noiseless_limit(self):
        inst = generate_design(DesignSpec(kind="anova", ptilde=3))
        beta0 = np.linspace(-1, 1, 6)
        out = sample_response(inst, beta0, 1e-12, seed=0)
        np.testing.assert_allclose(out.y, inst.X @ beta0, atol=1e-5)

    def test_zero_signal_mean(self):
        x = np.zeros((10**6, 1))
        inst = RegressionInstance(X=x, sigma2=1.0)
        out = sample_response(inst, np.zeros(1), 1.0, seed=5)
        assert abs(out.y.mean()) <= 4.0 / np.sqrt(10**6)

    def test_seed_determinism(self):
        inst = generate_design(DesignSpec(kind="anova", ptilde=2))
        a = sample_response(inst, np.full(4, 0.2), 1.0, seed=11)
        b = sample_response(inst, np.full(4, 0.2), 1.0, seed=11)
        c = sample_response(inst, np.full(4, 0.2), 1.0, seed=12)
        assert np.array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)

    def test_requires_beta0(self):
        inst = generate_design(DesignSpec(kind="anova", ptilde=2))
        with pytest.raises(InvalidInputError):
            sample_response(inst, None, 1.0, seed=0)


class TestPersistence:
    def test_roundtrip_small(self, tmp_path):
        rng = np.random.default_rng(7)
        inst = RegressionInstance(
            X=rng.standard_normal((3, 2)),
            y=rng.standard_normal(3),
            sigma2=0.37,
            beta0=np.array([0.5, -0.25]),
        )
        path = tmp_path / "inst.json"
        save_instance(inst, str(path), kind="explicit", seed=7)
        back = load_instance(str(path))
        assert np.array_equal(back.X, inst.X)
        assert np.array_equal(back.y, inst.y)
        assert np.array_equal(back.beta0, inst.beta0)
        assert back.sigma2 == inst.sigma2

    def test_roundtrip_large_preserves_gram(self, tmp_path):
        rng = np.random.default_rng(13)
        inst = RegressionInstance(
            X=rng.standard_normal((1000, 100)), y=rng.standard_normal(1000), sigma2=1.0
        )
        path = tmp_path / "big.json"
        save_instance(inst, str(path))
        back = load_instance(str(path))
        assert np.array_equal(back.X, inst.X)
        assert np.array_equal(back.X.T @ back.X, inst.X.T @ inst.X)

    def test_missing_sigma2_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"x_path": "broken.X.csv"}\n')
        with pytest.raises(ParseError):
            load_instance(str(path))

    def test_malformed_csv_reports_line(self, tmp_path):
        inst = RegressionInstance(X=np.eye(2), y=np.zeros(2), sigma2=1.0)
        path = tmp_path / "inst.json"
        save_instance(inst, str(path))
        xcsv = tmp_path / "inst.X.csv"
        lines = xcsv.read_text().splitlines()
        lines[2] = "1.0,oops"
        xcsv.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as err:
            load_instance(str(path))
        assert err.value.line == 3
