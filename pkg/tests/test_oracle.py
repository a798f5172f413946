"""Quadrature, importance sampling, and Gibbs against independent references."""

import itertools
import math

import numpy as np
import pytest

from nvb.errors import SizeError
from nvb.meanfield import evaluate_Mp, optimize
from nvb.oracle import (
    b_gap_check,
    gibbs_sample,
    logz_importance_mc,
    logz_quadrature,
    posterior_lln_check,
    sample_posterior_exact,
)
from nvb.priors import Prior, Tilt, cumulant
from nvb.regression import Decomposition, DesignSpec, decompose, generate_design, sample_response

TWO_POINT = Prior.two_point()
UNIFORM = Prior.uniform()


def make_dec(A, z, sigma2=1.0, ddiag=None):
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float)
    ddiag = np.zeros(z.size) if ddiag is None else np.asarray(ddiag, dtype=float)
    return Decomposition(A=A, Ddiag=ddiag, z=z, d=ddiag / sigma2)


def enumerate_logz_two_point(dec, sigma2):
    """Independent exhaustive oracle for atom priors at tiny p."""
    p = dec.p
    total = []
    for signs in itertools.product([-1.0, 1.0], repeat=p):
        beta = np.array(signs)
        f = -(beta @ dec.A @ beta - 2 * dec.z @ beta) / (2 * sigma2)
        f += -0.5 * (beta**2) @ dec.d + p * math.log(0.5)
        total.append(f)
    total = np.asarray(total)
    m = total.max()
    raw = m + math.log(np.exp(total - m).sum())
    c0 = sum(cumulant(TWO_POINT, Tilt(0.0, di)).c for di in dec.d)
    return raw - c0


def random_coupled(p, seed, coupling=0.3, sigma2=1.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, p))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0.0)
    if p > 1:
        a *= coupling / max(np.abs(a).sum(axis=1).max(), 1e-12)
    return make_dec(a, rng.standard_normal(p), sigma2=sigma2, ddiag=rng.uniform(0.3, 1.5, p))


class TestQuadrature:
    def test_p1_identity(self):
        for prior in (TWO_POINT, UNIFORM):
            dec = make_dec(np.zeros((1, 1)), [0.7], sigma2=2.0, ddiag=[1.1])
            est = logz_quadrature(dec, prior, 2.0)
            want = (
                cumulant(prior, Tilt(0.35, 0.55)).c - cumulant(prior, Tilt(0.0, 0.55)).c
            )
            assert est.log_z == pytest.approx(want, abs=1e-10)
            assert est.std_error == 0.0

    def test_p2_product_factorization(self):
        dec = make_dec(np.zeros((2, 2)), [0.4, -0.9], ddiag=[0.5, 2.0])
        for prior in (TWO_POINT, UNIFORM):
            est = logz_quadrature(dec, prior, 1.0)
            want = sum(
                cumulant(prior, Tilt(z, d)).c - cumulant(prior, Tilt(0.0, d)).c
                for z, d in zip(dec.z, dec.d)
            )
            assert est.log_z == pytest.approx(want, abs=1e-10)

    def test_p3_coupled_matches_enumeration(self):
        dec = random_coupled(3, seed=4, coupling=0.6)
        est = logz_quadrature(dec, TWO_POINT, 1.0)
        assert est.log_z == pytest.approx(enumerate_logz_two_point(dec, 1.0), abs=1e-12)
        assert est.refinement_delta == 0.0

    def test_size_guard(self):
        dec = make_dec(np.zeros((7, 7)), np.zeros(7))
        with pytest.raises(SizeError):
            logz_quadrature(dec, TWO_POINT, 1.0)

    def test_refinement_delta_smooth_prior(self):
        dec = random_coupled(2, seed=8, coupling=0.4)
        est24 = logz_quadrature(dec, UNIFORM, 1.0, nodes_per_dim=24)
        est48 = logz_quadrature(dec, UNIFORM, 1.0, nodes_per_dim=48)
        assert est24.refinement_delta <= 1e-8
        assert abs(est48.log_z - est24.log_z) <= est24.refinement_delta + 1e-14

    def test_posterior_moments_decoupled(self):
        dec = make_dec(np.zeros((2, 2)), [0.8, -0.2], ddiag=[1.0, 1.0])
        _, (means, seconds) = logz_quadrature(dec, TWO_POINT, 1.0, with_moments=True)
        np.testing.assert_allclose(means, np.tanh(dec.z), atol=1e-12)
        np.testing.assert_allclose(seconds, 1.0, atol=1e-12)

    def test_variational_lower_bound(self):
        for seed in range(6):
            p = 2 + seed % 4
            dec = random_coupled(p, seed=seed + 30, coupling=0.5)
            sol = optimize(dec, TWO_POINT, 1.0, restarts=4, seed=seed)
            est = logz_quadrature(dec, TWO_POINT, 1.0)
            assert est.log_z >= sol.value - 1e-6


class TestImportanceMC:
    def test_decoupled_zero_variance(self):
        dec = make_dec(np.zeros((3, 3)), [0.5, -0.5, 1.0], ddiag=[1.0, 0.5, 2.0])
        sol = optimize(dec, TWO_POINT, 1.0, restarts=2, seed=0)
        est = logz_importance_mc(dec, TWO_POINT, 1.0, sol, 4000, seed=1)
        assert est.std_error <= 1e-9
        assert est.log_z == pytest.approx(sol.value, abs=1e-9)
        assert est.ess == pytest.approx(4000, rel=1e-9)

    def test_p4_within_3se_of_quadrature(self):
        dec = random_coupled(4, seed=14, coupling=0.6)
        sol = optimize(dec, TWO_POINT, 1.0, restarts=4, seed=0)
        quad = logz_quadrature(dec, TWO_POINT, 1.0)
        est = logz_importance_mc(dec, TWO_POINT, 1.0, sol, 200_000, seed=2)
        assert abs(est.log_z - quad.log_z) <= 3 * max(est.std_error, 1e-6)

    def test_p50_spiked_lower_bound(self):
        spec = DesignSpec(kind="spiked", n=1000, p=50, intensity=0.75, seed=3)
        inst = sample_response(generate_design(spec), np.full(50, 0.3), 1.0, seed=4)
        dec = decompose(inst)
        sol = optimize(dec, TWO_POINT, 1.0, restarts=4, seed=0)
        est = logz_importance_mc(dec, TWO_POINT, 1.0, sol, 100_000, seed=5)
        assert est.log_z >= sol.value - 5 * est.std_error
        assert not est.ess_warning


class TestGibbs:
    def test_decoupled_marginals(self):
        dec = make_dec(np.zeros((3, 3)), [0.6, -0.3, 0.0], ddiag=[1.0, 1.0, 1.0])
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 4000, burn_in=100, thin=2, seed=7)
        want = np.tanh(dec.z)
        n_eff = chain.n_samples
        for i in range(3):
            se = math.sqrt(1.0 - want[i] ** 2 + 1e-12) / math.sqrt(n_eff)
            assert chain.samples[:, i].mean() == pytest.approx(want[i], abs=4 * se + 0.01)

    def test_p2_state_frequencies(self):
        dec = random_coupled(2, seed=21, coupling=0.5)
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 6000, burn_in=200, thin=3, seed=9)
        # exact 4-state Boltzmann weights
        states = list(itertools.product([-1.0, 1.0], repeat=2))
        logps = []
        for s in states:
            beta = np.array(s)
            logps.append(
                -(beta @ dec.A @ beta - 2 * dec.z @ beta) / 2.0 - 0.5 * (beta**2) @ dec.d
            )
        logps = np.asarray(logps)
        probs = np.exp(logps - logps.max())
        probs /= probs.sum()
        for s, want in zip(states, probs):
            freq = np.mean(np.all(chain.samples == np.array(s), axis=1))
            se = math.sqrt(want * (1 - want) / chain.n_samples)
            assert freq == pytest.approx(want, abs=4 * se + 0.01)

    def test_seed_reproducibility(self):
        dec = random_coupled(3, seed=2, coupling=0.4)
        a = gibbs_sample(dec, TWO_POINT, 1.0, 50, burn_in=10, thin=1, seed=1)
        b = gibbs_sample(dec, TWO_POINT, 1.0, 50, burn_in=10, thin=1, seed=1)
        c = gibbs_sample(dec, TWO_POINT, 1.0, 50, burn_in=10, thin=1, seed=2)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_one_sweep_preserves_exact_posterior_moments(self):
        dec = random_coupled(2, seed=33, coupling=0.5)
        n = 20000
        start = sample_posterior_exact(dec, TWO_POINT, 1.0, n, seed=3)
        _, (means, seconds) = logz_quadrature(dec, TWO_POINT, 1.0, with_moments=True)
        swept = np.empty_like(start)
        for r in range(n):
            ch = gibbs_sample(
                dec, TWO_POINT, 1.0, 1, burn_in=0, thin=1, seed=100 + r, init=start[r]
            )
            swept[r] = ch.samples[0]
        for i in range(2):
            se = math.sqrt(max(seconds[i] - means[i] ** 2, 1e-12) / n)
            assert swept[:, i].mean() == pytest.approx(means[i], abs=4 * se + 0.005)
            assert (swept[:, i] ** 2).mean() == pytest.approx(seconds[i], abs=0.005)


class TestLlnCheck:
    def test_decoupled_prediction_exact(self):
        p = 4
        dec = make_dec(np.zeros((p, p)), [0.5, -0.5, 0.2, 0.0], ddiag=np.ones(p))
        sol = optimize(dec, TWO_POINT, 1.0, restarts=2, seed=0)
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 4000, burn_in=100, thin=2, seed=3)
        post, pred, diff = posterior_lln_check(chain, sol, TWO_POINT, dec.d, "x*t")
        se = 1.0 / math.sqrt(p * chain.n_samples)
        assert diff <= 4 * se + 0.01

    def test_p3_second_moment_vs_quadrature(self):
        dec = random_coupled(3, seed=40, coupling=0.5)
        sol = optimize(dec, UNIFORM, 1.0, restarts=2, seed=0)
        chain = gibbs_sample(dec, UNIFORM, 1.0, 2500, burn_in=200, thin=2, seed=5)
        _, (means, seconds) = logz_quadrature(dec, UNIFORM, 1.0, with_moments=True)
        post, _, _ = posterior_lln_check(chain, sol, UNIFORM, dec.d, "x^2")
        want = float(seconds.mean())
        se = 0.5 / math.sqrt(chain.n_samples)
        assert post == pytest.approx(want, abs=4 * se + 0.01)

    def test_beta0_pairing(self):
        p = 3
        dec = make_dec(np.zeros((p, p)), [0.3, 0.3, 0.3], ddiag=np.ones(p))
        sol = optimize(dec, TWO_POINT, 1.0, restarts=1, seed=0)
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 1000, burn_in=50, thin=1, seed=6)
        beta0 = np.array([0.5, -0.5, 0.0])
        post, pred, diff = posterior_lln_check(
            chain, sol, TWO_POINT, dec.d, "x*beta0", beta0=beta0
        )
        assert pred == pytest.approx(float(sol.u_hat @ beta0 / p), abs=1e-12)
        assert diff <= 0.05


class TestBGap:
    def test_decoupled_gap_vanishes(self):
        dec = make_dec(np.zeros((3, 3)), [0.4, -0.1, 0.9], ddiag=np.ones(3))
        sol = optimize(dec, TWO_POINT, 1.0, restarts=2, seed=0)
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 100, burn_in=20, thin=1, seed=1)
        mean_mpb, rp, gap = b_gap_check(chain, dec, TWO_POINT, 1.0, sol)
        assert gap == pytest.approx(0.0, abs=1e-9)
        assert mean_mpb == pytest.approx(rp, abs=1e-8)

    def test_p4_gap_nonnegative_and_bounded(self):
        dec = random_coupled(4, seed=50, coupling=0.5)
        sol = optimize(dec, TWO_POINT, 1.0, restarts=4, seed=0)
        chain = gibbs_sample(dec, TWO_POINT, 1.0, 400, burn_in=100, thin=2, seed=2)
        _, rp, gap = b_gap_check(chain, dec, TWO_POINT, 1.0, sol)
        assert gap >= -1e-9
        quad = logz_quadrature(dec, TWO_POINT, 1.0)
        # the gap cannot exceed the full variational slack plus coupling scale
        assert gap <= (quad.log_z - rp) / dec.p + 0.5
