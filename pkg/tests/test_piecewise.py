"""Closed-form piecewise distribution against independent numerical oracles."""

import itertools

import numpy as np
import pytest

from pwvae import piecewise as pw
from pwvae import tensor as T

from gradcheck import max_rel_err, numerical_grad


def random_params(rng, n):
    return pw.PiecewiseParams(np.exp(rng.uniform(-2.0, 2.0, size=n)))


def aligned_grid(n, target):
    """Midpoint grid whose size is a multiple of n, so no point sits on a boundary."""
    per = max(1, target // n)
    m = per * n
    return (np.arange(m) + 0.5) / m, m


def quadrature_pdf_mass(p, target=10_000):
    grid, m = aligned_grid(p.n, target)
    vals = pw.pdf_rows(np.tile(p.a, (m, 1)), grid)
    return vals.sum() / m


def quadrature_kl(post, prior, target=100_000):
    grid, m = aligned_grid(post.n, target)
    q = pw.pdf_rows(np.tile(post.a, (m, 1)), grid)
    r = pw.pdf_rows(np.tile(prior.a, (m, 1)), grid)
    return float(np.sum(q * np.log(q / r)) / m)


def bisect_inverse_cdf(p, eps, iters=80):
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pw.cdf(p, mid) < eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ks_uniform(samples):
    s = np.sort(samples)
    n = len(s)
    i = np.arange(1, n + 1)
    return max(float(np.max(i / n - s)), float(np.max(s - (i - 1) / n)))


class TestDensity:
    def test_uniform_density(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        assert pw.pdf(p, 0.3) == 1.0

    def test_hand_integrated_density(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        assert pw.pdf(p, 0.25) == pytest.approx(0.5, abs=1e-15)
        assert pw.pdf(p, 0.75) == pytest.approx(1.5, abs=1e-15)

    def test_mass_integrates_to_one(self):
        rng = np.random.default_rng(100)
        for n in (2, 3, 5, 10):
            for _ in range(25):
                p = random_params(rng, n)
                assert abs(quadrature_pdf_mass(p) - 1.0) < 1e-8

    def test_domain_errors(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        for fn in (pw.pdf, pw.cdf, pw.inverse_cdf):
            with pytest.raises(pw.DomainError):
                fn(p, -0.01)
            with pytest.raises(pw.DomainError):
                fn(p, 1.01)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            pw.PiecewiseParams([1.0])
        with pytest.raises(ValueError):
            pw.PiecewiseParams([1.0, -1.0])
        with pytest.raises(ValueError):
            pw.PiecewiseParams([1.0, np.inf])


class TestCdf:
    def test_uniform_cdf_is_identity(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        for z in np.linspace(0, 1, 17):
            assert pw.cdf(p, float(z)) == pytest.approx(z, abs=1e-15)

    def test_hand_integrated_cdf(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        assert pw.cdf(p, 0.5) == pytest.approx(0.25, abs=1e-15)
        assert pw.cdf(p, 0.75) == pytest.approx(0.625, abs=1e-15)

    def test_endpoints_exact(self):
        rng = np.random.default_rng(101)
        for n in (2, 3, 5, 10):
            p = random_params(rng, n)
            assert pw.cdf(p, 0.0) == 0.0
            assert pw.cdf(p, 1.0) == 1.0

    def test_monotone(self):
        rng = np.random.default_rng(102)
        p = random_params(rng, 5)
        zs = np.linspace(0, 1, 301)
        vals = [pw.cdf(p, float(z)) for z in zs]
        assert np.all(np.diff(vals) >= 0)


class TestInverseCdf:
    def test_uniform_identity(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        assert pw.inverse_cdf(p, 0.7) == pytest.approx(0.7, abs=1e-15)

    def test_hand_round_trip(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        assert pw.inverse_cdf(p, 0.625) == pytest.approx(0.75, abs=1e-15)

    def test_round_trip_and_bisection_oracle(self):
        rng = np.random.default_rng(103)
        for n in (2, 3, 5, 10):
            p = random_params(rng, n)
            eps = rng.random(1000)
            z = pw.inverse_cdf_rows(np.tile(p.a, (1000, 1)), eps)
            back = pw.cdf_rows(np.tile(p.a, (1000, 1)), z)
            assert np.max(np.abs(back - eps)) < 1e-12
            for e in eps[:25]:
                assert abs(pw.inverse_cdf(p, float(e)) - bisect_inverse_cdf(p, float(e))) < 1e-10

    def test_boundary_mass_assigns_right_segment(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        # Cumulative mass of segment 1 is 0.25; exactly there, use segment 2.
        assert pw.inverse_cdf(p, 0.25) == pytest.approx(0.5, abs=1e-15)

    def test_endpoints(self):
        p = pw.PiecewiseParams([2.0, 5.0, 1.0])
        assert pw.inverse_cdf(p, 0.0) == 0.0
        assert pw.inverse_cdf(p, 1.0) == 1.0


class TestSampling:
    def test_uniform_params_pass_ks(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        rng = np.random.default_rng(104)
        samples = pw.inverse_cdf_rows(np.tile(p.a, (100_000, 1)), rng.random(100_000))
        assert ks_uniform(samples) < 0.006

    def test_mass_above_half(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        rng = np.random.default_rng(105)
        samples = pw.inverse_cdf_rows(np.tile(p.a, (100_000, 1)), rng.random(100_000))
        assert abs(np.mean(samples >= 0.5) - 0.75) < 0.01

    def test_fixed_seed_reproducible(self):
        p = pw.PiecewiseParams([0.5, 2.0, 1.0])
        a = [pw.sample(p, np.random.default_rng(42)) for _ in range(5)]
        b = [pw.sample(p, np.random.default_rng(42)) for _ in range(5)]
        assert a == b

    def test_histogram_matches_analytic_masses(self):
        rng = np.random.default_rng(106)
        for n in (2, 3, 5):
            p = random_params(rng, n)
            draws = pw.inverse_cdf_rows(np.tile(p.a, (100_000, 1)), rng.random(100_000))
            bins = np.minimum((draws * n).astype(int), n - 1)
            empirical = np.bincount(bins, minlength=n) / len(draws)
            masses = p.a / p.a.sum()
            tv = 0.5 * np.abs(empirical - masses).sum()
            assert tv < 0.01


class TestSampleGrad:
    def test_matches_finite_differences_uniform(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        for eps in (0.1, 0.25, 0.6, 0.9):
            ana = pw.sample_grad(p, eps)
            num = numerical_grad(lambda a: pw.inverse_cdf(pw.PiecewiseParams(a), eps), p.a)
            assert max_rel_err(ana, num) < 1e-6

    def test_matches_finite_differences_random(self):
        rng = np.random.default_rng(107)
        for n in (2, 3, 5, 10):
            p = random_params(rng, n)
            for _ in range(5):
                eps = float(rng.uniform(0.05, 0.95))
                ana = pw.sample_grad(p, eps)
                num = numerical_grad(lambda a: pw.inverse_cdf(pw.PiecewiseParams(a), eps), p.a)
                assert max_rel_err(ana, num) < 1e-6

    def test_opposite_signs_at_quarter(self):
        p = pw.PiecewiseParams([1.0, 1.0])
        g = pw.sample_grad(p, 0.25)
        assert g[0] < 0 < g[1]

    def test_zero_noise_gives_zero_gradient(self):
        rng = np.random.default_rng(108)
        p = random_params(rng, 4)
        np.testing.assert_array_equal(pw.sample_grad(p, 0.0), np.zeros(4))
        np.testing.assert_array_equal(pw.sample_grad(p, 1.0), np.zeros(4))


class TestKl:
    def test_identical_distributions(self):
        rng = np.random.default_rng(109)
        for n in (2, 3, 5):
            p = random_params(rng, n)
            assert abs(pw.kl(p, p)) < 1e-14

    def test_hand_case(self):
        post = pw.PiecewiseParams([1.0, 3.0])
        prior = pw.PiecewiseParams([1.0, 1.0])
        assert pw.kl(post, prior) == pytest.approx(0.75 * np.log(3.0) - np.log(2.0), abs=1e-9)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(110)
        for n in (2, 3, 5):
            for _ in range(34):
                post, prior = random_params(rng, n), random_params(rng, n)
                closed = pw.kl(post, prior)
                quad = quadrature_kl(post, prior)
                assert abs(closed - quad) <= 1e-6 * max(abs(quad), 1e-3)

    def test_non_negative(self):
        rng = np.random.default_rng(111)
        for _ in range(200):
            n = int(rng.integers(2, 8))
            assert pw.kl(random_params(rng, n), random_params(rng, n)) >= 0.0

    def test_piece_count_mismatch(self):
        with pytest.raises(ValueError, match="piece counts"):
            pw.kl(pw.PiecewiseParams([1.0, 1.0]), pw.PiecewiseParams([1.0, 1.0, 1.0]))


class TestKlGrad:
    def test_zero_at_stationary_point(self):
        rng = np.random.default_rng(112)
        p = random_params(rng, 4)
        d_post, _ = pw.kl_grad(p, p)
        np.testing.assert_allclose(d_post, 0.0, atol=1e-14)

    def test_hand_pair_matches_finite_differences(self):
        post = pw.PiecewiseParams([1.0, 3.0])
        prior = pw.PiecewiseParams([1.0, 1.0])
        d_post, d_prior = pw.kl_grad(post, prior)
        num_post = numerical_grad(lambda a: pw.kl(pw.PiecewiseParams(a), prior), post.a)
        num_prior = numerical_grad(lambda a: pw.kl(post, pw.PiecewiseParams(a)), prior.a)
        assert max_rel_err(d_post, num_post) < 1e-6
        assert max_rel_err(d_prior, num_prior) < 1e-6

    def test_random_pairs_match_finite_differences(self):
        rng = np.random.default_rng(113)
        for n in (2, 3, 5):
            post, prior = random_params(rng, n), random_params(rng, n)
            d_post, d_prior = pw.kl_grad(post, prior)
            num_post = numerical_grad(lambda a: pw.kl(pw.PiecewiseParams(a), prior), post.a)
            num_prior = numerical_grad(lambda a: pw.kl(post, pw.PiecewiseParams(a)), prior.a)
            assert max_rel_err(d_post, num_post) < 1e-6
            assert max_rel_err(d_prior, num_prior) < 1e-6


class TestShiftAndMean:
    def test_shift_to_signed(self):
        assert pw.shift_to_signed(0.0) == -1.0
        assert pw.shift_to_signed(0.5) == 0.0
        assert pw.shift_to_signed(1.0) == 1.0

    def test_uniform_mean(self):
        assert pw.mean(pw.PiecewiseParams([1.0, 1.0])) == pytest.approx(0.5, abs=1e-15)

    def test_hand_mean_and_monte_carlo(self):
        p = pw.PiecewiseParams([1.0, 3.0])
        assert pw.mean(p) == pytest.approx(0.625, abs=1e-12)
        rng = np.random.default_rng(114)
        draws = pw.inverse_cdf_rows(np.tile(p.a, (100_000, 1)), rng.random(100_000))
        se = draws.std() / np.sqrt(len(draws))
        assert abs(draws.mean() - pw.mean(p)) < 3 * se


class TestMultiModality:
    def test_two_maximal_pieces(self):
        p = pw.PiecewiseParams([3.0, 1.0, 3.0])
        densities = p.a / p.normalizer
        assert densities[0] == densities[2] > densities[1]

    def test_product_density_has_exponentially_many_modes(self):
        rng = np.random.default_rng(115)
        for d in range(1, 5):
            peaks = rng.uniform(2.0, 5.0, size=d)
            per_dim = [np.array([c, 1.0, c]) for c in peaks]
            cell_densities = []
            for combo in itertools.product(*[a / (a.sum() / 3.0) for a in per_dim]):
                cell_densities.append(np.prod(combo))
            cell_densities = np.array(cell_densities)
            top = cell_densities.max()
            assert np.sum(np.isclose(cell_densities, top, rtol=1e-12)) == 2**d


class TestHeadForward:
    def test_zero_bias_gives_uniform_weights(self):
        head = pw.PiecewiseHead(weight=None, bias=T.Tensor(np.zeros(6)), dims=2, pieces=3)
        out = pw.head_forward(head)
        np.testing.assert_array_equal(out.data, np.ones(6))

    def test_clamp_prevents_overflow(self):
        head = pw.PiecewiseHead(weight=None, bias=T.Tensor([30.0, 120.0]), dims=1, pieces=2)
        out = pw.head_forward(head)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, np.exp(30.0))

    def test_gradients_through_exponential(self):
        rng = np.random.default_rng(116)
        enc = rng.normal(size=3)
        weight = rng.normal(size=(4, 3)) * 0.5
        bias = rng.normal(size=4) * 0.1

        def forward(w_arr, b_arr, e_arr):
            head = pw.PiecewiseHead(weight=T.Tensor(w_arr), bias=T.Tensor(b_arr), dims=2, pieces=2)
            return pw.head_forward(head, T.Tensor(e_arr))

        with T.Tape() as tape:
            w_t, b_t, e_t = T.Tensor(weight), T.Tensor(bias), T.Tensor(enc)
            head = pw.PiecewiseHead(weight=w_t, bias=b_t, dims=2, pieces=2)
            tape.backward(T.sum_all(pw.head_forward(head, e_t)))
        for tensor, arr, idx in ((w_t, weight, 0), (b_t, bias, 1), (e_t, enc, 2)):
            args = [weight, bias, enc]

            def f(a, i=idx):
                args2 = list(args)
                args2[i] = a
                return float(T.sum_all(forward(*args2)))

            assert max_rel_err(tape.grad(tensor), numerical_grad(f, arr)) < 1e-6


class TestTapedOps:
    def test_sample_through_matches_scalar_path(self):
        rng = np.random.default_rng(117)
        a = np.exp(rng.uniform(-1, 1, size=(3, 4)))
        eps = rng.random(3)
        z = pw.sample_through(T.Tensor(a.reshape(-1)), eps, 3, 4)
        expect = [pw.inverse_cdf(pw.PiecewiseParams(a[i]), float(eps[i])) for i in range(3)]
        np.testing.assert_allclose(z.data, expect, rtol=1e-15)

    def test_sample_through_gradient(self):
        rng = np.random.default_rng(118)
        a = np.exp(rng.uniform(-1, 1, size=(2, 3)))
        eps = rng.uniform(0.1, 0.9, size=2)
        with T.Tape() as tape:
            a_t = T.Tensor(a.reshape(-1))
            z = pw.sample_through(a_t, eps, 2, 3)
            tape.backward(T.sum_all(z))
        num = numerical_grad(
            lambda flat: float(np.sum(pw.inverse_cdf_rows(flat.reshape(2, 3), eps))), a.reshape(-1)
        )
        assert max_rel_err(tape.grad(a_t), num) < 1e-6

    def test_kl_between_matches_scalar_path_and_grad(self):
        rng = np.random.default_rng(119)
        post = np.exp(rng.uniform(-1, 1, size=(3, 5)))
        prior = np.exp(rng.uniform(-1, 1, size=(3, 5)))
        with T.Tape() as tape:
            post_t, prior_t = T.Tensor(post.reshape(-1)), T.Tensor(prior.reshape(-1))
            kl_node = pw.kl_between(post_t, prior_t, 3, 5)
            tape.backward(kl_node)
        expect = sum(pw.kl(pw.PiecewiseParams(post[i]), pw.PiecewiseParams(prior[i])) for i in range(3))
        assert float(kl_node) == pytest.approx(expect, rel=1e-12)
        num = numerical_grad(lambda flat: float(pw.kl_rows(flat.reshape(3, 5), prior).sum()), post.reshape(-1))
        assert max_rel_err(tape.grad(post_t), num) < 1e-6
