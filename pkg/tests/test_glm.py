import math

import numpy as np
import pytest

from vclasso.glm import (
    DEFAULT_ACTIVE_VALUES,
    Family,
    GlmProblem,
    LikelihoodSpec,
    generate_working_example,
    nll,
    nll_batch,
    nll_grad,
)

ALL_FAMILIES = ["normal", "bernoulli", "poisson", "negbinomial", "cauchy"]


def small_problem(family, rng, n=40, p=6):
    problem, _ = generate_working_example(
        n=n, p=p, active_values=[-1.0, 0.7], noise_sd=1.0,
        seed=int(rng.integers(1 << 30)), family=family,
    )
    return problem


class TestValidation:
    def test_bernoulli_rejects_noninteger(self):
        X = np.ones((3, 2))
        with pytest.raises(ValueError, match="row 1"):
            GlmProblem(X, np.array([0.0, 0.5, 1.0]), LikelihoodSpec("bernoulli"))

    def test_poisson_rejects_negative(self):
        X = np.ones((2, 1))
        with pytest.raises(ValueError, match="nonnegative integer"):
            GlmProblem(X, np.array([1.0, -2.0]), LikelihoodSpec("poisson"))

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            GlmProblem(np.ones((3, 2)), np.ones(4), LikelihoodSpec("normal"))
        with pytest.raises(ValueError):
            GlmProblem(np.ones((3, 2)), np.ones(3), LikelihoodSpec("normal"),
                       penalized_mask=np.ones(3, bool))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            LikelihoodSpec("gamma")

    def test_nonfinite_rejected(self):
        X = np.ones((2, 1))
        X[0, 0] = np.inf
        with pytest.raises(ValueError):
            GlmProblem(X, np.zeros(2), LikelihoodSpec("normal"))


class TestKnownValues:
    def test_standard_normal_constant(self):
        n = 17
        prob = GlmProblem(np.ones((n, 1)), np.zeros(n), LikelihoodSpec("normal", aux=0.0))
        assert nll(prob, np.zeros(1)) == pytest.approx(n / 2 * np.log(2 * np.pi), rel=1e-14)

    def test_bernoulli_at_zero_is_nlog2(self):
        rng = np.random.default_rng(0)
        n = 23
        prob = GlmProblem(
            rng.standard_normal((n, 3)),
            rng.integers(0, 2, n).astype(float),
            LikelihoodSpec("bernoulli"),
        )
        assert nll(prob, np.zeros(3)) == pytest.approx(n * np.log(2), rel=1e-14)

    def test_poisson_matches_scalar_logpmf(self):
        # independent scalar oracle: per-observation log pmf in pure math,
        # summed with fsum
        rng = np.random.default_rng(3)
        prob = small_problem("poisson", rng, n=30, p=4)
        beta = rng.normal(scale=0.3, size=4)
        eta = prob.X @ beta
        terms = []
        for yi, ei in zip(prob.y, eta):
            mu = math.exp(ei)
            terms.append(-(yi * math.log(mu) - mu - math.lgamma(yi + 1.0)))
        assert nll(prob, beta) == pytest.approx(math.fsum(terms), rel=1e-12)

    def test_negbinomial_matches_scalar_logpmf(self):
        rng = np.random.default_rng(4)
        prob = small_problem("negbinomial", rng, n=30, p=4)
        beta = rng.normal(scale=0.3, size=4)
        aux = 0.4  # r = e^0.4
        r = math.exp(aux)
        eta = prob.X @ beta
        terms = []
        for yi, ei in zip(prob.y, eta):
            mu = math.exp(ei)
            lp = (
                math.lgamma(yi + r)
                - math.lgamma(r)
                - math.lgamma(yi + 1.0)
                + r * math.log(r / (r + mu))
                + yi * math.log(mu / (r + mu))
            )
            terms.append(-lp)
        assert nll(prob, beta, aux) == pytest.approx(math.fsum(terms), rel=1e-12)

    def test_cauchy_matches_scipy_logpdf(self):
        from scipy.stats import cauchy

        rng = np.random.default_rng(5)
        prob = small_problem("cauchy", rng, n=25, p=4)
        beta = rng.normal(scale=0.5, size=4)
        aux = -0.3
        expected = -cauchy.logpdf(prob.y, loc=prob.X @ beta, scale=math.exp(aux)).sum()
        assert nll(prob, beta, aux) == pytest.approx(expected, rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_matches_central_differences(self, family):
        rng = np.random.default_rng(11)
        prob = small_problem(family, rng)
        for _ in range(100):
            beta = rng.normal(scale=0.4, size=prob.p)
            aux = rng.normal(scale=0.4)
            g_beta, g_aux = nll_grad(prob, beta, aux)
            h = 1e-6
            for j in range(prob.p):
                e = np.zeros(prob.p)
                e[j] = h
                fd = (nll(prob, beta + e, aux) - nll(prob, beta - e, aux)) / (2 * h)
                assert g_beta[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)
            fd_aux = (nll(prob, beta, aux + h) - nll(prob, beta, aux - h)) / (2 * h)
            if prob.likelihood.n_aux:
                assert g_aux == pytest.approx(fd_aux, rel=1e-5, abs=1e-7)
            else:
                assert g_aux == 0.0

    def test_normal_gradient_zero_at_least_squares(self):
        rng = np.random.default_rng(12)
        prob = small_problem("normal", rng, n=60, p=5)
        beta_hat, *_ = np.linalg.lstsq(prob.X, prob.y, rcond=None)
        g_beta, _ = nll_grad(prob, beta_hat, 0.0)
        np.testing.assert_allclose(g_beta, 0.0, atol=1e-9)
        # explicit form -X'(y - X beta)/sigma2
        beta = rng.normal(size=5)
        g_beta, _ = nll_grad(prob, beta, 0.0)
        np.testing.assert_allclose(g_beta, -prob.X.T @ (prob.y - prob.X @ beta), rtol=1e-12)

    def test_bernoulli_gradient_at_zero(self):
        rng = np.random.default_rng(13)
        prob = small_problem("bernoulli", rng)
        g_beta, _ = nll_grad(prob, np.zeros(prob.p), 0.0)
        np.testing.assert_allclose(g_beta, -prob.X.T @ (prob.y - 0.5), rtol=1e-12)


class TestInvariants:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_row_permutation_invariance(self, family):
        rng = np.random.default_rng(21)
        prob = small_problem(family, rng)
        beta = rng.normal(scale=0.3, size=prob.p)
        perm = rng.permutation(prob.n)
        prob2 = GlmProblem(prob.X[perm], prob.y[perm], prob.likelihood)
        assert nll(prob, beta, 0.2) == pytest.approx(nll(prob2, beta, 0.2), rel=1e-12)

    def test_normal_nll_minimized_at_least_squares(self):
        rng = np.random.default_rng(22)
        prob = small_problem("normal", rng, n=80, p=5)
        beta_hat, *_ = np.linalg.lstsq(prob.X, prob.y, rcond=None)
        base = nll(prob, beta_hat, 0.0)
        for _ in range(20):
            other = beta_hat + rng.normal(scale=0.5, size=5)
            assert nll(prob, other, 0.0) >= base - 1e-6

    def test_batch_matches_scalar_bitwise(self):
        rng = np.random.default_rng(23)
        for family in ALL_FAMILIES:
            prob = small_problem(family, rng)
            betas = rng.normal(scale=0.3, size=(7, prob.p))
            auxs = rng.normal(scale=0.2, size=7)
            values, g_beta, g_aux = nll_batch(prob, betas, auxs)
            for b in range(7):
                # BLAS may pick different kernels for B=1 vs B=7, so agreement
                # is to machine precision rather than bitwise
                assert values[b] == pytest.approx(nll(prob, betas[b], auxs[b]), rel=1e-13)
                gb, ga = nll_grad(prob, betas[b], auxs[b])
                np.testing.assert_allclose(gb, g_beta[b], rtol=1e-12, atol=1e-12)
                assert ga == pytest.approx(g_aux[b], rel=1e-12, abs=1e-12)


class TestWorkingExample:
    def test_default_shapes_and_truth(self):
        prob, beta = generate_working_example(seed=1)
        assert prob.X.shape == (250, 50)
        np.testing.assert_array_equal(beta[:6], DEFAULT_ACTIVE_VALUES)
        np.testing.assert_array_equal(beta[6:], 0.0)
        assert prob.likelihood.family == "normal"

    def test_normal_moments(self):
        # y = X beta + eps with X ~ N(0, I): E[y] = 0, var(y) = |beta|^2 + sd^2
        ys = []
        for seed in range(40):
            prob, beta = generate_working_example(n=250, seed=seed)
            ys.append(prob.y)
        y = np.concatenate(ys)
        var_expect = float(np.sum(np.square(DEFAULT_ACTIVE_VALUES))) + 1.0
        assert abs(y.mean()) < 3 * np.sqrt(var_expect / y.size)
        assert y.var() == pytest.approx(var_expect, rel=0.05)

    def test_seed_determinism_bitwise(self):
        a, _ = generate_working_example(seed=9, family="poisson")
        b, _ = generate_working_example(seed=9, family="poisson")
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_two_dim_toy(self):
        prob, beta = generate_working_example(
            n=100, p=2, active_values=[-2.0, 2.0], seed=3
        )
        np.testing.assert_array_equal(beta, [-2.0, 2.0])
        assert prob.X.shape == (100, 2)

    def test_all_families_generate(self):
        for family in ALL_FAMILIES:
            prob, _ = generate_working_example(n=50, p=8, seed=2, family=family)
            assert prob.n == 50 and prob.p == 8
