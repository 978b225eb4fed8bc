import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from gcorrespond.inference.likelihood import (GLMProblem, deviance, deviance_binomial, fit_mle,
                                              loglik_binomial, loglik_poisson, newton_mode)
from gcorrespond.models import (ModelFormula, design_matrix, enumerate_hierarchical,
                                logistic_to_loglinear_equivalent, parse_formula)
from gcorrespond.tables import BinomialData, ContingencyTable, FactorSpec, collapse_to_binomial

from conftest import random_table


def naive_poisson(counts, mu):
    return math.log(math.prod(math.exp(-m) * m ** n / math.factorial(n) for n, m in zip(counts, mu)))


def naive_binomial(trials, successes, p):
    return math.log(math.prod(math.comb(t, s) * q ** s * (1 - q) ** (t - s)
                              for t, s, q in zip(trials, successes, p)))


class TestPoisson:
    def test_zero_lambda_unit_counts(self):
        t = ContingencyTable((FactorSpec("A", 2), FactorSpec("B", 2)), np.ones(4, dtype=int))
        X = design_matrix(t, parse_formula("AB"))
        assert loglik_poisson(t, X, np.zeros(4)) == pytest.approx(-4.0, abs=1e-15)

    def test_saturated_closed_form(self):
        rng = np.random.default_rng(0)
        factors = (FactorSpec("A", 3), FactorSpec("B", 2))
        t = ContingencyTable(factors, rng.integers(1, 30, 6))
        X = design_matrix(t, parse_formula("AB"))
        n = t.counts.astype(float)
        closed = float(np.sum(n * np.log(n) - n) - sum(math.lgamma(k + 1) for k in n))
        assert loglik_poisson(t, X, fit_mle(t, X)) == pytest.approx(closed, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_naive_product(self, seed):
        rng = np.random.default_rng(seed)
        factors = (FactorSpec("A", 2), FactorSpec("B", 3))
        t = random_table(rng, factors, N=int(rng.integers(0, 40)))
        X = design_matrix(t, parse_formula("A+B"))
        lam = rng.uniform(-1, 1.5, X.n_params)
        mu = np.exp(X.matrix @ lam)
        assert loglik_poisson(t, X, lam) == pytest.approx(naive_poisson(t.counts.tolist(), mu), abs=1e-12)

    def test_clamp_warns(self):
        t = ContingencyTable((FactorSpec("A", 2),), np.array([1, 1]))
        X = design_matrix(t, parse_formula("A"))
        with pytest.warns(RuntimeWarning):
            assert np.isfinite(loglik_poisson(t, X, np.array([-600.0, 0.0])))


class TestBinomial:
    def test_zero_beta(self):
        data = BinomialData((FactorSpec("X", 2),), np.array([5, 8]), np.array([2, 8]))
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        expected = math.log(math.comb(5, 2)) + math.log(math.comb(8, 8)) + 13 * math.log(0.5)
        assert loglik_binomial(data, X, np.zeros(2)) == pytest.approx(expected, rel=1e-14)

    def test_bernoulli(self):
        data = BinomialData((), np.array([1]), np.array([1]))
        b = 0.7
        p = 1 / (1 + math.exp(-b))
        assert loglik_binomial(data, np.ones((1, 1)), [b]) == pytest.approx(math.log(p), rel=1e-14)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_naive_product(self, seed):
        rng = np.random.default_rng(seed)
        trials = rng.integers(1, 25, 4)
        successes = rng.integers(0, trials + 1)
        data = BinomialData((FactorSpec("A", 2), FactorSpec("B", 2)), trials, successes)
        X = design_matrix(data, parse_formula("A+B", role="logistic", outcome="Y"))
        beta = rng.uniform(-2, 2, 3)
        p = 1 / (1 + np.exp(-(X.matrix @ beta)))
        assert loglik_binomial(data, X, beta) == pytest.approx(
            naive_binomial(trials.tolist(), successes.tolist(), p), abs=1e-12)


class TestDeviance:
    def test_saturated_zero(self):
        rng = np.random.default_rng(1)
        t = random_table(rng, (FactorSpec("A", 2), FactorSpec("B", 3), FactorSpec("C", 2)), N=500)
        X = design_matrix(t, parse_formula("ABC"))
        assert deviance(t, X, fit_mle(t, X)) == pytest.approx(0.0, abs=1e-8)

    def test_half_success(self):
        data = BinomialData((), np.array([2]), np.array([1]))
        assert deviance(data, np.ones((1, 1)), fit_mle(data, np.ones((1, 1)))) == pytest.approx(0, abs=1e-14)

    def test_zero_cells(self):
        # 0 log 0 = 0 in both parts of the binomial deviance
        assert deviance_binomial([3, 4], [0, 4], [1e-300, 1.0]) == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.data())
    def test_equivalence_property(self, seed, data):
        rng = np.random.default_rng(seed)
        names = "YABC"
        factors = [FactorSpec(n, 2 if n == "Y" else int(rng.integers(2, 4))) for n in names]
        t = random_table(rng, factors, N=int(rng.integers(200, 2000)))
        logistic = data.draw(st.sampled_from(list(enumerate_hierarchical("ABC"))))
        logistic = ModelFormula(logistic.terms, role="logistic", outcome="Y")
        b = collapse_to_binomial(t, "Y")
        Xb = design_matrix(b, logistic)
        eq = logistic_to_loglinear_equivalent(logistic, "Y", names)
        Xl = design_matrix(t, eq)
        d_lt = deviance(b, Xb, fit_mle(b, Xb))
        d_ll = deviance(t, Xl, fit_mle(t, Xl))
        assert abs(d_lt - d_ll) < 1e-6


class TestNewton:
    def test_intercept_only_logit(self):
        data = BinomialData((), np.array([40]), np.array([13]))
        assert fit_mle(data, np.ones((1, 1)))[0] == pytest.approx(math.log(13 / 27), rel=1e-10)

    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(30), rng.standard_normal((30, 2))])
        trials = rng.integers(5, 20, 30)
        succ = rng.binomial(trials, 0.4)
        problem = GLMProblem("binomial", X, succ, trials)
        theta, H = newton_mode(problem)
        ref = optimize.minimize(lambda b: -problem.loglik(b), np.zeros(3), method="BFGS",
                                options={"gtol": 1e-10})
        np.testing.assert_allclose(theta, ref.x, atol=1e-5)
        np.testing.assert_allclose(H, problem.grad_hess(theta)[1], rtol=1e-12)

    def test_penalized_mode_is_stationary(self):
        rng = np.random.default_rng(3)
        t = random_table(rng, (FactorSpec("A", 2), FactorSpec("B", 2)), N=100)
        X = design_matrix(t, parse_formula("AB")).matrix
        problem = GLMProblem.from_data(t, X)
        P = np.eye(4) * 0.5
        m = np.full(4, 0.3)
        theta, _ = newton_mode(problem, P, m)
        g, _ = problem.grad_hess(theta)
        np.testing.assert_allclose(g - P @ (theta - m), 0, atol=1e-8)

    def test_flat_first_leaves_intercept_free(self):
        data = BinomialData((FactorSpec("X", 2),), np.array([50, 50]), np.array([10, 30]))
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        theta, _ = newton_mode(GLMProblem.from_data(data, X), np.array([[1e6]]), flat_first=True)
        # slope pinned at zero, intercept at the pooled logit
        assert theta[1] == pytest.approx(0, abs=1e-4)
        assert theta[0] == pytest.approx(math.log(40 / 60), abs=1e-4)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            GLMProblem("gamma", np.ones((2, 1)), np.ones(2))
