import numpy as np
import pytest
from hypothesis import given, strategies as st

from gcorrespond.correspondence import (CorrespondenceError, build_map, h_block_paths,
                                        implied_beta_prior, implied_beta_prior_flat_intercept,
                                        linear_predictor_gap, projection_identity_check, rearrange,
                                        sweep_instances, verify_implied_prior)
from gcorrespond.models import design_matrix, enumerate_hierarchical, parse_formula
from gcorrespond.priors import (InverseGammaMixture, apply_flat_intercept, gprior_logistic,
                                gprior_loglinear, inverse_gram, mixture_ig_params)
from gcorrespond.tables import (ContingencyTable, FactorSpec, cell_permutation, collapse_to_binomial,
                                uniform_table)

from conftest import random_table

PRINTED_T = np.array([
    [0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 1],
])

# rows (x, z) with x fastest inside each half
PRINTED_X_RLL = np.array([
    [1, 0, 0, 0, 1, 0, 0, 0, 0, 0],
    [1, 1, 0, 0, 1, 1, 0, 0, 0, 0],
    [1, 0, 1, 0, 1, 0, 1, 0, 0, 0],
    [1, 0, 0, 1, 1, 0, 0, 1, 0, 0],
    [1, 1, 0, 1, 1, 1, 0, 1, 1, 0],
    [1, 0, 1, 1, 1, 0, 1, 1, 0, 1],
    [0, 0, 0, 0, 1, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 1, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 1, 1, 0, 1, 1, 0],
    [0, 0, 0, 0, 1, 0, 1, 1, 0, 1],
])

PRINTED_X_RLL_NO_YZ = np.array([
    [1, 0, 0, 1, 0, 0, 0, 0, 0],
    [1, 1, 0, 1, 1, 0, 0, 0, 0],
    [1, 0, 1, 1, 0, 1, 0, 0, 0],
    [1, 0, 0, 1, 0, 0, 1, 0, 0],
    [1, 1, 0, 1, 1, 0, 1, 1, 0],
    [1, 0, 1, 1, 0, 1, 1, 0, 1],
    [0, 0, 0, 1, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 1, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 1, 0, 0],
    [0, 0, 0, 1, 1, 0, 1, 1, 0],
    [0, 0, 0, 1, 0, 1, 1, 0, 1],
])


def _skeleton(factors):
    return ContingencyTable(tuple(factors), np.zeros(int(np.prod([f.levels for f in factors])), dtype=int))


def _system(model, factors, outcome="Y"):
    m = build_map(model, outcome, factors)
    return m, rearrange(design_matrix(_skeleton(factors), model), m)


class TestPrintedFixtures:
    def test_map_three_way(self, m1, m1_factors):
        m = build_map(m1, "Y", m1_factors)
        np.testing.assert_array_equal(m.T, PRINTED_T)
        np.testing.assert_array_equal(m.T_r, np.hstack([np.eye(4), np.zeros((4, 6))]))
        assert [m.label_strings()[j] for j in m.permutation] == [
            "Y", "XY[1,1]", "XY[2,1]", "YZ", "Intercept", "X[1]", "X[2]", "Z", "XZ[1,1]", "XZ[2,1]"]
        assert m.q == 1 and m.level_product == 1

    def test_rearranged_three_way(self, m1, m1_factors):
        _, s = _system(m1, m1_factors)
        within = cell_permutation([3, 2], first_fastest=True)
        order = np.concatenate([within, 6 + within])
        np.testing.assert_array_equal(s.X_rll[order], PRINTED_X_RLL)

    def test_without_yz(self, m1_factors):
        model = parse_formula("XY+XZ", "XYZ")
        m, s = _system(model, m1_factors)
        assert m.q == 2 and m.level_product == 2
        assert m.T_r.shape == (3, 9)
        np.testing.assert_array_equal(m.T_r, np.hstack([np.eye(3), np.zeros((3, 6))]))
        # canonical order already cycles the dropped factor slowest
        np.testing.assert_array_equal(s.X_rll, PRINTED_X_RLL_NO_YZ)

    def test_saturated_two_by_two(self):
        factors = (FactorSpec("Y", 2), FactorSpec("X", 2))
        m, s = _system(parse_formula("YX"), factors)
        X_lt = np.array([[1.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(s.X_star, X_lt)
        assert s.square_block()


class TestMap:
    def test_rows_one_hot(self, m1, m1_factors):
        m = build_map(m1, "Y", m1_factors)
        assert np.all(m.T.sum(axis=1) == 1)
        labels = m.label_strings()
        assert all("Y" in labels[j] for j in m.selected)

    def test_m2_pairs(self):
        factors = [FactorSpec(n, 2) for n in "YABCDE"]
        m = build_map(parse_formula("YAB+YCD+YE", "YABCDE"), "Y", factors)
        assert m.logistic == parse_formula("AB+CD+E", role="logistic", outcome="Y")
        assert m.pairs() == [("Y", "Intercept"), ("YA", "A"), ("YB", "B"), ("YC", "C"), ("YD", "D"),
                             ("YE", "E"), ("YAB", "AB"), ("YCD", "CD")]

    def test_errors(self, m1_factors):
        with pytest.raises(CorrespondenceError):
            build_map(parse_formula("XY"), "W", m1_factors)
        with pytest.raises(CorrespondenceError):
            build_map(parse_formula("XY"), "X", m1_factors)

    def test_nonbijective_same_targets(self, m1, m1_factors):
        a = build_map(m1, "Y", m1_factors)
        b = build_map(parse_formula("XY+YZ"), "Y", m1_factors)
        assert a.logistic == b.logistic
        assert a.pairs() == b.pairs()
        assert a.T.shape != b.T.shape

    def test_level_bookkeeping(self):
        for f, facs in list(sweep_instances(4, 3))[::37]:
            m = build_map(f, "Y", facs)
            assert m.n_ll == 2 * m.level_product * m.n_lt


class TestRearrange:
    @given(st.data())
    def test_block_form(self, data):
        levels = data.draw(st.lists(st.integers(2, 3), min_size=1, max_size=3))
        ypos = data.draw(st.integers(0, len(levels)))
        names = list("ABC"[: len(levels)])
        names.insert(ypos, "Y")
        levels.insert(ypos, 2)
        factors = [FactorSpec(n, l) for n, l in zip(names, levels)]
        model = data.draw(st.sampled_from(list(enumerate_hierarchical(names, containing=["Y"]))))
        m, s = _system(model, factors)
        half, nb = s.half, m.n_beta
        assert np.all(s.X_rll[half:, :nb] == 0)
        np.testing.assert_array_equal(s.X_rll[:half, nb:], s.X_rll[half:, nb:])
        X_lt = m.logistic_design().matrix
        np.testing.assert_array_equal(s.X_star, np.tile(X_lt, (m.level_product, 1)))

    def test_square_block_only_when_covariates_saturated(self):
        factors = [FactorSpec(n, 2) for n in "YAB"]
        _, s = _system(parse_formula("YA+YB+AB"), factors)
        assert s.square_block()
        _, s = _system(parse_formula("YA+YB"), factors)
        assert not s.square_block()

    def test_malformed_design(self, m1, m1_factors):
        m = build_map(m1, "Y", m1_factors)
        X = design_matrix(_skeleton(m1_factors), m1).matrix.copy()
        X[0, 3] = 1.0 - X[0, 3]
        with pytest.raises(CorrespondenceError):
            rearrange(X, m)
        with pytest.raises(CorrespondenceError):
            rearrange(X[:, :5], m)


class TestImpliedPrior:
    def test_m1_matches_logistic(self, m1, m1_factors):
        rng = np.random.default_rng(0)
        t = random_table(rng, m1_factors, N=321)
        m = build_map(m1, "Y", m1_factors)
        lam = gprior_loglinear(design_matrix(t, m1), t)
        beta = implied_beta_prior(lam, m)
        b = collapse_to_binomial(t, "Y", m.retained)
        direct = gprior_logistic(design_matrix(b, m.logistic), b)
        np.testing.assert_allclose(beta.sigma, direct.sigma, rtol=1e-10, atol=1e-14)
        assert m.n_lt == 6
        assert np.all(beta.mean == 0)

    def test_intercept_only_logistic(self):
        factors = (FactorSpec("Y", 2), FactorSpec("A", 3))
        t = uniform_table(factors, 60)
        model = parse_formula("Y+A")
        m = build_map(model, "Y", factors)
        beta = implied_beta_prior(gprior_loglinear(design_matrix(t, model), t), m)
        assert beta.sigma.shape == (1, 1)
        assert beta.sigma[0, 0] == pytest.approx(4 / 60, rel=1e-12)

    def test_flat_intercept_unchanged(self, m1, m1_factors):
        rng = np.random.default_rng(1)
        t = random_table(rng, m1_factors)
        m = build_map(m1, "Y", m1_factors)
        X = design_matrix(t, m1)
        std = implied_beta_prior(gprior_loglinear(X, t), m)
        flat, _ = apply_flat_intercept(gprior_loglinear(X, t), X)
        via_flat = implied_beta_prior_flat_intercept(flat, m)
        np.testing.assert_allclose(via_flat.sigma, std.sigma, rtol=1e-10, atol=1e-14)
        # dispatch through the generic entry point as well
        np.testing.assert_allclose(implied_beta_prior(flat, m).sigma, std.sigma, rtol=1e-10, atol=1e-14)

    def test_flat_intercept_scalar_case(self):
        factors = (FactorSpec("Y", 2), FactorSpec("A", 2))
        t = uniform_table(factors, 80)
        model = parse_formula("Y+A")
        X = design_matrix(t, model)
        flat, _ = apply_flat_intercept(gprior_loglinear(X, t), X)
        beta = implied_beta_prior_flat_intercept(flat, build_map(model, "Y", factors), g=80.0)
        assert beta.sigma[0, 0] * beta.g_law.value() == pytest.approx(4 * 80 / 80)

    def test_flat_logistic_differs_in_intercept_only(self, m1, m1_factors):
        rng = np.random.default_rng(2)
        t = random_table(rng, m1_factors)
        m = build_map(m1, "Y", m1_factors)
        implied = implied_beta_prior(gprior_loglinear(design_matrix(t, m1), t), m)
        b = collapse_to_binomial(t, "Y", m.retained)
        Xb = design_matrix(b, m.logistic)
        own_flat, _ = apply_flat_intercept(gprior_logistic(Xb, b), Xb)
        # slopes keep the implied covariance; the intercept coordinate is gone
        np.testing.assert_allclose(own_flat.sigma, implied.sigma[1:, 1:], rtol=1e-10, atol=1e-14)
        assert own_flat.dim == implied.dim - 1

    def test_wrong_dimension(self, m1, m1_factors):
        m = build_map(m1, "Y", m1_factors)
        t = uniform_table(m1_factors, 100)
        p = gprior_loglinear(design_matrix(t, parse_formula("XY")), t)
        with pytest.raises(CorrespondenceError):
            implied_beta_prior(p, m)


class TestImpliedPriorIdentity:
    def test_m1_report(self, m1, m1_factors):
        r = verify_implied_prior(m1, m1_factors, "Y", N=500)
        assert r["pass"] and r["max_rel_diff"] < 1e-10
        assert set(r["rel_diff"]) == {"direct", "schur", "analytic"}

    def test_unit_information(self, m1, m1_factors):
        # g = N gives the unit-information logistic prior 4 n_lt (X'X)^-1
        m = build_map(m1, "Y", m1_factors)
        t = uniform_table(m1_factors, 240)
        implied = implied_beta_prior(gprior_loglinear(design_matrix(t, m1), t), m, g=240)
        X_lt = m.logistic_design().matrix
        np.testing.assert_allclose(240 * implied.sigma, 4 * m.n_lt * inverse_gram(X_lt), rtol=1e-10,
                                   atol=1e-12)

    def test_mixture_grid(self, m1, m1_factors):
        a, b = mixture_ig_params(500, 100)
        law = InverseGammaMixture(a, b)
        grid = law.value() * np.array([0.95, 0.99, 1.0, 1.02, 1.05])
        for g in grid:
            assert verify_implied_prior(m1, m1_factors, "Y", N=500, g=g)["pass"]

    def test_paths_agree_without_square_block(self):
        factors = [FactorSpec("Y", 2), FactorSpec("A", 3), FactorSpec("B", 2)]
        _, s = _system(parse_formula("YA+YB"), factors)
        paths = h_block_paths(s)
        assert not s.square_block()
        np.testing.assert_allclose(paths["direct"], paths["analytic"], rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(paths["schur"], paths["analytic"], rtol=1e-10, atol=1e-13)

    def test_failures_are_reported(self, m1_factors):
        r = verify_implied_prior(parse_formula("XZ"), m1_factors, "Y")
        assert r["pass"] is False and "error" in r


class TestProjection:
    @pytest.mark.parametrize("c", [2.0, 5.0, 10.0, -3.0])
    def test_random(self, c):
        rng = np.random.default_rng(int(abs(c)))
        X = rng.standard_normal((15, 4))
        assert projection_identity_check(X, c) < 1e-12

    def test_square_full_rank(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert projection_identity_check(X, 2.0) < 1e-15

    @pytest.mark.parametrize("c", [0, 1])
    def test_bad_c(self, c):
        with pytest.raises(ValueError):
            projection_identity_check(np.eye(3), c)


class TestLinearPredictor:
    def test_m1(self, m1, m1_factors):
        m = build_map(m1, "Y", m1_factors)
        lam = np.random.default_rng(3).standard_normal((m.n_lambda, 1000))
        assert linear_predictor_gap(m, lam) < 1e-12

    def test_dropped_factor(self, m1_factors):
        m = build_map(parse_formula("XY+XZ"), "Y", m1_factors)
        lam = np.random.default_rng(4).standard_normal((m.n_lambda, 200))
        assert linear_predictor_gap(m, lam) < 1e-12
