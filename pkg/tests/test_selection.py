import numpy as np
import pytest

from gcorrespond.inference.selection import (GraphicalSpace, ModelPosterior, SelectionError, SelectionSettings,
                                             default_prior_builder, select_models)
from gcorrespond.models import design_matrix, enumerate_hierarchical, parse_formula
from gcorrespond.priors import InverseGammaMixture, mixture_ig_params
from gcorrespond.tables import FactorSpec, collapse_to_binomial, simulate_table, uniform_table


def _two_factor(lam, N, seed):
    factors = (FactorSpec("X", 2), FactorSpec("Y", 2))
    return simulate_table(factors, parse_formula("XY"), np.asarray(lam, dtype=float), N, seed=seed)


@pytest.fixture(scope="module")
def three_factor():
    factors = [FactorSpec("A", 2), FactorSpec("B", 3), FactorSpec("C", 2)]
    model = parse_formula("AB+BC", "ABC")
    X = design_matrix(uniform_table(factors, 12), model)
    lam = np.r_[0, 0.2 * np.ones(X.n_params - 1)]
    lam[-4:] = [0.3, -0.3, 0.2, 0.1]
    return simulate_table(factors, model, lam, 200, seed=5)


class TestEnumeration:
    def test_strong_association(self):
        t = _two_factor([0.0, 0.0, 0.0, 1.5], 500, seed=1)
        post = select_models(GraphicalSpace("XY"), t, SelectionSettings(mode="enumerate"))
        assert post.probability(parse_formula("XY")) > 0.95

    def test_independence(self):
        t = _two_factor([0.0, 0.4, -0.3, 0.0], 20_000, seed=2)
        post = select_models(GraphicalSpace("XY"), t, SelectionSettings(mode="enumerate"))
        assert post.modal() == parse_formula("X+Y")

    def test_probabilities_normalized(self, three_factor):
        post = select_models(GraphicalSpace("ABC"), three_factor, SelectionSettings(mode="enumerate"))
        assert len(post.probabilities) == 8
        assert sum(post.probabilities.values()) == pytest.approx(1.0, abs=1e-12)

    def test_arbitrary_stream(self, three_factor):
        models = list(enumerate_hierarchical("ABC"))
        post = select_models(models, three_factor, SelectionSettings(mode="enumerate"))
        assert len(post.probabilities) == len(models)
        graphical = select_models(GraphicalSpace("ABC"), three_factor, SelectionSettings(mode="enumerate"))
        # ratios between graphical models do not depend on which other models are present
        a, b = parse_formula("AB+BC"), parse_formula("AB+C")
        assert post.probability(a) / post.probability(b) == pytest.approx(
            graphical.probability(a) / graphical.probability(b), rel=1e-10)

    def test_logistic_space(self, three_factor):
        b = collapse_to_binomial(three_factor, "A")
        post = select_models(GraphicalSpace("ABC", "logistic", "A"), b, SelectionSettings(mode="enumerate"))
        assert set(post.probabilities) == {parse_formula("B+C", role="logistic", outcome="A"),
                                           parse_formula("BC", role="logistic", outcome="A")}

    def test_mixture_nodes(self, three_factor):
        law = InverseGammaMixture(*mixture_ig_params(three_factor.N, 1e4))
        fixed = select_models(GraphicalSpace("ABC"), three_factor, SelectionSettings(mode="enumerate"))
        mixed = select_models(GraphicalSpace("ABC"), three_factor,
                              SelectionSettings(mode="enumerate", g_law=law, quad_nodes=15))
        assert mixed.modal() == fixed.modal()
        assert mixed.total_variation(fixed) < 0.1


class TestReversibleJump:
    def test_agrees_with_enumeration(self, three_factor):
        space = GraphicalSpace("ABC")
        exact = select_models(space, three_factor, SelectionSettings(mode="enumerate"))
        rj = select_models(space, three_factor, SelectionSettings(iterations=100_000, burn_in=2_000, seed=1))
        assert rj.total_variation(exact) < 0.05
        assert sum(rj.visits.values()) == 100_000
        assert 0 < rj.acceptance_rate < 1

    def test_reproducible(self, three_factor):
        s = SelectionSettings(iterations=2_000, burn_in=200, seed=4)
        a = select_models(GraphicalSpace("ABC"), three_factor, s)
        b = select_models(GraphicalSpace("ABC"), three_factor, s)
        assert a.probabilities == b.probabilities

    def test_flat_intercept_logistic(self, three_factor):
        b = collapse_to_binomial(three_factor, "A")
        post = select_models(GraphicalSpace("ABC", "logistic", "A"), b,
                             SelectionSettings(iterations=3_000, burn_in=300, flat_intercept=True, seed=2))
        assert sum(post.probabilities.values()) == pytest.approx(1.0)

    def test_errors(self, three_factor):
        with pytest.raises(SelectionError):
            select_models(GraphicalSpace("ABC"), three_factor, SelectionSettings(mode="gibbs"))
        with pytest.raises(SelectionError):
            select_models(list(enumerate_hierarchical("ABC")), three_factor, SelectionSettings())
        with pytest.raises(SelectionError):
            select_models(GraphicalSpace("ABC", "logistic", "A"), three_factor, SelectionSettings(mode="enumerate"))


class TestScenario:
    @pytest.mark.parametrize("var_g", [None, 1.0, 100.0])
    def test_modal_models_stable_under_mixture(self, scenario_table, var_g):
        law = None if var_g is None else InverseGammaMixture(*mixture_ig_params(scenario_table.N, var_g))
        names = scenario_table.names
        ll = select_models(GraphicalSpace(names), scenario_table,
                           SelectionSettings(iterations=20_000, burn_in=2_000, seed=3, g_law=law))
        assert ll.modal() == parse_formula("YAB+YCD+YE", names)
        b = collapse_to_binomial(scenario_table, "Y")
        lt = select_models(GraphicalSpace(names, "logistic", "Y"), b, SelectionSettings(mode="enumerate", g_law=law))
        assert lt.modal() == parse_formula("AB+CD+E", role="logistic", outcome="Y")


class TestPosteriorObject:
    def test_top_and_dict(self):
        a, b = parse_formula("X+Y"), parse_formula("XY")
        post = ModelPosterior({a: 0.25, b: 0.75}, method="enumerate")
        assert post.top(1) == [(b, 0.75)]
        d = post.to_dict("XY")
        assert d["top"][0] == {"model": "log(mu) = XY", "probability": 0.75}
        other = ModelPosterior({a: 1.0})
        assert post.total_variation(other) == pytest.approx(0.75)

    def test_prior_builder_flat(self, three_factor):
        X = design_matrix(three_factor, parse_formula("AB"))
        prior, design = default_prior_builder(flat_intercept=True)(X, three_factor)
        assert prior.intercept_flat and design.shape == X.matrix.shape
        np.testing.assert_allclose(design[:, 1:].sum(axis=0), 0, atol=1e-12)
