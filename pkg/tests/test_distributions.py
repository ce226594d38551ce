import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import log_expit

from minippl import distributions as d
from minippl.autodiff import finite_difference, gradient


class TestLogDensities:
    @given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.1, 5))
    def test_normal(self, x, loc, scale):
        assert d.Normal(loc, scale).log_prob(x) == pytest.approx(stats.norm.logpdf(x, loc, scale), rel=1e-12, abs=1e-12)

    @given(st.floats(0.01, 0.99), st.floats(0.2, 8), st.floats(0.2, 8))
    def test_beta(self, x, a, b):
        assert d.Beta(a, b).log_prob(x) == pytest.approx(stats.beta.logpdf(x, a, b), rel=1e-10, abs=1e-10)

    def test_beta_uniform_is_zero(self):
        assert d.Beta(1.0, 1.0).log_prob(0.5) == 0.0

    def test_beta_boundaries(self):
        assert d.Beta(1.0, 3.0).log_prob(0.0) == pytest.approx(math.log(3.0))
        assert d.Beta(2.0, 3.0).log_prob(0.0) == -math.inf
        assert d.Beta(2.0, 2.0).log_prob(1.5) == -math.inf

    @given(st.floats(-30, 30))
    def test_bernoulli_logits_agree_with_probs(self, logit):
        for x in (0, 1):
            expected = log_expit(logit if x == 1 else -logit)
            assert d.Bernoulli(logits=logit).log_prob(x) == pytest.approx(expected, rel=1e-14, abs=1e-300)

    def test_bernoulli_out_of_support(self):
        assert d.Bernoulli(probs=0.3).log_prob(2) == -math.inf
        assert d.Bernoulli(probs=1.0).log_prob(0) == -math.inf
        assert d.Bernoulli(probs=0.0).log_prob(0) == 0.0

    def test_categorical(self):
        logits = [0.1, -1.0, 2.0]
        expected = np.array(logits) - np.log(np.sum(np.exp(logits)))
        got = [d.Categorical(logits).log_prob(k) for k in range(3)]
        np.testing.assert_allclose(got, expected, rtol=1e-13)
        assert d.Categorical(logits).log_prob(3) == -math.inf

    def test_uniform(self):
        u = d.Uniform(-1.0, 3.0)
        assert u.log_prob(0.0) == pytest.approx(-math.log(4.0))
        assert u.log_prob(3.0) == -math.inf

    def test_deterministic(self):
        assert d.Deterministic(2.0).log_prob(2.0) == 0.0
        assert d.Deterministic(2.0).log_prob(2.5) == -math.inf


class TestBatches:
    def test_batch_shape_from_parameters(self):
        dist = d.Normal([0.0, 1.0, 2.0], 1.0)
        assert dist.batch_shape == (3,)
        assert len(dist.log_prob([0.0, 0.0, 0.0])) == 3

    def test_explicit_shape_broadcasts_scalars(self, rng):
        dist = d.Bernoulli(probs=0.5, shape=50)
        draws = dist.sample(rng)
        assert len(draws) == 50
        assert set(draws) <= {0, 1}

    def test_mismatched_lengths(self):
        with pytest.raises(d.ParameterError):
            d.Normal([0.0, 1.0], [1.0, 1.0, 1.0])

    def test_two_dimensional_shapes_rejected(self):
        with pytest.raises(ValueError):
            d.Normal(0.0, 1.0, shape=(2, 2))

    def test_value_length_checked(self):
        with pytest.raises(ValueError):
            d.Normal(0.0, 1.0, shape=3).log_prob([0.0, 1.0])


class TestValidation:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: d.Normal(0.0, 0.0),
            lambda: d.Normal(0.0, -1.0),
            lambda: d.Normal(float("nan"), 1.0),
            lambda: d.Bernoulli(probs=1.5),
            lambda: d.Bernoulli(probs=0.5, logits=0.0),
            lambda: d.Bernoulli(),
            lambda: d.Beta(0.0, 1.0),
            lambda: d.Uniform(1.0, 1.0),
            lambda: d.Categorical([]),
        ],
    )
    def test_bad_parameters(self, make):
        with pytest.raises(d.ParameterError):
            make()

    def test_error_names_field(self):
        with pytest.raises(d.ParameterError, match="scale"):
            d.Normal(0.0, -2.0)


class TestSampling:
    def test_normal_moments(self, rng):
        x = np.array(d.Normal(2.0, 3.0, shape=20000).sample(rng))
        assert abs(x.mean() - 2.0) < 4 * 3.0 / math.sqrt(20000)
        assert abs(x.std() - 3.0) < 0.1

    def test_beta_moments(self, rng):
        x = np.array(d.Beta(2.0, 5.0, shape=20000).sample(rng))
        assert abs(x.mean() - 2.0 / 7.0) < 0.01

    def test_categorical_frequencies(self, rng):
        logits = np.log([0.2, 0.5, 0.3])
        x = np.array(d.Categorical(logits.tolist(), shape=20000).sample(rng))
        np.testing.assert_allclose(np.bincount(x, minlength=3) / 20000, [0.2, 0.5, 0.3], atol=0.015)

    def test_bernoulli_logit_frequency(self, rng):
        x = np.array(d.Bernoulli(logits=1.0, shape=20000).sample(rng))
        assert abs(x.mean() - 1.0 / (1.0 + math.exp(-1.0))) < 0.015

    def test_seeded_draws_repeat(self):
        a = d.Normal(0.0, 1.0, shape=5).sample(np.random.default_rng(3))
        b = d.Normal(0.0, 1.0, shape=5).sample(np.random.default_rng(3))
        assert a == b


class TestDifferentiability:
    def test_normal_log_prob_gradient(self):
        f = lambda xs: d.Normal(xs[0], xs[1]).log_prob(xs[2])
        at = [0.3, 1.7, -0.4]
        np.testing.assert_allclose(gradient(f, at), finite_difference(f, at), rtol=1e-7)

    def test_beta_log_prob_gradient(self):
        f = lambda xs: d.Beta(xs[0], xs[1]).log_prob(xs[2])
        at = [2.3, 1.4, 0.35]
        np.testing.assert_allclose(gradient(f, at), finite_difference(f, at), rtol=1e-7)

    def test_reparameterized_normal_draw(self):
        def f(xs):
            return d.Normal(xs[0], xs[1]).sample(np.random.default_rng(0))

        eps = np.random.default_rng(0).standard_normal(1)[0]
        np.testing.assert_allclose(gradient(f, [0.5, 2.0]), [1.0, eps], rtol=1e-14)
