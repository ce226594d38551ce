import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special as sp

from minippl import special


class TestGammaFamily:
    @given(st.floats(min_value=1e-3, max_value=1e3))
    def test_lgamma_matches_scipy(self, x):
        assert special.lgamma(x) == pytest.approx(sp.gammaln(x), rel=1e-12, abs=1e-12)

    def test_lgamma_exact_zeros(self):
        assert special.lgamma(1.0) == 0.0
        assert special.lgamma(2.0) == 0.0

    @given(st.floats(min_value=1e-3, max_value=1e3))
    def test_digamma_matches_scipy(self, x):
        assert special.digamma(x) == pytest.approx(sp.digamma(x), rel=1e-12, abs=1e-12)

    @given(st.floats(min_value=1e-2, max_value=1e3))
    def test_trigamma_matches_scipy(self, x):
        assert special.trigamma(x) == pytest.approx(sp.polygamma(1, x), rel=1e-10)

    def test_digamma_is_lgamma_derivative(self):
        for x in (0.3, 1.7, 12.5):
            h = 1e-6
            fd = (special.lgamma(x + h) - special.lgamma(x - h)) / (2 * h)
            assert special.digamma(x) == pytest.approx(fd, rel=1e-7)


class TestLogistic:
    @pytest.mark.parametrize("x", [-800.0, -30.0, -1.0, 0.0, 2.5, 40.0, 800.0])
    def test_stable_against_scipy(self, x):
        assert special.sigmoid(x) == pytest.approx(sp.expit(x), rel=1e-14)
        assert special.log_sigmoid(x) == pytest.approx(sp.log_expit(x), rel=1e-14)
        assert special.softplus(x) == pytest.approx(np.logaddexp(0.0, x), rel=1e-14)

    def test_log_sigmoid_symmetry(self):
        for x in np.linspace(-20, 20, 9):
            assert special.log_sigmoid(x) - special.log_sigmoid(-x) == pytest.approx(x, abs=1e-12)

    def test_softplus_identity(self):
        assert special.softplus(0.0) == pytest.approx(math.log(2.0))
