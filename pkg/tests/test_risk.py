import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rpareto.risk import (
    NotDifferentiableError,
    RiskFunctional,
    eval_risk,
    exceeds,
    parse_risk,
    risk_gradient,
)

positive_vectors = arrays(float, st.integers(2, 8), elements=st.floats(1e-3, 1e3))
kinds = st.sampled_from(["sum", "powsum:2.5", "smoothmax", "site:1", "minratio", "max"])


class TestParse:
    @pytest.mark.parametrize("text", ["sum", "powsum:0.114", "smoothmax", "minratio", "max"])
    def test_round_trip(self, text):
        assert str(parse_risk(text)) == text

    def test_site_by_id(self):
        r = parse_risk("site:b", ["a", "b", "c"])
        assert r.index == 1 and str(r) == "site:b"

    @pytest.mark.parametrize("text", ["", "sums", "powsum", "powsum:-1", "site:zz"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_risk(text, ["a", "b"])


class TestEval:
    def test_values(self):
        x = np.array([1.0, 2.0, 4.0])
        assert eval_risk(RiskFunctional("sum"), x) == 7.0
        assert eval_risk(RiskFunctional("max"), x) == 4.0
        assert eval_risk(RiskFunctional("min_ratio"), x) == 1.0
        assert eval_risk(RiskFunctional("site", index=1), x) == 2.0
        assert eval_risk(RiskFunctional("power_sum", exponent=2.0), x) == pytest.approx(np.sqrt(21.0))

    def test_smooth_max_between_max_and_scaled_max(self):
        x = np.array([1.0, 3.0, 2.9, 0.1])
        v = eval_risk(RiskFunctional("smooth_max"), x)
        assert 3.0 <= v <= 3.0 * 4 ** (1 / 20)

    def test_no_overflow(self):
        v = eval_risk(RiskFunctional("smooth_max"), np.array([1e300, 1e300]))
        assert np.isfinite(v)

    def test_batch(self):
        X = np.arange(1, 7, dtype=float).reshape(3, 2)
        np.testing.assert_array_equal(eval_risk(RiskFunctional("sum"), X), [3, 7, 11])

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            eval_risk(RiskFunctional("sum"), [-1.0, 2.0])

    @given(kinds, positive_vectors, st.floats(0.01, 100.0))
    def test_homogeneous(self, text, x, t):
        r = parse_risk(text)
        assert eval_risk(r, t * x) == pytest.approx(t * eval_risk(r, x), rel=1e-12)

    @given(kinds, positive_vectors, st.floats(0.01, 100.0), st.floats(0.5, 50.0))
    def test_exceedance_scale_free(self, text, x, t, u):
        r = parse_risk(text)
        u = np.full(x.size, u)
        assert exceeds(r, t * x, t * u) == exceeds(r, x, u)


class TestGradient:
    @pytest.mark.parametrize("text", ["sum", "powsum:0.3", "powsum:3", "smoothmax"])
    def test_finite_differences(self, text):
        r = parse_risk(text)
        x = np.array([0.7, 1.3, 2.2, 0.4])
        g = risk_gradient(r, x)
        fd = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = 1e-6 * x[i]
            fd[i] = (eval_risk(r, x + e) - eval_risk(r, x - e)) / (2 * e[i])
        np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)

    @pytest.mark.parametrize("text", ["max", "minratio", "site:0"])
    def test_not_differentiable(self, text):
        with pytest.raises(NotDifferentiableError):
            risk_gradient(parse_risk(text), [1.0, 2.0])

    def test_exceeds_strict(self):
        r = RiskFunctional("sum")
        assert not exceeds(r, [1.0, 1.0], [2.0, 2.0])
        assert exceeds(r, [1.0, 1.0 + 1e-12], [2.0, 2.0])

    def test_exceeds_needs_positive_u(self):
        with pytest.raises(ValueError):
            exceeds(RiskFunctional("sum"), [1.0, 1.0], [0.0, 1.0])
