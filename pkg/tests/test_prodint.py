import mpmath as mp
import numpy as np
import pytest

from heatbie.exceptions import ParameterError
from heatbie.prodint import (cauchy_moments, legendre_interp_matrix,
                             log_moments, product_integration_weights,
                             reference_rule)

mp.mp.dps = 30


def _split_points(t0):
    """Adaptive quadrature needs a breakpoint under the near-segment spike."""
    t0 = complex(t0)
    if abs(t0.imag) < 0.5 and -1 < t0.real < 1:
        return [-1.0, t0.real, 1.0]
    return [-1.0, 1.0]


def mp_log_moment(k, t0):
    t0 = complex(t0)
    pts = _split_points(t0)
    return float(sum(mp.quad(lambda t: t**k * mp.log(abs(t - t0)), [a, b])
                     for a, b in zip(pts[:-1], pts[1:])))


def mp_cauchy_moment(k, t0):
    t0 = complex(t0)
    pts = _split_points(t0)
    val = sum(mp.quad(lambda t: t**k / (t - t0), [a, b])
              for a, b in zip(pts[:-1], pts[1:]))
    return complex(val)


class TestMoments:
    @pytest.mark.parametrize("t0", [0.0, 0.37, -0.95, 1.07 + 0.0j,
                                    0.3 + 0.02j, -0.7 - 0.3j, 1.4 + 0.4j])
    def test_log_moments_against_oracle(self, t0):
        q = log_moments(t0, 16)
        for k in (0, 1, 5, 15):
            assert q[k] == pytest.approx(mp_log_moment(k, t0), abs=2e-13)

    @pytest.mark.parametrize("t0", [0.37 + 0.05j, -0.6 + 0.4j, 0.2 - 0.1j,
                                    1.3 + 0.2j])
    def test_cauchy_moments_against_oracle(self, t0):
        p = cauchy_moments(t0, 16)
        for k in (0, 3, 15):
            ref = mp_cauchy_moment(k, t0)
            assert abs(p[k] - ref) <= 2e-13

    def test_cauchy_principal_value(self):
        # PV int 1/(t - 0.3) dt = log(0.7/1.3)
        p = cauchy_moments(0.3, 16)
        assert p[0].real == pytest.approx(np.log(0.7 / 1.3), abs=1e-14)
        assert p[0].imag == 0.0


class TestWeights:
    def test_log_constant_at_origin(self):
        # int_{-1}^{1} log|t| dt = -2
        w = product_integration_weights(0.0, "log")
        assert np.sum(w.weights) == pytest.approx(-2.0, abs=1e-12)
        assert not w.unstable

    def test_log_t_squared_at_origin(self):
        # int_{-1}^{1} t^2 log|t| dt = -2/9
        rule = reference_rule(16)
        w = product_integration_weights(0.0, "log")
        val = np.sum(w.weights * rule.nodes**2)
        assert val == pytest.approx(-2.0 / 9.0, abs=1e-12)

    def test_cauchy_constant_offset_target(self):
        t0 = 0.5j
        w = product_integration_weights(t0, "cauchy")
        ref = np.log(1 - t0) - np.log(-1 - t0)
        assert abs(np.sum(w.weights) - ref) <= 1e-12

    def test_monomial_exactness_against_analytic_moments(self):
        rule = reference_rule(16)
        for t0 in (0.0, 0.62, -0.98, 0.4 + 0.03j, 1.2 + 0.3j):
            q = log_moments(t0, 16)
            w = product_integration_weights(t0, "log")
            for p in range(16):
                val = np.sum(w.weights * rule.nodes**p)
                assert abs(val - q[p]) <= 1e-12 * max(1.0, abs(q[p])), \
                    f"log t0={t0} p={p}"
        for t0 in (0.4 + 0.03j, -0.8 + 0.2j, 0.1 - 0.5j):
            pm = cauchy_moments(t0, 16)
            w = product_integration_weights(t0, "cauchy")
            for p in range(16):
                val = np.sum(w.weights * rule.nodes**p)
                assert abs(val - pm[p]) <= 1e-12 * max(1.0, abs(pm[p])), \
                    f"cauchy t0={t0} p={p}"

    def test_residual_flag_reported(self):
        w = product_integration_weights(0.3 + 0.1j, "log")
        assert w.residual <= 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            product_integration_weights(0.0, "hilbert")


class TestInterpolation:
    def test_legendre_interp_exact_for_polynomials(self):
        rule = reference_rule(16)
        t = np.linspace(-0.9, 0.9, 11)
        mat = legendre_interp_matrix(t)
        vals = rule.nodes**13 - 2.0 * rule.nodes**5 + 0.25
        ref = t**13 - 2.0 * t**5 + 0.25
        assert np.max(np.abs(mat @ vals - ref)) <= 1e-12
