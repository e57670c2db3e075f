import numpy as np
import pytest

from heatbie.exceptions import ParameterError
from heatbie.norms import norm_l2, norm_linf, relative_error


class TestL2:
    # the l2 norm carries a 1/N prefactor, not the RMS 1/sqrt(N)

    def test_three_four(self):
        assert norm_l2([3.0, 4.0]) == pytest.approx(2.5, abs=1e-15)

    def test_ones(self):
        assert norm_l2(np.ones(4)) == pytest.approx(0.5, abs=1e-15)

    def test_zero_vector(self):
        assert norm_l2(np.zeros(7)) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            norm_l2([])


class TestLinf:
    def test_signed(self):
        assert norm_linf([3.0, -4.0]) == 4.0

    def test_zero(self):
        assert norm_linf([0.0]) == 0.0

    def test_ones(self):
        assert norm_linf(np.ones(10)) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            norm_linf([])


class TestRelativeError:
    def test_exact_match(self, rng):
        v = rng.standard_normal(20)
        assert relative_error(v, v) == 0.0

    def test_double(self, rng):
        v = rng.standard_normal(20) + 3.0
        assert relative_error(2.0 * v, v) == pytest.approx(1.0, rel=1e-14)

    def test_linf_unit_perturbation(self):
        ref = np.array([1.0, -2.0, 0.5])
        num = ref.copy()
        num[0] += norm_linf(ref)
        assert relative_error(num, ref, norm_linf) == pytest.approx(1.0,
                                                                    rel=1e-14)

    def test_scale_invariance(self, rng):
        num = rng.standard_normal(50)
        ref = rng.standard_normal(50) + 2.0
        base = relative_error(num, ref)
        for s in (1e-7, 3.0, -400.0):
            assert relative_error(s * num, s * ref) == pytest.approx(
                base, rel=1e-13)

    def test_zero_reference_rejected(self):
        with pytest.raises(ParameterError):
            relative_error([1.0], [0.0])
