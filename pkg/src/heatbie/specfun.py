"""Modified Bessel functions of orders 0 and 1 and the kernel-split remainder.

Every kernel evaluation in the layer-potential code reduces to K0, K1, I1
(plus I0 for identity checks), so this module is the scalar foundation of
the solver.  Evaluation is delegated to the Cephes routines shipped with
scipy.special, which are accurate to a few ulp over the ranges used here;
exponentially scaled variants are exposed so products such as
I1(a*r) * K1(a*R) can be formed at large argument without overflow.

The remainder K1S(x) = K1(x) - 1/x - I1(x)*log(x) follows the convention
with log(x) rather than log(x/2); the log(2) constant lives inside K1S.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from .exceptions import DomainError

_EULER_GAMMA = 0.5772156649015328606065120900824024

__all__ = [
    "BesselEval",
    "bessel_i0",
    "bessel_i0_scaled",
    "bessel_i1",
    "bessel_i1_scaled",
    "bessel_k0",
    "bessel_k0_scaled",
    "bessel_k1",
    "bessel_k1_scaled",
    "k1_smooth_remainder",
]


def _check_positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x <= 0.0):
        raise DomainError(f"{name} requires x > 0 and finite, got {x!r}")
    return x


def _check_nonnegative(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0.0):
        raise DomainError(f"{name} requires x >= 0 and finite, got {x!r}")
    return x


def _scalarize(x, val):
    return float(val) if np.ndim(x) == 0 else val


def bessel_k0(x):
    """K0(x) for x > 0.  Scalar or array."""
    xa = _check_positive(x, "bessel_k0")
    return _scalarize(x, _sp.k0(xa))


def bessel_k1(x):
    """K1(x) for x > 0.  Scalar or array."""
    xa = _check_positive(x, "bessel_k1")
    return _scalarize(x, _sp.k1(xa))


def bessel_i0(x):
    """I0(x) for x >= 0.  Scalar or array."""
    xa = _check_nonnegative(x, "bessel_i0")
    return _scalarize(x, _sp.i0(xa))


def bessel_i1(x):
    """I1(x) for x >= 0.  Scalar or array."""
    xa = _check_nonnegative(x, "bessel_i1")
    return _scalarize(x, _sp.i1(xa))


def bessel_k0_scaled(x):
    """exp(x) * K0(x); finite for all representable x > 0."""
    xa = _check_positive(x, "bessel_k0_scaled")
    return _scalarize(x, _sp.k0e(xa))


def bessel_k1_scaled(x):
    """exp(x) * K1(x); finite for all representable x > 0."""
    xa = _check_positive(x, "bessel_k1_scaled")
    return _scalarize(x, _sp.k1e(xa))


def bessel_i0_scaled(x):
    """exp(-x) * I0(x); bounded by 1 for x >= 0."""
    xa = _check_nonnegative(x, "bessel_i0_scaled")
    return _scalarize(x, _sp.i0e(xa))


def bessel_i1_scaled(x):
    """exp(-x) * I1(x); bounded for x >= 0."""
    xa = _check_nonnegative(x, "bessel_i1_scaled")
    return _scalarize(x, _sp.i1e(xa))


# Direct power series for K1S(x) = K1(x) - 1/x - I1(x) log(x):
#
#   K1S(x) = -log(2) I1(x) - (x/4) sum_k [psi(k+1)+psi(k+2)] (x^2/4)^k / (k!(k+1)!)
#
# which is entire, so no cancellation occurs for small x.  Above the
# crossover the subtracted form is used; there the I1 log term dominates
# and the subtraction of 1/x costs no significant digits.
_K1S_CROSSOVER = 8.0
_K1S_NTERMS = 36


def _k1s_series(x):
    x = np.asarray(x, dtype=float)
    zz = 0.25 * x * x
    acc = np.zeros_like(x)
    term = np.ones_like(x)
    harmonic = 0.0
    for k in range(_K1S_NTERMS):
        psi_sum = 2.0 * (harmonic - _EULER_GAMMA) + 1.0 / (k + 1)
        acc += psi_sum * term
        term *= zz / ((k + 1) * (k + 2))
        harmonic += 1.0 / (k + 1)
    return -np.log(2.0) * _sp.i1(x) - 0.25 * x * acc


def k1_smooth_remainder(x):
    """K1S(x) = K1(x) - 1/x - I1(x) log(x) for x > 0.

    Computed from the direct power series for x <= 8 and by (benign)
    subtraction above.  K1S is smooth with K1S(0+) = 0.
    """
    xa = _check_positive(x, "k1_smooth_remainder")
    xa1 = np.atleast_1d(xa)
    out = np.empty_like(xa1)
    small = xa1 <= _K1S_CROSSOVER
    if np.any(small):
        out[small] = _k1s_series(xa1[small])
    if np.any(~small):
        xl = xa1[~small]
        out[~small] = _sp.k1(xl) - 1.0 / xl - _sp.i1(xl) * np.log(xl)
    return _scalarize(x, out.reshape(np.shape(xa)))


@dataclass(frozen=True)
class BesselEval:
    """All four kernel Bessel values at one argument."""

    x: float
    i0: float
    i1: float
    k0: float
    k1: float

    @classmethod
    def at(cls, x):
        x = float(x)
        if not x > 0.0:
            raise DomainError(f"BesselEval requires x > 0, got {x}")
        return cls(x=x, i0=float(_sp.i0(x)), i1=float(_sp.i1(x)),
                   k0=float(_sp.k0(x)), k1=float(_sp.k1(x)))

    def wronskian_defect(self):
        """x*(I0 K1 + I1 K0) - 1, which vanishes identically in exact math."""
        return self.x * (self.i0 * self.k1 + self.i1 * self.k0) - 1.0


def wronskian_defect_scaled(x):
    """x*(I0 K1 + I1 K0) - 1 formed from scaled functions; safe for large x."""
    xa = _check_positive(x, "wronskian_defect_scaled")
    val = xa * (_sp.i0e(xa) * _sp.k1e(xa) + _sp.i1e(xa) * _sp.k0e(xa)) - 1.0
    return _scalarize(x, val)
