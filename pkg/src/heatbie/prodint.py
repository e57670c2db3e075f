"""Product-integration weights for log- and Cauchy-singular panel integrals.

Everything here lives on the reference segment [-1, 1] identified with the
complex plane: a panel is mapped so its endpoints land on -+1, the target
becomes a complex number t0, and modified weights are built so that

    sum_m u_m p(t_m) = int_{-1}^{1} p(t) s(t0, t) dt

holds exactly for polynomials p of degree <= n-1, with s the log or Cauchy
kernel.  Moments are accumulated analytically (upward recursion for the
Cauchy family, antiderivative differences for the log family) and the
monomial-coefficient Vandermonde system is solved with one step of iterative
refinement; the residual against the analytic moments is the construction
self-check.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .exceptions import ParameterError

#: residual above which a correction is declared unstable (caller subdivides)
MOMENT_RESIDUAL_LIMIT = 1e-10


def log_moments(t0, n=16):
    """q_k = int_{-1}^{1} t^k log|t - t0| dt for k = 0..n-1.

    Valid for complex t0 off the segment and for real t0 inside it (the
    integrable-singularity case); uses exact antiderivatives, no recursion
    in k for the endpoint terms.
    """
    t0 = complex(t0)
    on_segment = (t0.imag == 0.0) and (-1.0 < t0.real < 1.0)
    q = np.empty(n)
    powers = t0 ** np.arange(n + 1)
    for k in range(n):
        kk = k + 1
        if on_segment:
            x = t0.real
            end = ((1.0 - powers[kk].real) * np.log(abs(1.0 - x))
                   - ((-1.0) ** kk - powers[kk].real) * np.log(abs(1.0 + x)))
        else:
            end = ((1.0 - powers[kk]) * np.log(1.0 - t0)
                   - ((-1.0) ** kk - powers[kk]) * np.log(-1.0 - t0)).real
        poly = sum((powers[k - j]).real * 2.0 / (j + 1)
                   for j in range(0, k + 1, 2))
        q[k] = (end - poly) / kk
    return q


def cauchy_moments(t0, n=16):
    """p_k = int_{-1}^{1} t^k / (t - t0) dt for k = 0..n-1.

    Principal value for real t0 inside the segment.  The preimage segment is
    straight, so the principal branch of the logarithm is always correct and
    no winding correction is needed.
    """
    t0 = complex(t0)
    p = np.empty(n, dtype=complex)
    if t0.imag == 0.0 and -1.0 < t0.real < 1.0:
        p[0] = np.log(abs(1.0 - t0.real)) - np.log(abs(1.0 + t0.real))
    else:
        p[0] = np.log(1.0 - t0) - np.log(-1.0 - t0)
    for k in range(1, n):
        p[k] = t0 * p[k - 1] + (1.0 - (-1.0) ** k) / k
    return p


@dataclass(frozen=True)
class MomentWeights:
    """Modified quadrature weights plus the moment-residual self-check."""

    weights: np.ndarray
    residual: float

    @property
    def unstable(self):
        return self.residual > MOMENT_RESIDUAL_LIMIT


class _ReferenceRule:
    """Cached Vandermonde factorization for one node count."""

    def __init__(self, n):
        nodes, weights = np.polynomial.legendre.leggauss(n)
        self.n = n
        self.nodes = nodes
        self.plain_weights = weights
        self.vander_t = np.vander(nodes, n, increasing=True).T
        self.lu = lu_factor(self.vander_t)

    def solve_weights(self, moments):
        u = lu_solve(self.lu, moments)
        # one step of iterative refinement; the monomial Vandermonde is
        # ill-conditioned enough at n = 16 to warrant it
        r = moments - self.vander_t @ u
        u = u + lu_solve(self.lu, r)
        resid = float(np.max(np.abs(moments - self.vander_t @ u)))
        scale = max(float(np.max(np.abs(moments))), 1.0)
        return u, resid / scale


_RULES = {}


def reference_rule(n=16):
    if n not in _RULES:
        _RULES[n] = _ReferenceRule(n)
    return _RULES[n]


def product_integration_weights(t0, kind, n=16):
    """Modified weights for the reference panel [-1, 1] and target t0.

    Parameters
    ----------
    t0 : complex
        Target in preimage coordinates (real and inside the segment for
        on-boundary targets).
    kind : {"log", "cauchy"}
        Singular factor: log|t - t0| or 1/(t - t0).

    Returns
    -------
    MomentWeights
        Real weights for "log", complex weights for "cauchy"; the residual
        of the Vandermonde solve against the analytic moments is attached
        and values above MOMENT_RESIDUAL_LIMIT signal that the caller must
        subdivide the panel.
    """
    rule = reference_rule(n)
    if kind == "log":
        q = log_moments(t0, n)
        u, resid = rule.solve_weights(q)
        return MomentWeights(weights=u, residual=resid)
    if kind == "cauchy":
        p = cauchy_moments(t0, n)
        ur, rr = rule.solve_weights(p.real)
        ui, ri = rule.solve_weights(p.imag)
        return MomentWeights(weights=ur + 1j * ui, residual=max(rr, ri))
    raise ParameterError(f"kind must be 'log' or 'cauchy', got {kind!r}")


_LEG_INV = {}


def legendre_interp_matrix(t_targets, n=16):
    """Matrix mapping values at the n GL nodes to values at t_targets.

    Interpolation is done in the Legendre basis, which stays well
    conditioned at n = 16; used to carry densities to bisected sub-panels.
    """
    if n not in _LEG_INV:
        rule = reference_rule(n)
        _LEG_INV[n] = np.linalg.inv(
            np.polynomial.legendre.legvander(rule.nodes, n - 1))
    v_t = np.polynomial.legendre.legvander(np.asarray(t_targets, float), n - 1)
    return v_t @ _LEG_INV[n]
