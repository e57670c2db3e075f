"""Error norms on the evaluation grid.

The l2 norm here carries a 1/N prefactor (not the RMS 1/sqrt(N)); this
matches the convention used for all reported errors and tolerances in this
project, and it changes absolute numbers relative to the usual definition.
"""

import numpy as np

from .exceptions import ParameterError


def norm_l2(u):
    """(1/N) * sqrt(sum |u_i|^2) over the N entries of u."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ParameterError("norm of an empty vector is undefined")
    return float(np.sqrt(np.sum(u * u)) / u.size)


def norm_linf(u):
    """max |u_i|."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ParameterError("norm of an empty vector is undefined")
    return float(np.max(np.abs(u)))


def relative_error(num, ref, norm=norm_l2):
    """||ref - num|| / ||ref|| in the given norm."""
    num = np.asarray(num, dtype=float)
    ref = np.asarray(ref, dtype=float)
    denom = norm(ref)
    if denom == 0.0:
        raise ParameterError("relative error against a zero reference")
    return norm(ref - num) / denom
