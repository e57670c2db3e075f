"""FFT solve of the free-space modified Helmholtz problem on the uniform grid.

The right-hand side is compactly supported strictly inside B = [-L, L]^2, and
the Yukawa kernel decays like exp(-alpha * r), so the periodic solve on the
box stands in for the free-space problem.  For small alpha^2 the caller can
request zero padding (pad=2 doubles the box) to push the periodization error
down.  Boundary values are obtained by direct evaluation of the truncated
Fourier series.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, SupportError


@dataclass(frozen=True)
class UniformGrid:
    """Uniform N_u x N_u grid over [-L, L)^2 with spacing 2L/N_u."""

    box_half_length: float
    n_u: int

    def __post_init__(self):
        if self.n_u < 2 or self.n_u % 2 != 0:
            raise ParameterError(f"n_u must be even and >= 2, got {self.n_u}")
        if self.box_half_length <= 0.0:
            raise ParameterError("box half-length must be positive")

    @property
    def spacing(self):
        return 2.0 * self.box_half_length / self.n_u

    @property
    def coords(self):
        """1D node coordinates -L + j*dx, j = 0..N_u-1."""
        return -self.box_half_length + self.spacing * np.arange(self.n_u)

    def points(self):
        """All nodes as an (N_u^2, 2) array, x index major."""
        c = self.coords
        xx, yy = np.meshgrid(c, c, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)


@dataclass
class GridField:
    """Real samples on a uniform grid; values[ix, iy] at (x_ix, y_iy)."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_u, self.grid.n_u):
            raise ParameterError(f"field shape {self.values.shape} does not match "
                                 f"grid ({self.grid.n_u}, {self.grid.n_u})")

    def copy(self):
        return GridField(self.grid, self.values.copy())


@dataclass(frozen=True)
class SpectralSolution:
    """Fourier coefficients of the particular solution on the (padded) box."""

    coeffs: np.ndarray        # (n_eff, n_eff) complex, numpy fft layout
    box_half_length: float    # half-length of the transform box (L * pad)
    alpha2: float

    @property
    def n_eff(self):
        return self.coeffs.shape[0]


def _frequency_lattice(n, box_half_length):
    k = np.fft.fftfreq(n, d=1.0 / n)             # integer wavenumbers
    return (np.pi / box_half_length) * k


def solve_freespace(field, alpha2, pad=1, check_support=True):
    """Solve alpha2*u - Lap(u) = f on the grid via the periodic spectral solve.

    Parameters
    ----------
    field : GridField
        Right-hand side, compactly supported strictly inside the box
        (checked on the outermost 2-node frame unless check_support=False).
    alpha2 : float
        Positive zeroth-order coefficient.
    pad : int
        Box-doubling factor (1 = no padding).  Use 2 for small alpha2.

    Returns
    -------
    (GridField, SpectralSolution)
        Solution samples on the input grid and the Fourier coefficients of
        the (padded) solve for off-grid evaluation.
    """
    if not alpha2 > 0.0:
        raise ParameterError(f"alpha2 must be positive, got {alpha2}")
    if pad not in (1, 2, 3, 4):
        raise ParameterError(f"pad must be a small positive integer, got {pad}")
    f = field.values
    n = field.grid.n_u
    if check_support:
        frame = np.zeros((n, n), dtype=bool)
        frame[:2, :] = frame[-2:, :] = True
        frame[:, :2] = frame[:, -2:] = True
        if np.any(f[frame] != 0.0):
            raise SupportError("right-hand side support touches the outermost "
                               "2-node frame of the box")

    n_eff = pad * n
    l_eff = pad * field.grid.box_half_length
    if pad > 1:
        work = np.zeros((n_eff, n_eff))
        off = (pad - 1) * n // 2
        work[off:off + n, off:off + n] = f
    else:
        work = f

    xi = _frequency_lattice(n_eff, l_eff)
    denom = alpha2 + xi[:, None] ** 2 + xi[None, :] ** 2
    coeffs = np.fft.fft2(work) / denom
    u = np.fft.ifft2(coeffs)
    scale = np.max(np.abs(u.real)) or 1.0
    if np.max(np.abs(u.imag)) > 1e-13 * max(scale, 1.0):
        raise ParameterError("spectral solve produced a non-real field; "
                             "input must be real")
    u = u.real
    if pad > 1:
        off = (pad - 1) * n // 2
        u = u[off:off + n, off:off + n]
    return (GridField(field.grid, u.copy()),
            SpectralSolution(coeffs=coeffs, box_half_length=l_eff, alpha2=alpha2))


def _eval_vectors(sol, coords_1d):
    """Per-dimension complex evaluation factors with symmetric Nyquist mode."""
    n = sol.n_eff
    xi = _frequency_lattice(n, sol.box_half_length)
    shifted = coords_1d + sol.box_half_length
    e = np.exp(1j * np.outer(shifted, xi))
    # Real fields carry a single unpaired -n/2 mode; evaluating it as a
    # cosine keeps the interpolant real off the grid nodes.
    nyq = n // 2
    e[:, nyq] = np.cos(shifted * xi[nyq])
    return e


def evaluate_on_boundary(sol, points):
    """Evaluate the spectral solution at arbitrary points inside the box.

    Direct summation of the full frequency lattice, O(n_eff^2) per point
    organized as matrix products; exact at grid nodes.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if np.max(np.abs(points)) > sol.box_half_length:
        raise ParameterError("evaluation points must lie inside the transform box")
    ex = _eval_vectors(sol, points[:, 0])
    ey = _eval_vectors(sol, points[:, 1])
    vals = np.einsum("pk,kl,pl->p", ex, sol.coeffs, ey, optimize=True)
    vals /= sol.n_eff**2
    scale = max(np.max(np.abs(vals.real)), 1e-300)
    if np.max(np.abs(vals.imag)) > 1e-11 * max(scale, 1.0):
        raise ParameterError("imaginary residue in boundary evaluation exceeds "
                             "tolerance; coefficients are not Hermitian")
    return vals.real


def _upsample_axis(coeffs, n_out, axis):
    """Zero-pad fft coefficients along one axis, splitting the Nyquist mode."""
    n = coeffs.shape[axis]
    if n_out == n:
        return coeffs
    centered = np.fft.fftshift(coeffs, axes=axis)
    shape = list(coeffs.shape)
    shape[axis] = n_out
    big = np.zeros(shape, dtype=complex)
    lo = n_out // 2 - n // 2
    dst = [slice(None)] * coeffs.ndim
    dst[axis] = slice(lo, lo + n)
    big[tuple(dst)] = centered
    nyq = [slice(None)] * coeffs.ndim
    nyq[axis] = lo
    mirror = [slice(None)] * coeffs.ndim
    mirror[axis] = lo + n
    big[tuple(nyq)] = 0.5 * big[tuple(nyq)]
    big[tuple(mirror)] = big[tuple(nyq)]
    return np.fft.ifftshift(big, axes=axis)


def resample(sol, grid_out):
    """Trigonometric resampling of the solution onto another uniform grid.

    The output grid covers the original (unpadded) box; the transform box may
    be larger by the integer padding factor.  Upsampling only.
    """
    n_in = sol.n_eff
    pad_ratio = sol.box_half_length / grid_out.box_half_length
    if abs(pad_ratio - round(pad_ratio)) > 1e-12:
        raise ParameterError("resample requires the transform box to be an "
                             "integer multiple of the output box")
    pad = int(round(pad_ratio))
    n_out_eff = pad * grid_out.n_u
    if n_out_eff < n_in:
        raise ParameterError("resample only upsamples; choose n_u >= input size")
    big = _upsample_axis(_upsample_axis(sol.coeffs, n_out_eff, 0), n_out_eff, 1)
    u = np.fft.ifft2(big).real * (n_out_eff / n_in) ** 2
    if pad > 1:
        off = (pad - 1) * grid_out.n_u // 2
        u = u[off:off + grid_out.n_u, off:off + grid_out.n_u]
    return GridField(grid_out, u.copy())
