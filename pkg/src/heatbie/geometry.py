"""Parametric boundary geometry: curves, panels, quadrature nodes, classification.

Curves are closed and smooth, parametrized over [0, 2*pi).  The outer
boundary runs counterclockwise and cavity boundaries clockwise, so the unit
normal produced here always points out of the domain interior.  Panels are
equiparametric; per-node speeds already include the half-panel parameter
jacobian, so sum(speed * weight) over a panel is its arclength.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import GeometryError, ParameterError

TWO_PI = 2.0 * np.pi


def gauss_legendre_rule(n_q):
    """Nodes and weights of the n_q-point Gauss-Legendre rule on [-1, 1].

    Exact for polynomials of degree <= 2*n_q - 1.  Allowed range 2..64.
    """
    if not isinstance(n_q, (int, np.integer)) or isinstance(n_q, bool):
        raise ParameterError(f"n_q must be an integer, got {n_q!r}")
    if not 2 <= n_q <= 64:
        raise ParameterError(f"n_q must lie in [2, 64], got {n_q}")
    nodes, weights = np.polynomial.legendre.leggauss(int(n_q))
    return nodes, weights


@dataclass(frozen=True)
class ParametricCurve:
    """Closed smooth curve given by position/derivative maps on [0, 2*pi)."""

    position: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]
    name: str = "curve"

    def __post_init__(self):
        p0 = self.position(np.array([0.0]))[0]
        p1 = self.position(np.array([TWO_PI]))[0]
        if np.linalg.norm(p1 - p0) > 1e-13:
            raise GeometryError(f"curve {self.name!r} is not closed: |gap| = "
                                f"{np.linalg.norm(p1 - p0):.3e}")

    def frame(self, t):
        """Positions, outward normals, speeds |gamma'| and curvatures at t."""
        t = np.asarray(t, dtype=float)
        pos = self.position(t)
        dp = self.derivative(t)
        ddp = self.second_derivative(t)
        speed = np.hypot(dp[:, 0], dp[:, 1])
        if np.any(speed <= 0.0) or np.any(~np.isfinite(speed)):
            raise GeometryError(f"curve {self.name!r} has a degenerate "
                                "derivative at a sampled parameter")
        normal = np.stack([dp[:, 1], -dp[:, 0]], axis=1) / speed[:, None]
        kappa = (dp[:, 0] * ddp[:, 1] - dp[:, 1] * ddp[:, 0]) / speed**3
        return pos, normal, speed, kappa


def _revolved(radius_fn, dradius_fn, ddradius_fn, center, clockwise, name):
    cx, cy = float(center[0]), float(center[1])
    sgn = -1.0 if clockwise else 1.0

    def position(t):
        u = sgn * np.asarray(t, dtype=float)
        r = radius_fn(u)
        return np.stack([cx + r * np.cos(u), cy + r * np.sin(u)], axis=-1)

    def derivative(t):
        u = sgn * np.asarray(t, dtype=float)
        r, dr = radius_fn(u), dradius_fn(u)
        du = np.stack([dr * np.cos(u) - r * np.sin(u),
                       dr * np.sin(u) + r * np.cos(u)], axis=-1)
        return sgn * du

    def second_derivative(t):
        u = sgn * np.asarray(t, dtype=float)
        r, dr, ddr = radius_fn(u), dradius_fn(u), ddradius_fn(u)
        return np.stack([(ddr - r) * np.cos(u) - 2 * dr * np.sin(u),
                         (ddr - r) * np.sin(u) + 2 * dr * np.cos(u)], axis=-1)

    return ParametricCurve(position, derivative, second_derivative, name=name)


def circle(center=(0.0, 0.0), radius=1.0, clockwise=False):
    r = float(radius)
    if r <= 0.0:
        raise GeometryError(f"circle radius must be positive, got {r}")
    return _revolved(lambda u: np.full_like(u, r),
                     lambda u: np.zeros_like(u),
                     lambda u: np.zeros_like(u),
                     center, clockwise, name="circle")


def ellipse(center=(0.0, 0.0), a=1.0, b=0.5, clockwise=False):
    a, b = float(a), float(b)
    if a <= 0.0 or b <= 0.0:
        raise GeometryError("ellipse semi-axes must be positive")
    cx, cy = float(center[0]), float(center[1])
    sgn = -1.0 if clockwise else 1.0

    def position(t):
        u = sgn * np.asarray(t, dtype=float)
        return np.stack([cx + a * np.cos(u), cy + b * np.sin(u)], axis=-1)

    def derivative(t):
        u = sgn * np.asarray(t, dtype=float)
        return sgn * np.stack([-a * np.sin(u), b * np.cos(u)], axis=-1)

    def second_derivative(t):
        u = sgn * np.asarray(t, dtype=float)
        return np.stack([-a * np.cos(u), -b * np.sin(u)], axis=-1)

    return ParametricCurve(position, derivative, second_derivative, name="ellipse")


def starfish(center=(0.0, 0.0), a=1.0, b=0.3, arms=5, clockwise=False, phase=0.0):
    """Starfish curve r(theta) = a + b*cos(arms*(theta - phase))."""
    a, b, phase = float(a), float(b), float(phase)
    m = int(arms)
    if a <= abs(b):
        raise GeometryError("starfish requires a > |b| for a regular curve")
    return _revolved(lambda u: a + b * np.cos(m * (u - phase)),
                     lambda u: -b * m * np.sin(m * (u - phase)),
                     lambda u: -b * m * m * np.cos(m * (u - phase)),
                     center, clockwise, name="starfish")


@dataclass
class Domain:
    """Multiply connected region: outer curve first, then cavity curves.

    The closure of the region must sit strictly inside the box
    B = [-L, L]^2; cavity curves must be disjoint and inside the outer one.
    """

    curves: Sequence[ParametricCurve]
    box_half_length: float
    _sampler_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.curves) == 0:
            raise GeometryError("domain needs at least an outer curve")
        self.box_half_length = float(self.box_half_length)
        if self.box_half_length <= 0.0:
            raise GeometryError("box half-length must be positive")
        self._validate()

    # -- validation ------------------------------------------------------

    def _validate(self, n_samples=1024):
        t = np.linspace(0.0, TWO_PI, n_samples, endpoint=False)
        samples = [c.position(t) for c in self.curves]
        for c, s in zip(self.curves, samples):
            if np.max(np.abs(s)) >= self.box_half_length:
                raise GeometryError(f"curve {c.name!r} is not strictly inside "
                                    f"the box [-L, L]^2 with L = {self.box_half_length}")
        outer = samples[0]
        outer_tree = cKDTree(outer)
        for i, s in enumerate(samples[1:], start=1):
            if not _polyline_contains(outer, s).all():
                raise GeometryError(f"cavity curve {i} is not inside the outer curve")
            for j in range(1, i):
                d = cKDTree(samples[j]).query(s)[0].min()
                if d <= 0.0:
                    raise GeometryError(f"cavity curves {j} and {i} intersect")
            if outer_tree.query(s)[0].min() <= 0.0:
                raise GeometryError(f"cavity curve {i} touches the outer curve")

    # -- dense boundary sampler -------------------------------------------

    def _sampler(self, per_curve=4096):
        key = int(per_curve)
        if key not in self._sampler_cache:
            t = np.linspace(0.0, TWO_PI, key, endpoint=False)
            pts, nrm, crv_id, params = [], [], [], []
            for i, c in enumerate(self.curves):
                p, n, _, _ = c.frame(t)
                pts.append(p)
                nrm.append(n)
                crv_id.append(np.full(key, i))
                params.append(t)
            pts = np.concatenate(pts)
            self._sampler_cache[key] = {
                "points": pts,
                "normals": np.concatenate(nrm),
                "curve": np.concatenate(crv_id),
                "param": np.concatenate(params),
                "tree": cKDTree(pts),
                "spacing": TWO_PI / key,
            }
        return self._sampler_cache[key]

    def classify_batch(self, points, per_curve=4096):
        """Inside mask and approximate boundary distance for many points.

        Uses the sign of (x - y_near) . nu(y_near) with y_near the nearest
        dense boundary sample; cross-validated against the ray-crossing
        classifier in the test suite.
        """
        sampler = self._sampler(per_curve)
        points = np.asarray(points, dtype=float)
        dist, idx = sampler["tree"].query(points)
        side = np.einsum("ij,ij->i", points - sampler["points"][idx],
                         sampler["normals"][idx])
        return side < 0.0, dist

    def grid_interior_mask(self, grid):
        """Boolean mask of grid nodes inside the domain, shape (N_u, N_u)."""
        inside, _ = self.classify_batch(grid.points())
        return inside.reshape(grid.n_u, grid.n_u)


def _polyline_contains(polyline, points):
    """Even-odd ray-crossing test of points against a closed polyline."""
    x, y = points[:, 0], points[:, 1]
    px, py = polyline[:, 0], polyline[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    inside = np.zeros(len(points), dtype=bool)
    # horizontal ray to +x; vectorized over segments in chunks of points
    chunk = max(1, int(2**22 / max(len(px), 1)))
    for lo in range(0, len(points), chunk):
        hi = min(lo + chunk, len(points))
        xs, ys = x[lo:hi, None], y[lo:hi, None]
        straddle = (py[None, :] > ys) != (qy[None, :] > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = px + (ys - py) * (qx - px) / (qy - py)
        hits = straddle & (xs < x_cross)
        inside[lo:hi] = (hits.sum(axis=1) % 2) == 1
    return inside


def classify_point(domain, x, per_curve=4096):
    """Classify one point against the domain boundary.

    Returns (inside, distance): ray-crossing classification against all
    curves sampled densely, with the distance to the nearest sampled point
    refined by a local 1D minimization over the curve parameter.  Points
    within 1e-12 of the boundary are reported outside so grid point sets
    stay disjoint from the boundary.
    """
    x = np.asarray(x, dtype=float)
    if np.max(np.abs(x)) > domain.box_half_length:
        raise GeometryError(f"point {x} lies outside the box")
    sampler = domain._sampler(per_curve)
    t = np.linspace(0.0, TWO_PI, per_curve, endpoint=False)
    crossings = 0
    for c in domain.curves:
        poly = c.position(t)
        if _polyline_contains(poly, x[None, :])[0]:
            crossings += 1
    inside = (crossings % 2) == 1

    _, idx = sampler["tree"].query(x)
    curve = domain.curves[int(sampler["curve"][idx])]
    t_best = _refine_nearest_param(curve, x, sampler["param"][idx],
                                   sampler["spacing"])
    distance = float(np.linalg.norm(curve.position(np.array([t_best]))[0] - x))
    if distance <= 1e-12:
        inside = False
    return inside, distance


def _refine_nearest_param(curve, x, t0, half_width, iters=60):
    """Golden-section minimization of |gamma(t) - x| around t0."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = t0 - half_width, t0 + half_width

    def f(t):
        return float(np.sum((curve.position(np.array([t]))[0] - x) ** 2))

    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass
class BoundaryDiscretization:
    """Composite Gauss-Legendre panel discretization of all domain curves.

    Node data is stored flattened in panel-major order.  speed includes the
    half-panel parameter jacobian, so arclength = sum(speed * weight).
    """

    domain: Domain
    n_q: int
    nodes: np.ndarray          # (N, 2)
    normals: np.ndarray        # (N, 2)
    speed: np.ndarray          # (N,)
    curvature: np.ndarray      # (N,)
    weights: np.ndarray        # (N,) tiled Gauss-Legendre weights
    param: np.ndarray          # (N,) global curve parameter of each node
    panel_curve: np.ndarray    # (P,) curve index per panel
    panel_ta: np.ndarray       # (P,) parameter interval start
    panel_tb: np.ndarray       # (P,) parameter interval end
    ref_nodes: np.ndarray      # (n_q,) reference GL nodes
    ref_weights: np.ndarray    # (n_q,) reference GL weights

    @property
    def n_panels(self):
        return len(self.panel_curve)

    @property
    def n_nodes(self):
        return len(self.speed)

    def panel_slice(self, k):
        return slice(k * self.n_q, (k + 1) * self.n_q)

    @property
    def z(self):
        """Nodes as complex numbers."""
        return self.nodes[:, 0] + 1j * self.nodes[:, 1]

    def panel_arclength(self, k):
        sl = self.panel_slice(k)
        return float(np.sum(self.speed[sl] * self.weights[sl]))

    def total_arclength(self):
        return float(np.sum(self.speed * self.weights))

    def panel_arclengths(self):
        return np.add.reduceat(self.speed * self.weights,
                               np.arange(0, self.n_nodes, self.n_q))

    def panel_frame(self, k, t_local):
        """Geometry of panel k at local parameters t_local in [-1, 1].

        Returns positions, normals, speeds (with the local jacobian of this
        panel's [-1,1] map folded in) and curvatures, straight from the
        exact parametrization.
        """
        curve = self.domain.curves[int(self.panel_curve[k])]
        ta, tb = self.panel_ta[k], self.panel_tb[k]
        t = 0.5 * (ta + tb) + 0.5 * (tb - ta) * np.asarray(t_local, dtype=float)
        pos, nrm, spd, crv = curve.frame(t)
        return pos, nrm, spd * 0.5 * (tb - ta), crv


def discretize_boundary(domain, panels_per_curve, n_q=16):
    """Equiparametric composite Gauss-Legendre discretization of the boundary."""
    if len(panels_per_curve) != len(domain.curves):
        raise ParameterError("panels_per_curve must list one count per curve")
    if any(int(p) < 1 for p in panels_per_curve):
        raise ParameterError("panel counts must be positive")
    tq, wq = gauss_legendre_rule(n_q)

    nodes, normals, speeds, curvs, params = [], [], [], [], []
    panel_curve, panel_ta, panel_tb = [], [], []
    for ci, (curve, n_pan) in enumerate(zip(domain.curves, panels_per_curve)):
        edges = np.linspace(0.0, TWO_PI, int(n_pan) + 1)
        for ta, tb in zip(edges[:-1], edges[1:]):
            t = 0.5 * (ta + tb) + 0.5 * (tb - ta) * tq
            pos, nrm, spd, crv = curve.frame(t)
            nodes.append(pos)
            normals.append(nrm)
            speeds.append(spd * 0.5 * (tb - ta))
            curvs.append(crv)
            params.append(t)
            panel_curve.append(ci)
            panel_ta.append(ta)
            panel_tb.append(tb)

    return BoundaryDiscretization(
        domain=domain,
        n_q=int(n_q),
        nodes=np.concatenate(nodes),
        normals=np.concatenate(normals),
        speed=np.concatenate(speeds),
        curvature=np.concatenate(curvs),
        weights=np.tile(wq, len(panel_curve)),
        param=np.concatenate(params),
        panel_curve=np.asarray(panel_curve),
        panel_ta=np.asarray(panel_ta),
        panel_tb=np.asarray(panel_tb),
        ref_nodes=tq,
        ref_weights=wq,
    )
