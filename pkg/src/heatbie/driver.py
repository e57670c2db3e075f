"""Pipeline orchestration: single modified-Helmholtz solves, time evolution,
experiment sweeps, and CSV export.

One modified Helmholtz solve follows the standard chain: extend the
right-hand side from the interior nodes (PUX), solve the free-space problem
spectrally, form the modified boundary data g~ = g - u_P|_Gamma, solve the
density equation, and evaluate u = u_P + u_H on the interior nodes.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bie import HomogeneousSolver
from .exceptions import ConfigError, ParameterError
from .freespace import (GridField, UniformGrid, evaluate_on_boundary, resample,
                        solve_freespace)
from .geometry import Domain, circle, discretize_boundary, ellipse, starfish
from .norms import norm_l2, norm_linf, relative_error
from .pux import PuxParams, build_interpolation_operator, global_extension, \
    place_partitions
from .timestep import (ProblemDefinition, TimeController, Trajectory,
                       builtin_tableaus, integrate)

_FREQ = None


@dataclass
class HelmholtzResult:
    """Output of one modified-Helmholtz solve."""

    u_omega: np.ndarray          # solution at interior grid nodes
    mu: np.ndarray               # layer density
    u_p_grid: GridField          # particular solution on the full grid
    spectral: "object"           # SpectralSolution of the particular solve
    report: "object"             # BIE SolveReport
    wall_time: float = 0.0


class HelmholtzPipeline:
    """Reusable discretization context for one (domain, grid, panels) setup."""

    def __init__(self, domain, grid, panels_per_curve, partition_radius,
                 n_q=16, epsilon=2.0, regularity=None, pad_threshold=5.0,
                 c_split=None, gmres_tol=1e-12, gmres_max_iter=200):
        self.domain = domain
        self.grid = grid
        self.disc = discretize_boundary(domain, panels_per_curve, n_q=n_q)
        self.layout = place_partitions(domain, grid, partition_radius)
        self.params = PuxParams.auto(grid, partition_radius, epsilon=epsilon,
                                     regularity=regularity)
        self.op = build_interpolation_operator(grid, self.layout, self.params)
        self.interior_flat = self.layout.flat_inside()
        self.interior_points = grid.points()[self.interior_flat]
        self.pad_threshold = float(pad_threshold)
        self.c_split = c_split
        self.gmres_tol = float(gmres_tol)
        self.gmres_max_iter = int(gmres_max_iter)
        self._solvers = {}
        self.gmres_iters_total = 0
        self.solves_total = 0

    @property
    def regularity(self):
        return self.params.regularity

    def solver(self, alpha2):
        key = float(alpha2)
        if key not in self._solvers:
            kwargs = {}
            if self.c_split is not None:
                kwargs["c_split"] = self.c_split
            if len(self._solvers) > 2:
                self._solvers.clear()
            self._solvers[key] = HomogeneousSolver(self.disc, math.sqrt(key),
                                                   **kwargs)
        return self._solvers[key]

    def solve(self, alpha2, f_omega, g_boundary, analytic_ext=None):
        """Full u_P + u_H solve; f on interior nodes, g at boundary nodes."""
        t_start = time.perf_counter()
        f_e = global_extension(np.asarray(f_omega, dtype=float), self.op,
                               analytic_fn=analytic_ext)
        pad = 2 if alpha2 < self.pad_threshold else 1
        u_p_grid, spectral = solve_freespace(f_e, alpha2, pad=pad)
        u_p_bdry = evaluate_on_boundary(spectral, self.disc.nodes)
        g_tilde = np.asarray(g_boundary, dtype=float) - u_p_bdry
        solver = self.solver(alpha2)
        mu, report = solver.solve(g_tilde, gmres_tol=self.gmres_tol,
                                  max_iter=self.gmres_max_iter)
        u_h = solver.evaluate(mu, self.interior_points)
        u = u_p_grid.values.ravel()[self.interior_flat] + u_h
        self.gmres_iters_total += report.iterations
        self.solves_total += 1
        return HelmholtzResult(u_omega=u, mu=mu, u_p_grid=u_p_grid,
                               spectral=spectral, report=report,
                               wall_time=time.perf_counter() - t_start)

    def spectral_laplacian(self, u_omega):
        """Laplacian of the PUX extension of interior data, on the interior.

        Fallback seed for the first implicit stage when no analytic
        Laplacian of the initial data is available.
        """
        f_e = global_extension(np.asarray(u_omega, dtype=float), self.op)
        n = self.grid.n_u
        k = np.fft.fftfreq(n, d=1.0 / n) * (np.pi / self.grid.box_half_length)
        lap = np.fft.ifft2(np.fft.fft2(f_e.values)
                           * -(k[:, None] ** 2 + k[None, :] ** 2)).real
        return lap.ravel()[self.interior_flat]

    def evaluate_at(self, result, alpha2, points):
        """u = u_P + u_H at arbitrary interior points (spectral + BIE eval)."""
        u_p = evaluate_on_boundary(result.spectral, points)
        u_h = self.solver(alpha2).evaluate(result.mu, points)
        return u_p + u_h

    def evaluate_on_grid(self, result, alpha2, grid_out, interior_flat_out):
        """u on another uniform grid's interior nodes (trig resampling + BIE)."""
        u_p = resample(result.spectral, grid_out).values.ravel()[interior_flat_out]
        pts = grid_out.points()[interior_flat_out]
        u_h = self.solver(alpha2).evaluate(result.mu, pts)
        return u_p + u_h


# ---------------------------------------------------------------------------
# manufactured fields


def field_trig_gauss():
    """u = sin(2 pi x) sin(2 pi y) exp(-(x^2+y^2)) with its Laplacian."""

    def u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) \
            * np.exp(-(x**2 + y**2))

    def lap(pts):
        x, y = pts[:, 0], pts[:, 1]
        s_x, s_y = np.sin(2 * np.pi * x), np.sin(2 * np.pi * y)
        c_x, c_y = np.cos(2 * np.pi * x), np.cos(2 * np.pi * y)
        g = np.exp(-(x**2 + y**2))
        st = s_x * s_y
        return ((-8 * np.pi**2 - 4 + 4 * (x**2 + y**2)) * st
                - 8 * np.pi * (x * c_x * s_y + y * s_x * c_y)) * g

    return u, lap


def field_cos20r():
    """u = cos(20 r) with its (regularized at r = 0) Laplacian."""

    def u(pts):
        return np.cos(20.0 * np.hypot(pts[:, 0], pts[:, 1]))

    def lap(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        # Lap cos(20 r) = -400 cos(20 r) - 20 sin(20 r)/r; sinc handles r=0
        return -400.0 * np.cos(20.0 * r) - 400.0 * np.sinc(20.0 * r / np.pi)

    return u, lap


FIELDS = {"trig-gauss": field_trig_gauss, "cos20r": field_cos20r}


def heat_manufactured(decay=1.0):
    """U(t,x,y) = exp(-decay t) sin((x+y)/sqrt(2)) + cos(20 r) and its data.

    With decay = 1 the transient part solves the homogeneous heat equation
    and the forcing is static; a larger decay rate makes the temporal error
    dominate the spatial floor, which the fixed-step order study needs.
    """
    _, lap_cos = field_cos20r()
    lam = float(decay)

    def u(t, pts):
        s = (pts[:, 0] + pts[:, 1]) / np.sqrt(2.0)
        return np.exp(-lam * t) * np.sin(s) \
            + np.cos(20.0 * np.hypot(pts[:, 0], pts[:, 1]))

    def forcing(t, pts, u_vals):
        s = (pts[:, 0] + pts[:, 1]) / np.sqrt(2.0)
        # U_t - Lap U; the sin mode contributes (1 - decay) exp(-decay t) sin
        return (1.0 - lam) * np.exp(-lam * t) * np.sin(s) - lap_cos(pts)

    def lap_u(t, pts):
        s = (pts[:, 0] + pts[:, 1]) / np.sqrt(2.0)
        return -np.exp(-lam * t) * np.sin(s) + lap_cos(pts)

    return u, forcing, lap_u


def allen_cahn_initial(seed, box_half_length, n_gaussians=50, shape=10.0,
                       amplitude=0.5):
    """Random smooth initial data: Gaussians with uniform coefficients.

    Centers are distributed uniformly over the computational box from the
    seeded generator; coefficients are uniform in [-amplitude, amplitude].
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-box_half_length, box_half_length, (n_gaussians, 2))
    coeffs = rng.uniform(-amplitude, amplitude, n_gaussians)

    def u0(pts):
        out = np.zeros(len(pts))
        for c, w in zip(centers, coeffs):
            r2 = (pts[:, 0] - c[0]) ** 2 + (pts[:, 1] - c[1]) ** 2
            out += w * np.exp(-(shape**2) * r2)
        return out

    def lap_u0(pts):
        out = np.zeros(len(pts))
        for c, w in zip(centers, coeffs):
            r2 = (pts[:, 0] - c[0]) ** 2 + (pts[:, 1] - c[1]) ** 2
            out += w * np.exp(-(shape**2) * r2) * (4 * shape**4 * r2
                                                   - 4 * shape**2)
        return out

    return u0, lap_u0


# ---------------------------------------------------------------------------
# field CSV export / import


def export_field(fld, interior_mask, path):
    """Write a grid field as CSV with exterior nodes as NaN sentinels."""
    values = np.where(interior_mask, fld.values, np.nan)
    with open(path, "w") as fh:
        fh.write("L,N_u\n")
        fh.write(f"{fld.grid.box_half_length:.17g},{fld.grid.n_u}\n")
        for row in values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_field(path):
    """Read a field CSV written by export_field; returns (GridField, mask)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "L,N_u":
            raise ConfigError(f"unexpected field header {header!r} in {path}")
        l_str, n_str = fh.readline().strip().split(",")
        grid = UniformGrid(float(l_str), int(n_str))
        rows = [np.fromstring(line, sep=",") for line in fh if line.strip()]
    values = np.vstack(rows)
    if values.shape != (grid.n_u, grid.n_u):
        raise ConfigError(f"field body shape {values.shape} does not match "
                          f"N_u = {grid.n_u}")
    mask = ~np.isnan(values)
    return GridField(grid, np.where(mask, values, 0.0)), mask


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class ReportRow:
    n_u: int
    alpha2: float
    regularity: int
    tol: float
    rel_l2: float
    rel_linf: float
    gmres_iters: int
    wall_time: float
    steps_accepted: int = 0
    steps_rejected: int = 0
    error: str = ""


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n_u,alpha2,k,tol,rel_l2,rel_linf,gmres_iters,"
                     "wall_time,steps_accepted,steps_rejected,error\n")
            for r in self.rows:
                fh.write(f"{r.n_u},{r.alpha2:.17g},{r.regularity},"
                         f"{r.tol:.17g},{r.rel_l2:.17g},{r.rel_linf:.17g},"
                         f"{r.gmres_iters},{r.wall_time:.6g},"
                         f"{r.steps_accepted},{r.steps_rejected},{r.error}\n")


def build_domain(cfg):
    curves = []
    for i, spec in enumerate(cfg.curves):
        kind = spec["kind"]
        cx, cy = spec.get("cx", 0.0), spec.get("cy", 0.0)
        clockwise = i > 0
        if kind == "circle":
            curves.append(circle((cx, cy), spec.get("r", 1.0), clockwise))
        elif kind == "ellipse":
            curves.append(ellipse((cx, cy), spec.get("a", 1.0),
                                  spec.get("b", 0.5), clockwise))
        elif kind == "starfish":
            curves.append(starfish((cx, cy), spec.get("a", 1.0),
                                   spec.get("b", 0.3),
                                   int(spec.get("arms", 5)), clockwise,
                                   spec.get("phase", 0.0)))
        else:
            raise ConfigError(f"unknown curve kind {kind!r}")
    return Domain(curves, cfg.box_half_length)


def _pipeline_for(cfg, domain, n_u, regularity):
    grid = UniformGrid(cfg.box_half_length, n_u)
    return HelmholtzPipeline(
        domain, grid, [c["panels"] for c in cfg.curves],
        partition_radius=cfg.partition_radius, epsilon=cfg.epsilon,
        regularity=regularity, pad_threshold=cfg.pad_threshold,
        c_split=cfg.c_split, gmres_tol=cfg.gmres_tol,
        gmres_max_iter=cfg.gmres_max_iter)


def _eval_interior(domain, grid):
    inside, _ = domain.classify_batch(grid.points())
    return np.flatnonzero(inside)


def run_modhelm_point(cfg, domain, n_u, alpha2, regularity, analytic_mode):
    """One (n_u, alpha2, k) sweep point of the manufactured-field modes."""
    u_fn, lap_fn = FIELDS[cfg.solution]()
    t0 = time.perf_counter()
    pipe = _pipeline_for(cfg, domain, n_u, regularity)
    f_fn = lambda pts: alpha2 * u_fn(pts) - lap_fn(pts)
    f_omega = f_fn(pipe.interior_points)
    g = u_fn(pipe.disc.nodes)
    result = pipe.solve(alpha2, f_omega, g,
                        analytic_ext=f_fn if analytic_mode else None)

    eval_grid = UniformGrid(cfg.box_half_length, cfg.n_eval)
    if cfg.n_eval == n_u:
        u_num = result.u_omega
        pts = pipe.interior_points
    else:
        flat = _eval_interior(domain, eval_grid)
        pts = eval_grid.points()[flat]
        u_num = pipe.evaluate_on_grid(result, alpha2, eval_grid, flat)
    u_ref = u_fn(pts)
    row = ReportRow(
        n_u=n_u, alpha2=alpha2, regularity=pipe.regularity, tol=float("nan"),
        rel_l2=relative_error(u_num, u_ref, norm_l2),
        rel_linf=relative_error(u_num, u_ref, norm_linf),
        gmres_iters=result.report.iterations,
        wall_time=time.perf_counter() - t0)
    return row, pipe, result


def _nested_restrict(u_omega, pipe, domain, n_eval):
    """Interior values on a coarser nested grid (n_u a multiple of n_eval)."""
    n_u = pipe.grid.n_u
    if n_u % n_eval != 0:
        raise ConfigError(f"evaluation grid {n_eval} must divide n_u = {n_u} "
                          "for evolution modes")
    stride = n_u // n_eval
    full = np.full(n_u * n_u, np.nan)
    full[pipe.interior_flat] = u_omega
    sub = full.reshape(n_u, n_u)[::stride, ::stride].ravel()
    eval_grid = UniformGrid(pipe.grid.box_half_length, n_eval)
    flat = _eval_interior(domain, eval_grid)
    vals = sub[flat]
    if np.any(np.isnan(vals)):
        raise ParameterError("nested evaluation grid pulled an exterior node")
    return vals, flat


def make_stage_solver(pipe, dirichlet):
    """Wrap the pipeline as the per-stage Helmholtz solver for imex_step."""

    def solver(alpha2, f_omega, t_stage):
        g = dirichlet(t_stage, pipe.disc.nodes)
        return pipe.solve(alpha2, f_omega, g).u_omega

    return solver


def run_heat_point(cfg, domain, n_u, tol, out_dir=None, tag=""):
    """Adaptive heat run against the manufactured solution; returns row."""
    u_fn, forcing, lap_fn = heat_manufactured()
    t_start = time.perf_counter()
    pipe = _pipeline_for(cfg, domain, n_u, cfg.regularity_fixed)
    problem = ProblemDefinition(
        forcing=forcing,
        dirichlet=lambda t, pts: u_fn(t, pts),
        initial=lambda pts: u_fn(cfg.t_start, pts),
        diffusion=cfg.diffusion,
        initial_laplacian=lambda pts: lap_fn(cfg.t_start, pts))
    controller = TimeController(tol=tol, order=cfg.tableau_order(),
                                dt=cfg.dt_initial, t=cfg.t_start)
    traj = integrate(problem, make_stage_solver(pipe, problem.dirichlet),
                     pipe.interior_points, cfg.tableau_obj(), controller,
                     cfg.t_end)
    u_ref = u_fn(cfg.t_end, pipe.interior_points)
    row = ReportRow(
        n_u=n_u, alpha2=float("nan"), regularity=pipe.regularity, tol=tol,
        rel_l2=relative_error(traj.u_final, u_ref, norm_l2),
        rel_linf=relative_error(traj.u_final, u_ref, norm_linf),
        gmres_iters=pipe.gmres_iters_total,
        wall_time=time.perf_counter() - t_start,
        steps_accepted=traj.accepted, steps_rejected=traj.rejected)
    if out_dir is not None:
        traj.export_steps_csv(f"{out_dir}/steps{tag}.csv")
    return row, pipe, traj


def run_allen_cahn_point(cfg, domain, n_u, tol, out_dir=None, tag="",
                         snapshots=()):
    """One Allen-Cahn run; returns (row-without-errors, pipe, trajectory)."""
    t_start = time.perf_counter()
    pipe = _pipeline_for(cfg, domain, n_u, cfg.regularity_fixed)
    u0_fn, lap0_fn = allen_cahn_initial(cfg.seed, cfg.box_half_length)

    def forcing(t, pts, u_vals):
        return u_vals * (1.0 - u_vals**2)

    problem = ProblemDefinition(
        forcing=forcing,
        dirichlet=lambda t, pts: np.exp(-0.5 * t) * u0_fn(pts),
        initial=u0_fn,
        diffusion=cfg.diffusion,
        initial_laplacian=lap0_fn)
    controller = TimeController(tol=tol, order=cfg.tableau_order(),
                                dt=cfg.dt_initial, t=cfg.t_start)
    traj = integrate(problem, make_stage_solver(pipe, problem.dirichlet),
                     pipe.interior_points, cfg.tableau_obj(), controller,
                     cfg.t_end, output_times=snapshots)
    row = ReportRow(
        n_u=n_u, alpha2=float("nan"), regularity=pipe.regularity, tol=tol,
        rel_l2=float("nan"), rel_linf=float("nan"),
        gmres_iters=pipe.gmres_iters_total,
        wall_time=time.perf_counter() - t_start,
        steps_accepted=traj.accepted, steps_rejected=traj.rejected)
    if out_dir is not None:
        traj.export_steps_csv(f"{out_dir}/steps{tag}.csv")
    return row, pipe, traj


def run_experiment(cfg, out_dir=None):
    """Execute the configured sweep; returns the report, writes artifacts."""
    domain = build_domain(cfg)
    report = ExperimentReport()
    out_dir = out_dir or cfg.out_dir

    if cfg.mode in ("modhelm", "modhelm-analytic-ext"):
        analytic = cfg.mode == "modhelm-analytic-ext"
        first_dump = True
        for regularity in cfg.regularity_list:
            for n_u in cfg.n_u_list:
                for alpha2 in cfg.alpha2_list:
                    try:
                        row, pipe, result = run_modhelm_point(
                            cfg, domain, n_u, alpha2, regularity, analytic)
                    except Exception as exc:  # noqa: BLE001 - per-point isolation
                        report.rows.append(ReportRow(
                            n_u=n_u, alpha2=alpha2,
                            regularity=regularity or -1, tol=float("nan"),
                            rel_l2=float("nan"), rel_linf=float("nan"),
                            gmres_iters=0, wall_time=0.0,
                            error=type(exc).__name__))
                        continue
                    report.rows.append(row)
                    if out_dir is not None and first_dump:
                        full = np.full(n_u * n_u, np.nan)
                        full[pipe.interior_flat] = result.u_omega
                        export_field(
                            GridField(pipe.grid, full.reshape(n_u, n_u)),
                            pipe.layout.inside_mask,
                            f"{out_dir}/field_solution.csv")
                        pipe.layout.export_csv(f"{out_dir}/layout.csv")
                        first_dump = False
    elif cfg.mode == "heat":
        for n_u in cfg.n_u_list:
            for tol in cfg.tol_list:
                tag = f"_nu{n_u}_tol{tol:.0e}"
                try:
                    row, pipe, traj = run_heat_point(cfg, domain, n_u, tol,
                                                     out_dir, tag)
                except Exception as exc:  # noqa: BLE001
                    report.rows.append(ReportRow(
                        n_u=n_u, alpha2=float("nan"), regularity=-1, tol=tol,
                        rel_l2=float("nan"), rel_linf=float("nan"),
                        gmres_iters=0, wall_time=0.0,
                        error=type(exc).__name__))
                    continue
                report.rows.append(row)
    elif cfg.mode == "allen-cahn":
        n_u = cfg.n_u_list[0]
        ref_tol = min(cfg.tol_list) / 10.0 if cfg.reference_tol is None \
            else cfg.reference_tol
        row_ref, pipe_ref, traj_ref = run_allen_cahn_point(
            cfg, domain, n_u, ref_tol, out_dir, "_reference",
            snapshots=cfg.snapshot_times)
        u_ref_eval, _ = _nested_restrict(traj_ref.u_final, pipe_ref, domain,
                                         cfg.n_eval)
        row_ref.error = "reference"
        report.rows.append(row_ref)
        if out_dir is not None:
            full = np.full(n_u * n_u, np.nan)
            full[pipe_ref.interior_flat] = traj_ref.u_final
            export_field(GridField(pipe_ref.grid, full.reshape(n_u, n_u)),
                         pipe_ref.layout.inside_mask,
                         f"{out_dir}/field_final_reference.csv")
            pipe_ref.layout.export_csv(f"{out_dir}/layout.csv")
        for tol in cfg.tol_list:
            tag = f"_tol{tol:.0e}"
            row, pipe, traj = run_allen_cahn_point(cfg, domain, n_u, tol,
                                                   out_dir, tag)
            u_eval, _ = _nested_restrict(traj.u_final, pipe, domain,
                                         cfg.n_eval)
            row.rel_l2 = relative_error(u_eval, u_ref_eval, norm_l2)
            row.rel_linf = relative_error(u_eval, u_ref_eval, norm_linf)
            report.rows.append(row)
    else:
        raise ConfigError(f"unknown mode {cfg.mode!r}")

    if out_dir is not None:
        report.export_csv(f"{out_dir}/report.csv")
    return report
