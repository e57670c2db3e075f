"""Adaptive IMEX Runge-Kutta time integration.

Each implicit stage of an IMEX step reduces to one modified Helmholtz solve
with alpha^2 = 1/(C dt a^I_ii); the solver itself is injected as a callable
(alpha2, f_interior, t_stage) -> stage field, so this module is independent
of the spatial machinery.  Step control uses the embedded lower-order
solution and the 1/N-scaled l2 norm.
"""

from dataclasses import dataclass, field
from fractions import Fraction as F
from typing import Callable, Optional

import numpy as np

from .exceptions import ParameterError, StallError
from .norms import norm_l2


@dataclass(frozen=True)
class ButcherPair:
    """Implicit/explicit Butcher tableau pair with embedded weights.

    Coefficients are stored as exact rationals; the weight rows may differ
    between the implicit and explicit tables (they do for FBE).
    """

    name: str
    a_implicit: tuple
    a_explicit: tuple
    b_implicit: tuple
    b_explicit: tuple
    bt_implicit: tuple
    bt_explicit: tuple
    c: tuple
    order: int
    embedded_order: int

    def __post_init__(self):
        n = self.n_stages
        for mat, kind in ((self.a_implicit, "implicit"),
                          (self.a_explicit, "explicit")):
            if len(mat) != n or any(len(row) != n for row in mat):
                raise ParameterError(f"{self.name}: {kind} table is not {n}x{n}")
            for i in range(n):
                if sum(mat[i]) != self.c[i]:
                    raise ParameterError(
                        f"{self.name}: {kind} row {i} sums to {sum(mat[i])}, "
                        f"expected c = {self.c[i]}")
        for i in range(n):
            for j in range(n):
                if j >= i and self.a_explicit[i][j] != 0:
                    raise ParameterError(f"{self.name}: explicit table not "
                                         "strictly lower triangular")
                if j > i and self.a_implicit[i][j] != 0:
                    raise ParameterError(f"{self.name}: implicit table not "
                                         "lower triangular")
        if self.a_implicit[0][0] != 0:
            raise ParameterError(f"{self.name}: a^I_11 must vanish")
        for i in range(1, n):
            if self.a_implicit[i][i] == 0:
                raise ParameterError(f"{self.name}: a^I_{i + 1}{i + 1} must be "
                                     "nonzero")
        for row, kind in ((self.b_implicit, "b^I"), (self.b_explicit, "b^E"),
                          (self.bt_implicit, "bt^I"), (self.bt_explicit, "bt^E")):
            if len(row) != n:
                raise ParameterError(f"{self.name}: {kind} has wrong length")
            if sum(row) != 1:
                raise ParameterError(f"{self.name}: {kind} sums to {sum(row)}")

    @property
    def n_stages(self):
        return len(self.c)

    def float_arrays(self):
        """(a_I, a_E, b_I, b_E, bt_I, bt_E, c) as float arrays."""
        conv = lambda m: np.array(m, dtype=float)
        return (conv(self.a_implicit), conv(self.a_explicit),
                conv(self.b_implicit), conv(self.b_explicit),
                conv(self.bt_implicit), conv(self.bt_explicit),
                conv(self.c))


def _fbe():
    z, one = F(0), F(1)
    return ButcherPair(
        name="FBE",
        a_implicit=((z, z), (z, one)),
        a_explicit=((z, z), (one, z)),
        b_implicit=(z, one), b_explicit=(one, z),
        bt_implicit=(z, one), bt_explicit=(one, z),
        c=(z, one), order=1, embedded_order=1)


def _imexrk2():
    z, h = F(0), F(1, 2)
    return ButcherPair(
        name="IMEXRK2",
        a_implicit=((z, z), (z, h)),
        a_explicit=((z, z), (h, z)),
        b_implicit=(z, F(1)), b_explicit=(z, F(1)),
        bt_implicit=(z, F(1)), bt_explicit=(z, F(1)),
        c=(z, h), order=2, embedded_order=1)


def _imexrk34():
    z = F(0)
    c = (z, F(1, 2), F(83, 250), F(31, 50), F(17, 20), F(1))
    a_i = (
        (z, z, z, z, z, z),
        (F(1, 4), F(1, 4), z, z, z, z),
        (F(8611, 62500), F(-1743, 31250), F(1, 4), z, z, z),
        (F(5012029, 34652500), F(-654441, 2922500), F(174375, 388108),
         F(1, 4), z, z),
        (F(15267082809, 155376265600), F(-71443401, 120774400),
         F(730878875, 902184768), F(2285395, 8070912), F(1, 4), z),
        (F(82889, 524892), z, F(15625, 83664), F(69875, 102672),
         F(-2260, 8211), F(1, 4)),
    )
    # Explicit rows 4-6 of the printed tables sum to c only to ~1e-26; the
    # first-column entries below absorb that defect so the rational row-sum
    # identity holds exactly, without changing any coefficient in float64.
    a_e_tail = (
        (F(-2731218467317, 15368042101831), F(9408046702089, 11113171139209)),
        (F(-2682348792572, 7519795681897), F(12662868775082, 11960479115383),
         F(3355817975965, 11060851509271)),
        (F(73281519250, 8382639484533), F(552539513391, 3454668386233),
         F(3354512671639, 8306763924573), F(4040, 17871)),
    )
    a_e = (
        (z, z, z, z, z, z),
        (F(1, 2), z, z, z, z, z),
        (F(13861, 62500), F(6889, 62500), z, z, z, z),
        (c[3] - sum(a_e_tail[0]), *a_e_tail[0], z, z, z),
        (c[4] - sum(a_e_tail[1]), *a_e_tail[1], z, z),
        (c[5] - sum(a_e_tail[2]), *a_e_tail[2], z),
    )
    b = (F(82889, 524892), z, F(15625, 83664), F(69875, 102672),
         F(-2260, 8211), F(1, 4))
    bt = (F(4586570599, 29645900160), z, F(178811875, 945068544),
          F(814220225, 1159782912), F(-3700637, 11593932), F(61727, 225920))
    return ButcherPair(
        name="IMEXRK34",
        a_implicit=a_i, a_explicit=a_e,
        b_implicit=b, b_explicit=b,
        bt_implicit=bt, bt_explicit=bt,
        c=c, order=4, embedded_order=3)


_BUILTINS = None


def builtin_tableaus():
    """The three built-in schemes: FBE, IMEXRK2, IMEXRK34."""
    global _BUILTINS
    if _BUILTINS is None:
        _BUILTINS = {"FBE": _fbe(), "IMEXRK2": _imexrk2(),
                     "IMEXRK34": _imexrk34()}
    return dict(_BUILTINS)


@dataclass
class ProblemDefinition:
    """Right-hand side, boundary data and initial state of one evolution.

    forcing(t, points, u) is the explicitly treated term (the heat forcing
    F(t, x) or the reaction term u(1 - u^2)); the implicitly treated term is
    always C * Laplacian(u).
    """

    forcing: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    dirichlet: Callable[[float, np.ndarray], np.ndarray]
    initial: Callable[[np.ndarray], np.ndarray]
    diffusion: float = 1.0
    initial_laplacian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.diffusion > 0.0:
            raise ParameterError("diffusion coefficient must be positive")


@dataclass
class StageState:
    """Implicit/explicit stage values of one IMEX step."""

    k_implicit: list
    k_explicit: list
    u_bar: list


@dataclass
class TimeController:
    """Embedded-error step controller with the 0.9 safety factor."""

    tol: float
    order: int
    dt: float
    t: float = 0.0
    safety: float = 0.9
    accepted: int = 0
    rejected: int = 0
    max_growth: float = 5.0

    def __post_init__(self):
        if not self.tol > 0.0 or not self.dt > 0.0:
            raise ParameterError("tolerance and initial step must be positive")


def estimate_and_control(u_new, u_embedded, controller):
    """Accept/reject decision plus the always-updated next step size.

    r = ||U - U~|| / ||U|| in the 1/N-scaled l2 norm; the step is accepted
    iff r < TOL, and dt is updated by the controller formula either way.
    A NaN error estimate rejects the step and halves dt.
    """
    norm_u = norm_l2(u_new)
    if norm_u == 0.0:
        raise ParameterError("step controller needs a nonzero solution norm")
    r = norm_l2(u_new - u_embedded) / norm_u
    if not np.isfinite(r):
        controller.rejected += 1
        controller.dt = 0.5 * controller.dt
        return False, controller.dt, float("nan")
    if r == 0.0:
        factor = controller.max_growth
    else:
        factor = (controller.safety * controller.tol / r) ** (
            1.0 / (controller.order + 1))
    accept = r < controller.tol
    controller.dt = controller.dt * factor
    if accept:
        controller.accepted += 1
    else:
        controller.rejected += 1
    return accept, controller.dt, r


def imex_step(u_n, t_n, dt, tableau, problem, helmholtz_solver, k_i_first,
              points):
    """One IMEX Runge-Kutta step.

    Parameters
    ----------
    u_n : solution values on the interior nodes at t_n
    k_i_first : first implicit stage, i.e. C * Lap(u_n) (FSAL carry-over or
        initial seed)
    helmholtz_solver : callable (alpha2, f_interior, t_stage) -> stage field
    points : interior node coordinates, passed to the explicit forcing

    Returns
    -------
    (u_next, u_embedded, StageState, k_i_last)
    """
    a_i, a_e, b_i, b_e, bt_i, bt_e, c = tableau.float_arrays()
    n_s = tableau.n_stages
    cdiff = problem.diffusion

    k_i = [np.asarray(k_i_first, dtype=float)]
    k_e = [np.asarray(problem.forcing(t_n, points, u_n), dtype=float)]
    u_bar = [u_n]

    for i in range(1, n_s):
        a_ii = a_i[i, i]
        alpha2 = 1.0 / (cdiff * dt * a_ii)
        rhs = u_n.copy()
        for j in range(i):
            rhs += dt * (a_e[i, j] * k_e[j] + a_i[i, j] * k_i[j])
        f_stage = alpha2 * rhs
        t_stage = t_n + c[i] * dt
        u_i = helmholtz_solver(alpha2, f_stage, t_stage)
        k_i.append(cdiff * (alpha2 * u_i - f_stage))
        k_e.append(np.asarray(problem.forcing(t_stage, points, u_i),
                              dtype=float))
        u_bar.append(u_i)

    u_next = u_n.copy()
    u_emb = u_n.copy()
    for j in range(n_s):
        u_next += dt * (b_e[j] * k_e[j] + b_i[j] * k_i[j])
        u_emb += dt * (bt_e[j] * k_e[j] + bt_i[j] * k_i[j])
    state = StageState(k_implicit=k_i, k_explicit=k_e, u_bar=u_bar)
    return u_next, u_emb, state, k_i[-1]


@dataclass
class Trajectory:
    """Integration output: final state, snapshots, and the step history."""

    t_final: float
    u_final: np.ndarray
    snapshots: dict
    history: list = field(default_factory=list)   # rows (t, dt, r, accepted)
    accepted: int = 0
    rejected: int = 0
    max_abs: float = 0.0   # running max of |U| over accepted states

    def export_steps_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,dt,r,accepted\n")
            for t, dt, r, acc in self.history:
                fh.write(f"{t:.17g},{dt:.17g},{r:.17g},{int(acc)}\n")


def integrate(problem, helmholtz_solver, points, tableau, controller, t_end,
              output_times=(), fixed_dt=None, stall_floor=1e-12):
    """March the problem from controller.t to t_end.

    Adaptive stepping repeats imex_step under estimate_and_control; the step
    is clipped so output times and t_end are hit exactly.  fixed_dt disables
    the controller (every step accepted) for order studies.  The recorded
    history rows are (t_reached_or_attempted, dt_used, r, accepted).
    """
    t0 = controller.t
    if not t_end > t0:
        raise ParameterError("t_end must exceed the start time")
    u = np.asarray(problem.initial(points), dtype=float)
    if problem.initial_laplacian is not None:
        k_first = problem.diffusion * np.asarray(
            problem.initial_laplacian(points), dtype=float)
    else:
        raise ParameterError("integrate needs an initial Laplacian seed; the "
                             "driver supplies one (analytic or spectral)")

    milestones = sorted(set(float(t) for t in output_times) | {float(t_end)})
    for m in milestones:
        if m <= t0 or m > t_end + 1e-14:
            raise ParameterError(f"output time {m} outside (t0, t_end]")
    snapshots = {}
    traj = Trajectory(t_final=t0, u_final=u, snapshots=snapshots,
                      max_abs=float(np.max(np.abs(u))) if u.size else 0.0)

    t = t0
    next_idx = 0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        target = milestones[next_idx]
        dt_prop = fixed_dt if fixed_dt is not None else controller.dt
        dt_use = min(dt_prop, target - t)
        if dt_use < stall_floor:
            raise StallError(f"step size underflow ({dt_use:.3e}) at t = {t}")
        u_new, u_emb, _, k_last = imex_step(
            u, t, dt_use, tableau, problem, helmholtz_solver, k_first, points)
        if fixed_dt is not None:
            accept, r = True, 0.0
        else:
            # controller works with the step actually taken
            controller.dt = dt_use
            accept, _, r = estimate_and_control(u_new, u_emb, controller)
        traj.history.append((t + dt_use if accept else t, dt_use, r, accept))
        if accept:
            t += dt_use
            u = u_new
            k_first = k_last
            traj.max_abs = max(traj.max_abs, float(np.max(np.abs(u))))
            if abs(t - target) <= 1e-13 * max(1.0, abs(target)):
                t = target
                snapshots[target] = u.copy()
                next_idx += 1
        # rejected: retry from the same state with the shrunken dt
    traj.t_final = t
    traj.u_final = u
    traj.accepted = sum(1 for row in traj.history if row[3])
    traj.rejected = len(traj.history) - traj.accepted
    return traj
