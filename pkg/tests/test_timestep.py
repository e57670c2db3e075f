from fractions import Fraction as F

import numpy as np
import pytest

from heatbie.exceptions import ParameterError, StallError
from heatbie.freespace import GridField, UniformGrid, solve_freespace
from heatbie.timestep import (ButcherPair, ProblemDefinition, TimeController,
                              builtin_tableaus, estimate_and_control,
                              imex_step, integrate)


class TestTableaus:
    def test_all_builtins_validate(self):
        tabs = builtin_tableaus()
        assert set(tabs) == {"FBE", "IMEXRK2", "IMEXRK34"}

    def test_row_sums_exact_rational(self):
        for tab in builtin_tableaus().values():
            for mat in (tab.a_implicit, tab.a_explicit):
                for i, row in enumerate(mat):
                    assert sum(row) == tab.c[i]

    def test_weight_sums_exact_rational(self):
        for tab in builtin_tableaus().values():
            for row in (tab.b_implicit, tab.b_explicit, tab.bt_implicit,
                        tab.bt_explicit):
                assert sum(row) == 1

    def test_triangularity(self):
        for tab in builtin_tableaus().values():
            n = tab.n_stages
            for i in range(n):
                for j in range(i, n):
                    assert tab.a_explicit[i][j] == 0
                for j in range(i + 1, n):
                    assert tab.a_implicit[i][j] == 0
            assert tab.a_implicit[0][0] == 0
            for i in range(1, n):
                assert tab.a_implicit[i][i] != 0

    def test_imexrk34_spot_values(self):
        tab = builtin_tableaus()["IMEXRK34"]
        assert tab.a_implicit[1][1] == F(1, 4)
        assert tab.c[1] == F(1, 2)
        assert tab.a_implicit[1][0] + tab.a_implicit[1][1] == F(1, 2)
        assert tab.b_implicit[-1] == F(1, 4)
        assert tab.bt_explicit[0] == F(4586570599, 29645900160)
        # stiffly accurate: last implicit row equals the weights (FSAL)
        assert tab.a_implicit[-1] == tab.b_implicit

    def test_imexrk34_explicit_matches_printed_fractions(self):
        # the first-column entries absorb the ~1e-26 row-sum defect of the
        # printed tables; they must agree with the printed fractions far
        # below double precision
        tab = builtin_tableaus()["IMEXRK34"]
        printed = {
            (3, 0): F(-116923316275, 2393684061468),
            (4, 0): F(-451086348788, 2902428689909),
            (5, 0): F(647845179188, 3216320057751),
        }
        for (i, j), frac in printed.items():
            assert abs(tab.a_explicit[i][j] - frac) < F(1, 10**24)

    def test_fbe_weight_rows(self):
        tab = builtin_tableaus()["FBE"]
        assert tab.b_implicit == (0, 1)
        assert tab.b_explicit == (1, 0)
        assert tab.a_implicit[1][1] == 1

    def test_invariant_violation_raises(self):
        with pytest.raises(ParameterError):
            ButcherPair(name="bad",
                        a_implicit=((F(0), F(0)), (F(0), F(1))),
                        a_explicit=((F(0), F(0)), (F(1, 2), F(0))),
                        b_implicit=(F(0), F(1)), b_explicit=(F(1), F(0)),
                        bt_implicit=(F(0), F(1)), bt_explicit=(F(1), F(0)),
                        c=(F(0), F(1)), order=1, embedded_order=1)


class TestController:
    def test_factor_one_at_nine_tenths(self):
        ctrl = TimeController(tol=1e-4, order=4, dt=0.2)
        # with U = (1, 0) and U~ = (1 - d, 0) the 1/N-scaled norms give
        # r = d exactly
        accept, new_dt, r = estimate_and_control(
            np.array([1.0, 0.0]), np.array([1.0 - 0.9e-4, 0.0]), ctrl)
        assert accept
        assert r == pytest.approx(0.9e-4, rel=1e-12)
        assert new_dt == pytest.approx(0.2, rel=1e-12)

    def test_halving_at_32x(self):
        ctrl = TimeController(tol=1e-4, order=4, dt=0.2)
        r_target = 0.9e-4 * 32.0
        u = np.array([1.0, 0.0])
        u_emb = np.array([1.0 - r_target, 0.0])
        accept, new_dt, r = estimate_and_control(u, u_emb, ctrl)
        assert not accept
        assert new_dt == pytest.approx(0.1, rel=1e-12)

    def test_error_ratio(self):
        ctrl = TimeController(tol=1.0, order=2, dt=0.1)
        _, _, r = estimate_and_control(np.array([2.0, 0.0]),
                                       np.array([1.0, 0.0]), ctrl)
        assert r == pytest.approx(0.5, rel=1e-14)

    def test_nan_rejects_and_halves(self):
        ctrl = TimeController(tol=1e-4, order=4, dt=0.2)
        accept, new_dt, r = estimate_and_control(
            np.array([1.0, np.nan]), np.array([1.0, 0.0]), ctrl)
        assert not accept and new_dt == pytest.approx(0.1)


def periodic_solver(grid):
    """Stage solver on the torus: no boundary, pure spectral solve."""

    def solver(alpha2, f_interior, t_stage):
        f = GridField(grid, f_interior.reshape(grid.n_u, grid.n_u))
        u, _ = solve_freespace(f, alpha2, check_support=False)
        return u.values.ravel()

    return solver


class TestImexStep:
    def test_imexrk2_reproduces_displayed_update(self):
        # one IMEXRK2 step on the torus must match the hand-derived update
        # U2_bar solves (2/dt) U2 - Lap U2 = (2/dt) U_N + F(t_N), then
        # U_{N+1} = 2 U2 - U_N + dt (F(t mid) - F(t_N)).
        grid = UniformGrid(np.pi, 32)
        pts = grid.points()
        kx = 2.0 * np.pi / (2 * np.pi)

        def forcing(t, p, u):
            return np.cos(t) * np.sin(kx * p[:, 0])

        problem = ProblemDefinition(
            forcing=forcing, dirichlet=lambda t, p: None,
            initial=lambda p: np.sin(kx * p[:, 0]),
            initial_laplacian=lambda p: -(kx**2) * np.sin(kx * p[:, 0]))
        tab = builtin_tableaus()["IMEXRK2"]
        solver = periodic_solver(grid)
        u0 = problem.initial(pts)
        k1 = problem.initial_laplacian(pts)
        dt = 0.07
        u1, _, state, _ = imex_step(u0, 0.0, dt, tab, problem, solver, k1, pts)

        alpha2 = 2.0 / dt
        f_stage = alpha2 * (u0 + dt * 0.5 * forcing(0.0, pts, u0))
        u2_bar = solver(alpha2, f_stage, 0.0)
        by_hand = (2.0 * u2_bar - u0
                   + dt * (forcing(0.5 * dt, pts, None)
                           - forcing(0.0, pts, None)))
        assert np.max(np.abs(u1 - by_hand)) <= 1e-13 * np.max(np.abs(u1))

    def test_one_step_order_ratio(self):
        # exact solution U = exp(-2t) sin(sqrt(2) x) of the unforced heat
        # equation on the torus; halving dt cuts the one-step IMEXRK34
        # error by about 2^5
        grid = UniformGrid(np.pi * np.sqrt(2.0), 48)
        pts = grid.points()
        w = np.sqrt(2.0)

        def exact(t, p):
            return np.exp(-2.0 * t) * np.sin(w * p[:, 0])

        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.zeros(len(p)),
            dirichlet=lambda t, p: None,
            initial=lambda p: exact(0.0, p),
            initial_laplacian=lambda p: -2.0 * exact(0.0, p))
        tab = builtin_tableaus()["IMEXRK34"]
        solver = periodic_solver(grid)
        u0 = problem.initial(pts)
        k1 = problem.initial_laplacian(pts)
        errs = []
        for dt in (0.2, 0.1):
            u1, _, _, _ = imex_step(u0, 0.0, dt, tab, problem, solver, k1,
                                    pts)
            errs.append(np.max(np.abs(u1 - exact(dt, pts))))
        ratio = errs[0] / errs[1]
        assert 24.0 <= ratio <= 40.0

    def test_fsal_identity(self):
        grid = UniformGrid(np.pi, 16)
        pts = grid.points()
        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.cos(p[:, 0]) * np.exp(-t),
            dirichlet=lambda t, p: None,
            initial=lambda p: np.sin(p[:, 0]),
            initial_laplacian=lambda p: -np.sin(p[:, 0]))
        tab = builtin_tableaus()["IMEXRK34"]
        solver = periodic_solver(grid)
        u0 = problem.initial(pts)
        k1 = problem.initial_laplacian(pts)
        u1, _, state1, k_last = imex_step(u0, 0.0, 0.05, tab, problem, solver,
                                          k1, pts)
        # the carried stage is consumed bitwise as the next first stage
        _, _, state2, _ = imex_step(u1, 0.05, 0.05, tab, problem, solver,
                                    k_last, pts)
        assert state2.k_implicit[0] is not None
        assert np.array_equal(state2.k_implicit[0], k_last)

    def test_alpha2_dt_coupling(self):
        # every implicit stage must request alpha2 = 1/(C dt a_ii)
        grid = UniformGrid(np.pi, 16)
        pts = grid.points()
        seen = []
        base = periodic_solver(grid)

        def recording_solver(alpha2, f, t):
            seen.append(alpha2)
            return base(alpha2, f, t)

        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.zeros(len(p)),
            dirichlet=lambda t, p: None,
            initial=lambda p: np.sin(p[:, 0]),
            initial_laplacian=lambda p: -np.sin(p[:, 0]),
            diffusion=1e-3)
        tab = builtin_tableaus()["IMEXRK34"]
        dt = 0.02
        imex_step(problem.initial(pts), 0.0, dt, tab, problem,
                  recording_solver, problem.initial_laplacian(pts), pts)
        a_i = tab.float_arrays()[0]
        expected = [1.0 / (1e-3 * dt * a_i[i, i]) for i in range(1, 6)]
        assert np.allclose(seen, expected, rtol=1e-14)


class TestIntegrate:
    def test_zero_everything_stays_zero(self):
        grid = UniformGrid(np.pi, 16)
        pts = grid.points()
        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.zeros(len(p)),
            dirichlet=lambda t, p: None,
            initial=lambda p: np.zeros(len(p)),
            initial_laplacian=lambda p: np.zeros(len(p)))
        ctrl = TimeController(tol=1e-6, order=4, dt=0.1)
        traj = integrate(problem, periodic_solver(grid), pts,
                         builtin_tableaus()["IMEXRK34"], ctrl, 1.0,
                         fixed_dt=0.25)
        assert np.all(traj.u_final == 0.0)
        assert traj.t_final == pytest.approx(1.0, abs=1e-13)

    def test_adaptive_heat_on_torus(self):
        # manufactured decaying mode; the controller must keep the final
        # error near the tolerance
        grid = UniformGrid(np.pi, 32)
        pts = grid.points()

        def exact(t, p):
            return np.exp(-t) * np.sin(p[:, 0]) + 2.0

        def forcing(t, p, u):
            # U_t - Lap U for the manufactured field
            return np.zeros(len(p))

        # U = exp(-t) sin x + 2: U_t = -exp(-t) sin x; Lap U = -exp(-t) sin x
        problem = ProblemDefinition(
            forcing=forcing, dirichlet=lambda t, p: None,
            initial=lambda p: exact(0.0, p),
            initial_laplacian=lambda p: -np.exp(0.0) * np.sin(p[:, 0]))
        ctrl = TimeController(tol=1e-7, order=4, dt=0.02)
        traj = integrate(problem, periodic_solver(grid), pts,
                         builtin_tableaus()["IMEXRK34"], ctrl, 1.0)
        err = np.max(np.abs(traj.u_final - exact(1.0, pts)))
        assert err <= 1e-5
        assert traj.accepted > 0

    def test_stall_error(self):
        grid = UniformGrid(np.pi, 16)
        pts = grid.points()
        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.zeros(len(p)),
            dirichlet=lambda t, p: None,
            initial=lambda p: np.sin(p[:, 0]),
            initial_laplacian=lambda p: -np.sin(p[:, 0]))
        ctrl = TimeController(tol=1e-6, order=4, dt=1e-13)
        with pytest.raises(StallError):
            integrate(problem, periodic_solver(grid), pts,
                      builtin_tableaus()["IMEXRK34"], ctrl, 1.0,
                      fixed_dt=1e-13)

    def test_history_csv_roundtrip(self, tmp_path):
        grid = UniformGrid(np.pi, 16)
        pts = grid.points()
        problem = ProblemDefinition(
            forcing=lambda t, p, u: np.zeros(len(p)),
            dirichlet=lambda t, p: None,
            initial=lambda p: np.sin(p[:, 0]) + 2.0,
            initial_laplacian=lambda p: -np.sin(p[:, 0]))
        ctrl = TimeController(tol=1e-5, order=4, dt=0.1)
        traj = integrate(problem, periodic_solver(grid), pts,
                         builtin_tableaus()["IMEXRK34"], ctrl, 0.5)
        path = tmp_path / "steps.csv"
        traj.export_steps_csv(path)
        rows = np.genfromtxt(path, delimiter=",", names=True)
        assert rows["t"].size == len(traj.history)
