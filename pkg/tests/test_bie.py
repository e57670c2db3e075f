import numpy as np
import pytest
from scipy.special import i1, k1

from heatbie.bie import (HomogeneousSolver, apply_system, eval_homogeneous,
                         gmres, kernel_M, panel_rows_batch,
                         refine_panel_toward_target, solve_density,
                         split_M_boundary, split_M_domain, upsample_for_alpha)
from heatbie.exceptions import ConvergenceError, ParameterError
from heatbie.geometry import Domain, circle, discretize_boundary


def chord_points(dist):
    """Two unit-circle points separated by |y - x| = dist, with y's normal."""
    dth = 2.0 * np.arcsin(dist / 2.0)
    x = np.array([1.0, 0.0])
    y = np.array([np.cos(dth), np.sin(dth)])
    return x, y, y.copy()


class TestKernel:
    def test_coincident_limit_unit_circle(self):
        # continuous limit of the double-layer kernel along the boundary is
        # +kappa/2 in this convention (the -kappa/2pi of the printed form
        # belongs to a -1/pi scaled kernel; see the solver docstring)
        val = kernel_M((1.0, 0.0), (1.0, 0.0), (1.0, 0.0), 1.0, alpha=3.0)
        assert val == pytest.approx(0.5, abs=1e-15)
        # approach along the circle converges to the same value (chord
        # geometry loses digits below r ~ 1e-6 in float, so stop at 1e-5)
        x, y, nu = chord_points(1e-5)
        approach = kernel_M(x, y, nu, 1.0, alpha=3.0)
        assert approach == pytest.approx(0.5, rel=1e-4)

    def test_zero_curvature_limit(self):
        val = kernel_M((0.3, 0.2), (0.3, 0.2), (0.0, 1.0), 0.0, alpha=5.0)
        assert val == 0.0

    def test_off_diagonal_value(self):
        # alpha K1(alpha r) e.nu with alpha=10, r=0.1, aligned normal
        val = kernel_M((0.0, 0.0), (0.1, 0.0), (1.0, 0.0), 0.0, alpha=10.0)
        assert val == pytest.approx(10.0 * k1(1.0), rel=1e-13)
        assert val == pytest.approx(6.019072301972346, rel=1e-12)


class TestBoundarySplit:
    def test_reconstruction_on_chord(self):
        alpha = 10.0
        x, y, nu = chord_points(0.1)
        m0, ml = split_M_boundary(x, y, nu, 1.0, alpha)
        direct = kernel_M(x, y, nu, 1.0, alpha)
        recon = m0 + np.log(np.hypot(*(y - x))) * ml
        assert recon == pytest.approx(direct, rel=1e-11)

    def test_diagonal_values(self):
        m0, ml = split_M_boundary((1.0, 0.0), (1.0, 0.0), (1.0, 0.0), 1.0, 7.0)
        assert m0 == pytest.approx(0.5, abs=1e-15)
        assert ml == 0.0

    def test_log_coefficient_vanishes_at_coincidence(self):
        # I1(0) = 0 and the chord-normal geometry kill M_L at short range
        alpha = 4.0
        for dist in (1e-3, 1e-5):
            x, y, nu = chord_points(dist)
            _, ml = split_M_boundary(x, y, nu, 1.0, alpha)
            assert abs(ml) <= 10.0 * alpha**2 * dist**2


class TestDomainSplit:
    def test_reconstruction_near_circle(self):
        alpha = np.sqrt(10.0)
        for dist in (1e-4, 1e-2, 0.3):
            x = np.array([1.0 - dist, 0.0])
            th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
            ys = np.stack([np.cos(th), np.sin(th)], axis=1)
            m0, ml, mc = split_M_domain(x, ys, ys, alpha)
            d = ys - x[None, :]
            r = np.hypot(d[:, 0], d[:, 1])
            edn2 = np.einsum("ij,ij->i", d, ys) / r**2
            recon = m0 + np.log(r) * ml + edn2 * mc
            direct = kernel_M(x, ys, ys, np.ones(len(ys)), alpha)
            assert np.max(np.abs(recon - direct)) <= 1e-11 * np.max(
                np.abs(direct))

    def test_cauchy_prefactor_is_alpha_independent(self):
        # MC = 1 in this convention for every alpha (the printed -alpha^2/2
        # belongs to the scaled-kernel display)
        x = np.array([0.5, 0.0])
        y = np.array([[1.0, 0.0]])
        for alpha in (0.05, 1.0, 40.0):
            _, _, mc = split_M_domain(x, y, y, alpha)
            assert mc == pytest.approx(1.0, abs=0.0)

    def test_far_field_matches_plain(self, unit_disc_32):
        disc = unit_disc_32
        alpha = 2.0
        target = np.array([0.3, -0.1])  # >= 0.5 from the boundary
        sl = disc.panel_slice(3)
        m0, ml, mc = split_M_domain(target, disc.nodes[sl], disc.normals[sl],
                                    alpha)
        d = disc.nodes[sl] - target[None, :]
        r = np.hypot(d[:, 0], d[:, 1])
        edn2 = np.einsum("ij,ij->i", d, disc.normals[sl]) / r**2
        recon = m0 + np.log(r) * ml + edn2 * mc
        plain = kernel_M(target, disc.nodes[sl], disc.normals[sl],
                         disc.curvature[sl], alpha)
        assert np.max(np.abs(recon - plain)) <= 1e-12 * np.max(np.abs(plain))

    def test_on_boundary_target_rejected(self):
        with pytest.raises(ParameterError):
            split_M_domain((1.0, 0.0), np.array([[1.0, 0.0]]),
                           np.array([[1.0, 0.0]]), 2.0)


class TestUpsampling:
    def test_no_split_below_threshold(self, unit_disc_32):
        # alpha * panel_length = 20 < 40
        alpha = 20.0 / unit_disc_32.panel_arclength(0)
        res = upsample_for_alpha(unit_disc_32, 0, unit_disc_32.nodes[4],
                                 alpha, c_split=40.0)
        assert len(res.leaves) == 1 and res.max_depth == 0

    def test_localized_bisection_depth(self, unit_disc_32):
        # alpha * panel_length = 160 with C = 40: nearest lineage depth 2
        h = unit_disc_32.panel_arclength(0)
        alpha = 160.0 / h
        res = upsample_for_alpha(unit_disc_32, 0, unit_disc_32.nodes[4],
                                 alpha, c_split=40.0)
        assert res.max_depth == 2
        assert len(res.leaves) <= 2 * res.max_depth + 1
        assert not res.depth_capped

    def test_doubling_alpha_adds_one_level(self, unit_disc_32):
        h = unit_disc_32.panel_arclength(0)
        target = unit_disc_32.nodes[4]
        d1 = upsample_for_alpha(unit_disc_32, 0, target, 160.0 / h,
                                c_split=40.0).max_depth
        d2 = upsample_for_alpha(unit_disc_32, 0, target, 320.0 / h,
                                c_split=40.0).max_depth
        assert d2 == d1 + 1

    def test_batch_rows_match_adaptive_reference(self, starfish_domain):
        from heatbie.bie import corrected_panel_row
        disc = discretize_boundary(starfish_domain, [24], n_q=16)
        alpha, k = 40.0, 5
        sl = disc.panel_slice(k)
        t0s = disc.ref_nodes.copy()
        rows = panel_rows_batch(disc, k, disc.nodes[sl], alpha, t0_parent=t0s,
                                c_split=8.0)
        for i in (0, 7, 15):
            ref = corrected_panel_row(disc, k, disc.nodes[sl][i], alpha,
                                      "boundary", t0_parent=t0s[i],
                                      c_split=8.0)
            assert np.max(np.abs(rows[i] - ref)) <= 1e-9 * np.max(np.abs(ref))


class TestSystem:
    def test_zero_density(self, unit_disc_32):
        out = apply_system(np.zeros(unit_disc_32.n_nodes), unit_disc_32,
                           np.sqrt(10.0))
        assert np.all(out == 0.0)

    def test_row_sum_against_adaptive_quadrature(self, unit_disc_32):
        # (I + K_h) 1 = 1 + (1/pi) oint M(x, .) ds.  On the unit circle the
        # kernel reduces exactly to alpha K1(alpha r) r/2 with
        # r = 2 sin(|dth|/2), which mpmath integrates to full precision.
        import mpmath as mp
        mp.mp.dps = 30
        alpha = np.sqrt(10.0)
        disc = unit_disc_32
        out = apply_system(np.ones(disc.n_nodes), disc, alpha)

        def integrand(dth):
            r = 2.0 * mp.sin(abs(dth) / 2)
            if r == 0:
                return mp.mpf("0.5")
            return alpha * mp.besselk(1, alpha * r) * r / 2

        val = float(mp.quad(integrand, [-mp.pi, 0, mp.pi]))
        assert out[7] == pytest.approx(1.0 + val / np.pi, abs=1e-10)
        # by symmetry every row sum is the same value
        assert np.max(out) - np.min(out) <= 1e-12

    def test_rotation_equivariance(self, unit_disc_32, rng):
        # rotating the density by one panel equals rotating the result
        disc = unit_disc_32
        alpha = 3.0
        mu = rng.standard_normal(disc.n_nodes)
        shifted = np.roll(mu, disc.n_q)
        a1 = apply_system(mu, disc, alpha)
        a2 = apply_system(shifted, disc, alpha)
        assert np.max(np.abs(np.roll(a1, disc.n_q) - a2)) <= 1e-11 * np.max(
            np.abs(a1))


class TestDensitySolve:
    def test_zero_data(self, unit_disc_32):
        mu, report = solve_density(np.zeros(unit_disc_32.n_nodes),
                                   unit_disc_32, 2.0)
        assert np.all(mu == 0.0)
        assert report.iterations == 0

    def test_disc_oracle_alpha2(self, unit_disc_32):
        alpha = 2.0
        disc = unit_disc_32
        solver = HomogeneousSolver(disc, alpha)
        mu, _ = solver.solve(np.cos(disc.param))
        rr = np.array([0.15, 0.5, 0.9])
        th = np.array([0.2, 2.6, 4.4])
        targets = np.stack([rr * np.cos(th), rr * np.sin(th)], axis=1)
        u = solver.evaluate(mu, targets)
        exact = i1(alpha * rr) / i1(alpha) * np.cos(th)
        assert np.max(np.abs(u - exact)) <= 1e-10 * np.max(np.abs(exact))

    def test_linearity(self, unit_disc_32, rng):
        disc = unit_disc_32
        alpha = 3.0
        g1 = rng.standard_normal(disc.n_nodes)
        g2 = rng.standard_normal(disc.n_nodes)
        solver = HomogeneousSolver(disc, alpha)
        m1, _ = solver.solve(g1)
        m2, _ = solver.solve(g2)
        m12, _ = solver.solve(g1 + g2)
        assert np.max(np.abs(m12 - m1 - m2)) <= 1e-10 * np.max(np.abs(m12))

    def test_gmres_tolerance_validation(self, unit_disc_32):
        with pytest.raises(ParameterError):
            solve_density(np.ones(unit_disc_32.n_nodes), unit_disc_32, 2.0,
                          gmres_tol=0.5)

    def test_convergence_error_carries_residual(self):
        def bad_matvec(v):
            return np.zeros_like(v)

        with pytest.raises(ConvergenceError) as exc:
            gmres(bad_matvec, np.ones(8), tol=1e-12, max_iter=4)
        assert exc.value.residual is not None


class TestEvaluation:
    def test_zero_density_zero_field(self, unit_disc_32):
        targets = np.array([[0.1, 0.2], [0.5, -0.3]])
        u = eval_homogeneous(np.zeros(unit_disc_32.n_nodes), unit_disc_32,
                             2.0, targets)
        assert np.all(u == 0.0)

    def test_near_boundary_engagement(self, unit_disc_32):
        # corrected path reaches <= 1e-8 where plain quadrature exceeds 1e-3
        alpha = 2.0
        disc = unit_disc_32
        solver = HomogeneousSolver(disc, alpha)
        mu, _ = solver.solve(np.cos(disc.param))
        th = np.linspace(0.0, 2 * np.pi, 17)[:-1]
        r = 1.0 - 1e-4
        targets = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        exact = i1(alpha * r) / i1(alpha) * np.cos(th)
        scale = np.max(np.abs(exact))
        u = solver.evaluate(mu, targets)
        assert np.max(np.abs(u - exact)) <= 1e-8 * scale
        plain = -(alpha**2 / (2 * np.pi)) * solver._plain_potential(targets,
                                                                    mu)
        assert np.max(np.abs(plain - exact)) >= 1e-3 * scale


class TestWellPosedness:
    @pytest.mark.parametrize("alpha2", [10.0, 1e3, 1e5])
    def test_gmres_iteration_bound(self, unit_disc_32, alpha2):
        solver = HomogeneousSolver(unit_disc_32, np.sqrt(alpha2))
        g = np.cos(unit_disc_32.param) + 0.3 * np.sin(
            3 * unit_disc_32.param)
        _, report = solver.solve(g, gmres_tol=1e-12, max_iter=200)
        assert report.iterations <= 40
