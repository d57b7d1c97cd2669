import math

import numpy as np
import pytest

from isoflow import (DomainMask, Field, Grid, Kernel, Medium, NumericalAbort,
                     SolverConfig, SolverError, discretize, floor,
                     monotone_approx_run, picard_solve, run, stability_dt,
                     step_euler, step_exponential, trust_radius)
from isoflow.diagnostics import mass


@pytest.fixture
def setup_1d():
    g = Grid(1, 10.0, 201)
    k = Kernel.gaussian(1.0)
    s = discretize(k, g.spacing)
    m = Medium.power_decay(1.0, 2.0)
    return g, s, m


class TestStepEuler:
    def test_constant_steady_interior(self, setup_1d):
        g, s, m = setup_1d
        u = Field.constant(g, 2.0)
        dt = 0.5 * stability_dt(m, g)
        out = step_euler(u, m, s, dt)
        hw = int(s.halfwidths[0])
        np.testing.assert_allclose(out.values[hw:-hw], 2.0, rtol=1e-13)

    def test_delta_mask_mass_exact(self, setup_1d):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0)
        vals = np.zeros(g.shape)
        vals[g.origin_index] = 1.0
        u = Field(g, vals)
        dt = 0.9 * stability_dt(m, g)
        out = step_euler(u, m, s, dt, boundary="mask", mask=mask)
        assert mass(out, m, mask) == pytest.approx(mass(u, m, mask), rel=1e-14)

    def test_dt_zero_is_identity(self, setup_1d):
        g, s, m = setup_1d
        rng = np.random.default_rng(0)
        u = Field(g, rng.standard_normal(g.shape))
        out = step_euler(u, m, s, 0.0)
        np.testing.assert_array_equal(out.values, u.values)

    def test_stability_violation_names_bound(self, setup_1d):
        g, s, m = setup_1d
        limit = stability_dt(m, g)
        with pytest.raises(SolverError, match="stability_dt"):
            step_euler(Field.zeros(g), m, s, 2.0 * limit)

    def test_stability_dt_value(self, setup_1d):
        g, s, m = setup_1d
        assert stability_dt(m, g) == pytest.approx(1.0 / 101.0)


class TestStepExponential:
    def test_constant_fixed_point(self, setup_1d):
        g, s, m = setup_1d
        u = Field.constant(g, 3.0)
        out = step_exponential(u, m, s, 5.0)
        hw = int(s.halfwidths[0])
        np.testing.assert_allclose(out.values[hw:-hw], 3.0, rtol=1e-13)

    def test_constant_fixed_point_mask(self, setup_1d):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0)
        u = Field(g, 3.0 * mask.indicator())
        out = step_exponential(u, m, s, 5.0, boundary="mask", mask=mask)
        np.testing.assert_allclose(out.values[mask.inside], 3.0, rtol=1e-13)

    @pytest.mark.parametrize("dt", [0.01, 1.0, 100.0])
    @pytest.mark.parametrize("boundary", ["zero-extend", "mask"])
    def test_positivity_any_dt(self, setup_1d, dt, boundary):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0) if boundary == "mask" else None
        rng = np.random.default_rng(1)
        u = Field(g, np.abs(rng.standard_normal(g.shape)))
        out = step_exponential(u, m, s, dt, boundary=boundary, mask=mask)
        assert out.min() >= 0.0
        assert out.max() <= u.max() * (1 + 1e-12)

    def test_mask_range_bound_any_dt(self, setup_1d):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0)
        rng = np.random.default_rng(2)
        u = Field(g, 1.0 + np.abs(rng.standard_normal(g.shape)))
        out = step_exponential(u, m, s, 50.0, boundary="mask", mask=mask)
        inside = mask.inside
        assert out.values[inside].min() >= u.values[inside].min() - 1e-12
        assert out.values[inside].max() <= u.values[inside].max() + 1e-12

    @pytest.mark.parametrize("boundary", ["zero-extend", "mask"])
    def test_euler_agreement_second_order_in_dt(self, setup_1d, boundary):
        # Richardson comparison: the integrating-factor step differs from the
        # explicit step by O(dt^2) per step as dt -> 0
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0) if boundary == "mask" else None
        rng = np.random.default_rng(3)
        u = Field(g, np.abs(rng.standard_normal(g.shape)))
        diffs = []
        for dt in (2e-4, 1e-4):
            a = step_euler(u, m, s, dt, boundary=boundary, mask=mask)
            b = step_exponential(u, m, s, dt, boundary=boundary, mask=mask)
            diffs.append(np.max(np.abs(a.values - b.values)))
        assert math.log2(diffs[0] / diffs[1]) == pytest.approx(2.0, abs=0.1)

    def test_mask_mass_exact_large_dt(self, setup_1d):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0)
        rng = np.random.default_rng(4)
        u = Field(g, np.abs(rng.standard_normal(g.shape)) * mask.indicator())
        out = step_exponential(u, m, s, 10.0, boundary="mask", mask=mask)
        assert mass(out, m, mask) == pytest.approx(mass(u, m, mask), rel=1e-13)

    def test_monotone_in_data(self, setup_1d):
        g, s, m = setup_1d
        mask = DomainMask(g, 10.0)
        rng = np.random.default_rng(5)
        lo = np.abs(rng.standard_normal(g.shape))
        hi = lo + np.abs(rng.standard_normal(g.shape))
        for boundary, msk in (("zero-extend", None), ("mask", mask)):
            a = step_exponential(Field(g, lo), m, s, 3.0, boundary=boundary, mask=msk)
            b = step_exponential(Field(g, hi), m, s, 3.0, boundary=boundary, mask=msk)
            assert np.all(b.values >= a.values - 1e-13)


class TestRun:
    def test_constant_diagnostics_flat(self, setup_1d):
        g, s, m = setup_1d
        u0 = Field.constant(g, 1.0)
        cfg = SolverConfig(scheme="exponential", dt=0.5, t_end=5.0,
                           boundary="mask", mask_radius=10.0, snapshot_every=2)
        traj = run(u0, m, s, cfg)
        for rec in traj.diagnostics:
            assert rec.mass == pytest.approx(traj.diagnostics[0].mass, rel=1e-13)
            assert rec.lyapunov_F <= 1e-25
            assert rec.sup_u == pytest.approx(1.0)
            assert rec.inf_u == pytest.approx(1.0)

    def test_deterministic_rerun(self, setup_1d):
        g, s, m = setup_1d
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        cfg = SolverConfig(scheme="exponential", dt=0.1, t_end=2.0,
                           boundary="mask", mask_radius=10.0, snapshot_every=5)
        t1 = run(u0, m, s, cfg)
        t2 = run(u0, m, s, cfg)
        for (ta, ua), (tb, ub) in zip(t1.snapshots, t2.snapshots):
            assert ta == tb
            assert np.array_equal(ua.values, ub.values)

    def test_mask_mass_constant_along_run(self, setup_1d):
        g, s, m = setup_1d
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        cfg = SolverConfig(scheme="exponential", dt=0.2, t_end=20.0,
                           boundary="mask", mask_radius=10.0, snapshot_every=10)
        traj = run(u0, m, s, cfg)
        ms = np.array([rec.mass for rec in traj.diagnostics])
        assert np.max(np.abs(ms - ms[0])) <= 1e-12 * abs(ms[0])

    def test_euler_mask_mass_constant(self, setup_1d):
        g, s, m = setup_1d
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        dt = 0.9 * stability_dt(m, g)
        cfg = SolverConfig(scheme="euler", dt=dt, t_end=200 * dt,
                           boundary="mask", mask_radius=10.0, snapshot_every=20)
        traj = run(u0, m, s, cfg)
        ms = np.array([rec.mass for rec in traj.diagnostics])
        assert np.max(np.abs(ms - ms[0])) <= 1e-12 * abs(ms[0])

    def test_scheme_consistency_rate(self, setup_1d):
        # euler and integrating-factor trajectories drift apart at O(dt)
        g, s, m = setup_1d
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        gaps = []
        for dt in (2e-3, 1e-3):
            cfg_e = SolverConfig(scheme="euler", dt=dt, t_end=0.2,
                                 snapshot_every=10 ** 9)
            cfg_x = SolverConfig(scheme="exponential", dt=dt, t_end=0.2,
                                 snapshot_every=10 ** 9)
            a = run(u0, m, s, cfg_e).final()
            b = run(u0, m, s, cfg_x).final()
            gaps.append(np.max(np.abs(a.values - b.values)))
        assert math.log2(gaps[0] / gaps[1]) == pytest.approx(1.0, abs=0.15)

    def test_steppers_match_reference_steps(self, setup_1d):
        # the precompiled run loop must reproduce the one-shot operations
        g, s, m = setup_1d
        rng = np.random.default_rng(8)
        u0 = Field(g, np.abs(rng.standard_normal(g.shape)))
        for boundary, mask_r in (("zero-extend", None), ("mask", 10.0)):
            mask = DomainMask(g, mask_r) if mask_r else None
            for scheme in ("euler", "exponential"):
                dt = 0.5 * stability_dt(m, g) if scheme == "euler" else 0.7
                cfg = SolverConfig(scheme=scheme, dt=dt, t_end=dt,
                                   boundary=boundary, mask_radius=mask_r,
                                   snapshot_every=1)
                got = run(u0, m, s, cfg).final().values
                stepfn = step_euler if scheme == "euler" else step_exponential
                want = stepfn(u0 if mask is None else Field(g, u0.values * mask.indicator()),
                              m, s, dt, boundary=boundary, mask=mask).values
                assert np.max(np.abs(got - want)) <= 1e-12 * max(np.max(np.abs(want)), 1.0)

    def test_nan_abort_carries_step_index(self, setup_1d):
        g, s, m = setup_1d
        u0 = Field.constant(g, 1e308)
        cfg = SolverConfig(scheme="euler", dt=stability_dt(m, g) * 0.99,
                           t_end=1.0, snapshot_every=1)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalAbort) as err:
                run(u0, m, s, cfg)
        assert err.value.step_index >= 1

    def test_2d_smoke_mask_conservation(self):
        g = Grid(2, 3.0, 31)
        s = discretize(Kernel.gaussian(0.5, dim=2), g.spacing, trunc_tol=1e-8)
        m = Medium.power_decay(1.0, 2.0, dim=2)
        u0 = Field.from_function(g, lambda x, y: np.exp(-(x * x + y * y)))
        cfg = SolverConfig(scheme="exponential", dt=0.3, t_end=6.0,
                           boundary="mask", mask_radius=3.0, snapshot_every=5)
        traj = run(u0, m, s, cfg)
        ms = np.array([rec.mass for rec in traj.diagnostics])
        assert np.max(np.abs(ms - ms[0])) <= 1e-12 * abs(ms[0])
        assert traj.final().max() <= u0.max()

    def test_config_validation(self):
        with pytest.raises(SolverError):
            SolverConfig(scheme="verlet").validate()
        with pytest.raises(SolverError):
            SolverConfig(dt=-1.0).validate()
        with pytest.raises(SolverError):
            SolverConfig(boundary="mask").validate()


class TestPicard:
    def test_constant_data(self):
        g = Grid(1, 5.0, 41)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = floor(Medium.power_decay(1.0, 2.0), 0.3)
        final, report = picard_solve(Field.constant(g, 2.0), m, s, 1.0)
        hw = int(s.halfwidths[0])
        np.testing.assert_allclose(final.values[hw:-hw], 2.0, atol=1e-10)

    def test_cross_scheme_agreement(self):
        g = Grid(1, 5.0, 41)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = floor(Medium.power_decay(1.0, 2.0), 0.3)
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        final, _ = picard_solve(u0, m, s, 1.0, tol=1e-10, dt=1e-3)
        cfg = SolverConfig(scheme="exponential", dt=1e-3, t_end=1.0,
                           snapshot_every=10 ** 9)
        ref = run(u0, m, s, cfg).final()
        assert np.max(np.abs(final.values - ref.values)) <= 1e-3

    def test_contraction_factor_below_bound(self):
        g = Grid(1, 5.0, 41)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = floor(Medium.power_decay(1.0, 2.0), 0.3)
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        _, report = picard_solve(u0, m, s, 0.5, tol=1e-11, dt=1e-3)
        assert report.max_bound() < 1.0
        assert 0.0 < report.max_ratio() <= report.max_bound()
        for w in report.windows:
            assert w.t_length <= 0.5 * 0.3

    def test_window_validation(self):
        g = Grid(1, 5.0, 41)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = floor(Medium.power_decay(1.0, 2.0), 0.3)
        with pytest.raises(SolverError, match="window"):
            picard_solve(Field.zeros(g), m, s, 1.0, window=0.2)

    def test_node_cap(self):
        g = Grid(1, 5.0, 20001)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-6)
        m = Medium.constant(1.0)
        with pytest.raises(SolverError, match="10\\^4|cap"):
            picard_solve(Field.zeros(g), m, s, 0.1)


class TestMonotoneApprox:
    def test_large_n_equals_plain_run(self, setup_1d):
        # once the truncation ball covers the box the run is the plain one
        g, s, m = setup_1d
        u0 = Field.from_function(g, lambda x: np.exp(-x * x))
        alpha = 0.9 * float(m.sample(g).min())
        trajs, rep = monotone_approx_run(u0, m, s, [50, 60], t_probe=1.0,
                                         dt=0.1, alphas=[alpha, alpha])
        cfg = SolverConfig(scheme="exponential", dt=0.1, t_end=1.0,
                           snapshot_every=10, floor_alpha=alpha)
        plain = run(u0, m, s, cfg)
        np.testing.assert_array_equal(trajs[-1].final().values,
                                      plain.final().values)
        assert rep.max_violation <= 1e-12

    def test_quadratic_data_nondecreasing_in_n(self):
        g = Grid(1, 20.0, 201)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = Medium.power_decay(1.0, 2.0)
        u0 = Field(g, 1.0 + g.radius() ** 2)
        alpha = 0.9 * float(m.sample(g).min())
        trajs, rep = monotone_approx_run(u0, m, s, [4, 6, 8], t_probe=5.0,
                                         dt=0.1, alphas=[alpha] * 3)
        assert rep.max_violation <= 1e-12
        origins = [t.final().at_origin() for t in trajs]
        assert origins == sorted(origins)

    def test_envelope_bound_reported(self):
        g = Grid(1, 20.0, 201)
        s = discretize(Kernel.gaussian(1.0), g.spacing, trunc_tol=1e-8)
        m = Medium.power_decay(1.0, 2.0)
        u0 = Field(g, 1.0 + g.radius() ** 2)
        _, rep = monotone_approx_run(u0, m, s, [4, 8], t_probe=2.0, dt=0.1)
        assert rep.envelope_ok is True

    def test_needs_increasing_n(self, setup_1d):
        g, s, m = setup_1d
        with pytest.raises(SolverError):
            monotone_approx_run(Field.zeros(g), m, s, [5, 3], 1.0)


class TestTrustRadius:
    def test_homogeneous_formula(self):
        g = Grid(1, 20.0, 401)
        s = discretize(Kernel.gaussian(1.0), g.spacing)
        m = Medium.constant(1.0)
        t = 9.0
        expected = 20.0 - s.truncation_radius - math.sqrt(
            __import__("isoflow").stencil_second_moment(s) * t)
        assert trust_radius(g, s, m, t) == pytest.approx(expected, rel=1e-6)

    def test_shrinks_with_time(self):
        g = Grid(1, 20.0, 401)
        s = discretize(Kernel.gaussian(1.0), g.spacing)
        m = Medium.constant(1.0)
        rs = [trust_radius(g, s, m, t) for t in (1.0, 5.0, 20.0)]
        assert rs[0] > rs[1] > rs[2] >= 0.0
