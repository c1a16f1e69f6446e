import numpy as np
import pytest

from affinekit.errors import RegularityError, StabilityError, StructuralError
from affinekit.model import AffineModel, JumpMeasure
from affinekit.riccati import SolverSettings
from affinekit.density import GridSpec
from affinekit.spectral import charfn
from affinekit.ergodicity import (
    DriftFit,
    LyapunovData,
    default_drift_samples,
    dobrushin_check,
    drift_fit,
    fit_drift_sweep,
    generator_on_V,
    lyapunov_norms,
    prefactor_consistency,
    split_semigroups,
    tv_decay_report,
)

from conftest import make_cir, make_mixed, make_ou

TIGHT = SolverSettings(rel_tol=1e-12, abs_tol=1e-14)


class TestSplit:
    def test_idempotent_when_nu_zero(self, cir):
        q, r = split_semigroups(cir)
        assert q.nu.is_zero
        np.testing.assert_allclose(q.b, cir.b)
        np.testing.assert_allclose(r.a, 0.0)
        np.testing.assert_allclose(r.b, 0.0)
        assert q.validation.ok and r.validation.ok

    def test_ou_with_jumps_splits_into_gaussian_and_levy_parts(self):
        model = make_ou(nu_atoms=[(0.5, [1.2])])
        q, r = split_semigroups(model)
        assert q.nu.is_zero and not r.nu.is_zero
        assert q.a[0, 0] == model.a[0, 0] and r.a[0, 0] == 0.0

    def test_convolution_identity(self, mixed):
        q, r = split_semigroups(mixed)
        rng = np.random.default_rng(2)
        origin = np.zeros(2)
        worst = 0.0
        for _ in range(25):
            t = rng.uniform(0.05, 2.5)
            x = np.array([abs(rng.normal()) * 2, rng.normal()])
            u = rng.normal(scale=2.5, size=2)
            full = charfn(mixed, t, x, u, TIGHT)
            prod = charfn(q, t, x, u, TIGHT) * charfn(r, t, origin, u, TIGHT)
            worst = max(worst, abs(full - prod))
        assert worst <= 1e-10


class TestLyapunov:
    def test_scalar_blocks(self):
        model = make_cir(beta=-2.0)
        ld = lyapunov_norms(model)
        assert ld.M_I[0, 0] == pytest.approx(0.25, abs=1e-12)
        ld2 = lyapunov_norms(make_ou())
        assert ld2.M_J[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_residual_contract(self, mixed):
        ld = lyapunov_norms(mixed)
        m = mixed.m
        bII = mixed.beta[:m, :m]
        bJJ = mixed.beta[m:, m:]
        assert np.abs(bII.T @ ld.M_I + ld.M_I @ bII + np.eye(1)).max() <= 1e-10
        assert np.abs(bJJ.T @ ld.M_J + ld.M_J @ bJJ + np.eye(1)).max() <= 1e-10
        assert np.linalg.eigvalsh(ld.M_I).min() > 0
        assert np.linalg.eigvalsh(ld.M_J).min() > 0

    def test_unstable_block_rejected(self):
        model = make_ou(beta=0.1)
        with pytest.raises(StabilityError):
            lyapunov_norms(model)


class TestGeneratorOnV:
    def test_value_at_origin(self, ou):
        lyap = LyapunovData(np.zeros((0, 0)), np.array([[0.5]]), epsilon=0.1)
        # only the second-order term survives: eps * tr(a_JJ M_J)
        assert generator_on_V(ou, [0.0], lyap) == pytest.approx(0.1 * 0.5 * 0.5, abs=1e-14)

    def test_negative_at_large_radius(self, cir):
        lyap = LyapunovData(np.array([[0.5]]), np.zeros((0, 0)), epsilon=1.0)
        val = generator_on_V(cir, [1e3], lyap)
        assert val < -1.0

    def test_matches_finite_difference_generator(self, mixed):
        q, _ = split_semigroups(mixed)
        norms = lyapunov_norms(q)
        lyap = LyapunovData(norms.M_I, norms.M_J, epsilon=0.2)
        rng = np.random.default_rng(4)
        h = 1e-4
        for _ in range(6):
            x = np.array([abs(rng.normal()) * 2, rng.normal() * 2])
            V = lyap.V
            grad = np.zeros(2)
            hess = np.zeros((2, 2))
            for k in range(2):
                ek = np.eye(2)[k] * h
                grad[k] = (V(x + ek) - V(x - ek)) / (2 * h)
                for l in range(2):
                    el = np.eye(2)[l] * h
                    hess[k, l] = (
                        V(x + ek + el) - V(x + ek - el) - V(x - ek + el) + V(x - ek - el)
                    ) / (4 * h * h)
            diff = q.a + x[0] * q.alpha[0]
            fd = (q.b + q.beta @ x) @ grad + np.sum(diff * hess)
            mi = q.mu[0]
            fd += x[0] * sum(w * (V(x + p) - V(x) - p @ grad) for w, p in zip(mi.masses, mi.points))
            assert generator_on_V(q, x, lyap) == pytest.approx(fd, abs=1e-5)

    def test_rejects_state_independent_jumps(self, mixed):
        lyap = LyapunovData(np.array([[1.0]]), np.array([[1.0]]))
        with pytest.raises(StructuralError):
            generator_on_V(mixed, [1.0, 0.0], lyap)


class TestDriftFit:
    def test_ou_rate(self, ou):
        lyap = LyapunovData(np.zeros((0, 0)), np.array([[0.5]]), epsilon=1.0)
        fit = drift_fit(ou, lyap, default_drift_samples(ou))
        assert fit.ok and fit.c >= 0.5
        # pointwise inequality at every sample
        xs = default_drift_samples(ou)
        for x in xs[::37]:
            assert generator_on_V(ou, x, lyap) <= -fit.c * lyap.V(x) + fit.C + 1e-9

    def test_cir_sweep(self, cir):
        q, _ = split_semigroups(cir)
        lyap, fit = fit_drift_sweep(q, default_drift_samples(q))
        assert fit.ok and fit.c >= 1e-2
        assert lyap.fitted_c == fit.c

    def test_unstable_direction_fails(self):
        model = make_ou(beta=0.1)
        lyap = LyapunovData(np.zeros((0, 0)), np.array([[1.0]]), epsilon=1.0)
        fit = drift_fit(model, lyap, default_drift_samples(model))
        assert not fit.ok
        assert fit.witness is not None

    def test_samples_reach_requested_radius(self, cir):
        xs = default_drift_samples(cir, r_max=1e3)
        assert np.linalg.norm(xs, axis=1).max() >= 1e3
        assert xs.shape[0] >= 1000    # the acceptance sweep needs 1e3 points
        assert xs[:, 0].min() >= 0.0


class TestDobrushin:
    def test_identical_pair_gives_full_overlap(self, cir):
        grid = GridSpec([(0.0, 16.0, 512)])
        x = np.array([1.0])
        delta = dobrushin_check(cir, 0.5, 2.0, [(x, x)], grid, eps_trunc=1e-6)
        assert delta == pytest.approx(2.0, abs=1e-6)

    def test_ou_large_h_delta_near_two(self, ou):
        grid = GridSpec([(-8.0, 8.0, 512)])
        pairs = [(np.array([-2.0]), np.array([2.0]))]
        delta = dobrushin_check(ou, 6.0, 2.0, pairs, grid, eps_trunc=1e-8)
        assert delta >= 1.98

    def test_small_h_delta_to_zero(self, ou):
        grid = GridSpec([(-8.0, 8.0, 2048)])
        pairs = [(np.array([-2.0]), np.array([2.0]))]
        delta = dobrushin_check(ou, 0.01, 2.0, pairs, grid, eps_trunc=1e-8)
        assert delta <= 0.05

    def test_hypotheses_enforced(self):
        bad = make_cir(b=0.5)   # m < b/alpha fails
        grid = GridSpec([(0.0, 10.0, 128)])
        with pytest.raises(RegularityError):
            dobrushin_check(bad, 0.5, 1.0, [(np.zeros(1), np.ones(1))], grid)

    def test_pair_norm_bound_enforced(self, cir):
        grid = GridSpec([(0.0, 10.0, 128)])
        with pytest.raises(StructuralError):
            dobrushin_check(cir, 0.5, 1.0, [(np.zeros(1), np.array([5.0]))], grid)


class TestDecay:
    def test_ou_decay_rate(self, ou):
        grid = GridSpec([(-8.0, 12.0, 1024)])
        rep = tv_decay_report(ou, [5.0], np.linspace(0.25, 14, 20), grid, eps_trunc=1e-6)
        assert rep.fit_ok and rep.monotone_ok
        assert 0.8 <= rep.fitted_c <= 1.2
        assert rep.r_squared >= 0.99
        assert rep.tv_values.min() >= 0.0 and rep.tv_values.max() <= 1.0

    def test_floor_is_flagged_not_fitted(self, ou):
        grid = GridSpec([(-8.0, 12.0, 1024)])
        rep = tv_decay_report(ou, [0.5], np.linspace(8.0, 20.0, 6), grid, eps_trunc=1e-6)
        # all TV values are at the numerical floor: fit must be rejected
        assert not rep.fit_ok
        assert rep.diagnostics.get("reason")

    def test_prefactor_consistency_shape(self, ou):
        grid = GridSpec([(-8.0, 16.0, 1024)])
        reports = [
            tv_decay_report(ou, [x], np.linspace(0.1, 12, 18), grid, eps_trunc=1e-6)
            for x in (0.5, 5.0)
        ]
        cons = prefactor_consistency(reports)
        assert cons["spread"] <= 3.0
        assert cons["c_share"] > 0
