import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drheo import relative, rheology, spectral as S
from drheo.errors import ConfigurationError, DomainError, InputError, StabilityError

NEWT = rheology.make_model("newtonian", mu=0.1)
EULER = rheology.make_model("euler")
PL = rheology.make_model("power_law", p=2.5, mu2=1e-4)


def random_field(grid, seed, band=None):
    """Real, projected random field filling the dealiased band (or |m| <= band)."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((grid.d,) + grid.shape)
    c = grid.to_spectral(u)
    if band is not None:
        c *= np.all(np.abs(grid.modes) <= band, axis=0)
    c = S.make_basis_projection(grid)(c)
    c[(slice(None),) + (0,) * grid.d] = 0
    return S.SpectralVelocity(grid, c)


class TestGrid:
    def test_invalid(self):
        for args in [(1, 16), (2, 7), (2, 6), (2, 16, 0.0)]:
            with pytest.raises(ConfigurationError):
                S.TorusGrid(*args)

    def test_wavenumbers_are_multiples_of_pi(self):
        g = S.TorusGrid(2, 8)
        m = g.k / math.pi
        assert np.array_equal(m, np.round(m))
        assert m.min() == -4 and m.max() == 3

    def test_dealias_mask(self):
        g = S.TorusGrid(2, 32)
        kept = np.abs(g.modes[0][g.dealias])
        assert kept.max() == 10 and not g.dealias[0, 11]

    def test_single_mode_coefficients(self):
        g = S.TorusGrid(2, 16)
        x = g.x
        c = g.to_spectral(np.sin(math.pi * x[0]))
        # sin(pi x) = (e^{i pi x} - e^{-i pi x}) / 2i
        assert c[1, 0] == pytest.approx(-0.5j, abs=1e-15)
        assert c[-1, 0] == pytest.approx(0.5j, abs=1e-15)
        c[1, 0] = c[-1, 0] = 0
        assert np.abs(c).max() < 1e-15

    @pytest.mark.parametrize("d, N", [(2, 16), (3, 8)])
    def test_round_trip(self, d, N, rng):
        g = S.TorusGrid(d, N)
        u = rng.standard_normal((d,) + g.shape)
        assert np.allclose(g.to_physical(g.to_spectral(u)), u, atol=1e-14)

    def test_resample_is_exact_on_the_band(self):
        g16, g64 = S.TorusGrid(2, 16), S.TorusGrid(2, 64)
        v = random_field(g16, 0)
        up = v.resampled(g64)
        assert v.kinetic_energy() == pytest.approx(up.kinetic_energy(), rel=1e-14)
        assert np.allclose(up.resampled(g16).coeffs, v.coeffs, atol=0)


class TestProjection:
    def test_idempotent(self):
        g = S.TorusGrid(2, 32)
        P = S.make_basis_projection(g, n_cutoff=20.0)
        c = g.to_spectral(np.random.default_rng(0).standard_normal((2,) + g.shape))
        once = P(c)
        assert np.allclose(P(once), once, atol=1e-16)

    def test_gradient_is_annihilated(self):
        g = S.TorusGrid(2, 32)
        x = g.x
        phi_hat = g.to_spectral(np.sin(math.pi * x[0]) * np.cos(2 * math.pi * x[1]))
        grad = 1j * g.k * phi_hat
        assert np.abs(S.make_basis_projection(g)(grad)).max() < 1e-14

    def test_divergence_free_field_is_fixed(self):
        g = S.TorusGrid(2, 32)
        v = random_field(g, 3, band=5)
        out = S.make_basis_projection(g, n_cutoff=math.pi * 8)(v.coeffs)
        assert np.abs(out - v.coeffs).max() <= 1e-14 * np.abs(v.coeffs).max()

    def test_cutoff_beyond_band(self):
        with pytest.raises(ConfigurationError):
            S.make_basis_projection(S.TorusGrid(2, 16), n_cutoff=100.0)


class TestSymGradient:
    def test_single_mode(self):
        g = S.TorusGrid(2, 16)
        x = g.x
        # v = (0, sin pi x): D12 = pi cos(pi x) / 2
        u = np.array([np.zeros(g.shape), np.sin(math.pi * x[0])])
        D = S.sym_gradient(S.SpectralVelocity(g, g.to_spectral(u)))
        assert np.allclose(D[0, 1], 0.5 * math.pi * np.cos(math.pi * x[0]), atol=1e-13)
        assert np.allclose(D[1, 0], D[0, 1], atol=0)
        assert np.abs(D[0, 0]).max() < 1e-13 and np.abs(D[1, 1]).max() < 1e-13

    def test_constant_field(self):
        g = S.TorusGrid(2, 16)
        c = np.zeros((2,) + g.shape, complex)
        c[0, 0, 0] = 1.0
        assert np.abs(S.sym_gradient(S.SpectralVelocity(g, c))).max() == 0

    def test_rotation_has_no_strain_at_the_center(self):
        # v = (-sin pi y, sin pi x) rotates rigidly near the origin
        g = S.TorusGrid(2, 16)
        x = g.x
        u = np.array([-np.sin(math.pi * x[1]), np.sin(math.pi * x[0])])
        D = S.sym_gradient(S.SpectralVelocity(g, g.to_spectral(u)))
        i = g.N // 2  # x = 0
        assert np.abs(D[:, :, i, i]).max() < 1e-13


class TestRightHandSides:
    def test_convective_of_taylor_green_vanishes(self):
        g = S.TorusGrid(2, 32)
        assert np.abs(S.convective_rhs(S.taylor_green(g))).max() < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_convective_is_skew(self, seed):
        g = S.TorusGrid(2, 32)
        v = random_field(g, seed)
        r = S.convective_rhs(v)
        prod = g.inner(r, v.coeffs)
        assert abs(prod) <= 1e-12 * math.sqrt(g.inner(r, r) * g.inner(v.coeffs, v.coeffs))

    def test_zero_field(self):
        g = S.TorusGrid(2, 16)
        v = S.SpectralVelocity(g, np.zeros((2,) + g.shape, complex))
        assert np.abs(S.convective_rhs(v)).max() == 0
        assert np.abs(S.viscous_rhs(PL, v)[0]).max() == 0

    def test_newtonian_viscous_term(self):
        g = S.TorusGrid(2, 32)
        v = random_field(g, 1)
        visc, sf = S.viscous_rhs(NEWT, v)
        expected = -0.5 * NEWT.mu * g.ksq * v.coeffs
        assert np.abs(visc - expected).max() < 1e-12 * max(1.0, np.abs(expected).max())
        assert np.allclose(sf.values, NEWT.mu * sf.D)

    def test_euler_viscous_term(self):
        g = S.TorusGrid(2, 16)
        assert np.abs(S.viscous_rhs(EULER, random_field(g, 2))[0]).max() == 0

    def test_viscous_term_dissipates(self):
        g = S.TorusGrid(2, 32)
        v = random_field(g, 4, band=6)
        visc, sf = S.viscous_rhs(PL, v)
        sd = g.integrate(np.sum(sf.values * sf.D, axis=(0, 1)))
        assert g.inner(visc, v.coeffs) == pytest.approx(-sd, rel=1e-10)
        assert sd >= 0


class TestStepping:
    def test_taylor_green_amplitude_factor(self):
        g = S.TorusGrid(2, 32)
        v = S.taylor_green(g)
        w = S.step(NEWT, v, 1e-3)
        factor = np.abs(w.coeffs).max() / np.abs(v.coeffs).max()
        assert factor == pytest.approx(math.exp(-NEWT.mu * math.pi ** 2 * 1e-3), rel=1e-10)

    def test_euler_single_mode_is_steady(self):
        g = S.TorusGrid(2, 16)
        x = g.x
        u = np.array([np.sin(math.pi * x[1]), np.zeros(g.shape)])
        v = S.SpectralVelocity(g, g.to_spectral(u))
        w = v
        for _ in range(10):
            w = S.step(EULER, w, 1e-2)
        assert np.abs(w.coeffs - v.coeffs).max() < 1e-15

    def test_step_then_project(self):
        g = S.TorusGrid(2, 32)
        w = S.step(PL, random_field(g, 5, band=5), 1e-4)
        pw = S.make_basis_projection(g)(w.coeffs)
        assert np.abs(pw - w.coeffs).max() <= 1e-15 * np.abs(w.coeffs).max()

    def test_stability_error_suggests_a_step(self):
        g = S.TorusGrid(2, 32)
        v = S.taylor_green(g)
        m = rheology.make_model("newtonian", mu=1.0)
        with pytest.raises(StabilityError) as exc:
            S.step(m, v, 1e-2)
        dt = exc.value.suggested_dt
        assert 0 < dt < S.cfl_limit(m, v)
        S.step(m, v, dt)

    def test_integrating_factor_matches_exact_decay(self):
        g = S.TorusGrid(2, 32)
        m = rheology.make_model("newtonian", mu=1.0)
        v, _ = S.integrate(m, S.taylor_green(g), 0.1, 1e-3, if_mu0=1.0, budget=False)
        exact = math.exp(-2 * math.pi ** 2 * 0.1)
        assert v.kinetic_energy() == pytest.approx(exact, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_invariants_after_each_step(self, seed):
        g = S.TorusGrid(2, 16)
        v = S.seeded_random_smooth(g, seed, max_mode=4, energy=0.3)
        for _ in range(3):
            v = S.step(PL, v, 0.5 * S.cfl_limit(PL, v))
            v.check()
            assert np.all(v.coeffs[:, 0, 0] == 0)

    def test_energy_identity_residual(self):
        g = S.TorusGrid(2, 32)
        v = S.taylor_green(g)
        w, inc = S.step_with_budget(NEWT, v, 1e-3)
        resid = w.kinetic_energy() - v.kinetic_energy() + inc.diss_SD - inc.work
        assert abs(resid) <= 1e-10

    def test_energy_identity_is_fifth_order(self):
        g = S.TorusGrid(2, 32)
        v = S.seeded_random_smooth(g, 9, energy=0.5)
        res = []
        for dt in (2e-3, 1e-3):
            w, inc = S.step_with_budget(PL, v, dt)
            res.append(abs(w.kinetic_energy() - v.kinetic_energy() + inc.diss_SD))
        assert res[0] / res[1] > 16

    def test_integrate_hits_the_final_time(self):
        g = S.TorusGrid(2, 16)
        v, stats = S.integrate(PL, S.seeded_random_smooth(g, 0), 0.0123, "auto", budget=False)
        assert v.time == 0.0123 and stats.steps >= 1
        with pytest.raises(ConfigurationError):
            S.integrate(PL, v, 1.0, "fast")


class TestCfl:
    def test_zero_field_euler_unbounded(self):
        g = S.TorusGrid(2, 16)
        v = S.SpectralVelocity(g, np.zeros((2,) + g.shape, complex))
        assert S.cfl_limit(EULER, v) == math.inf

    def test_zero_field_newtonian(self):
        g = S.TorusGrid(2, 16)
        v = S.SpectralVelocity(g, np.zeros((2,) + g.shape, complex))
        assert S.cfl_limit(NEWT, v) == pytest.approx(0.25 * g.h ** 2 / NEWT.mu, rel=1e-15)

    def test_advective_bound_halves_with_N(self):
        v16 = S.taylor_green(S.TorusGrid(2, 16))
        v32 = v16.resampled(S.TorusGrid(2, 32))
        assert S.cfl_limit(EULER, v32) == pytest.approx(0.5 * S.cfl_limit(EULER, v16), rel=1e-12)


class TestPressure:
    def test_taylor_green(self):
        g = S.TorusGrid(2, 32)
        x = g.x
        p = S.recover_pressure(NEWT, S.taylor_green(g, amplitude=1.5))
        exact = 1.5 ** 2 / 4 * (np.cos(2 * math.pi * x[0]) + np.cos(2 * math.pi * x[1]))
        assert np.abs(p.physical() - exact).max() < 1e-10
        assert p.coeffs[0, 0] == 0

    def test_zero(self):
        g = S.TorusGrid(2, 16)
        v = S.SpectralVelocity(g, np.zeros((2,) + g.shape, complex))
        assert np.abs(S.recover_pressure(NEWT, v).coeffs).max() == 0

    def test_gradient_is_the_rejected_part(self):
        g = S.TorusGrid(2, 32)
        v = random_field(g, 7)
        total = (-S.convective_divergence(v) + S.stress_field(PL, v).divergence) * g.dealias
        rejected = total - S.make_basis_projection(g)(total)
        rejected[(slice(None), 0, 0)] = 0
        gp = S.pressure_gradient(S.recover_pressure(PL, v))
        assert np.abs(gp - rejected).max() <= 1e-12 * max(1.0, np.abs(total).max())


class TestGalerkinConsistency:
    def test_residual_is_the_projected_mismatch(self):
        fine = S.TorusGrid(2, 32)
        v = S.seeded_random_smooth(fine, 4, energy=0.5)
        v, _ = S.integrate(PL, v, 0.05, "auto", budget=False)
        dvdt = S.rhs(PL, v)
        Pm = S.make_basis_projection(fine, n_cutoff=math.pi * 6)
        r1 = S.galerkin_residual(PL, v, dvdt, Pm)
        r2 = S.galerkin_residual(PL, v, dvdt, Pm)
        assert np.array_equal(r1, r2)
        pv = S.SpectralVelocity(fine, Pm(v.coeffs), v.time)
        expected = Pm(dvdt) - S.rhs(PL, pv, projection=Pm)
        assert np.array_equal(r1, expected)
        assert np.abs(r1).max() > 0
        assert np.all(r1[:, ~Pm.mask] == 0)

    def test_exact_solution_has_no_mismatch(self):
        g = S.TorusGrid(2, 32)
        v = S.taylor_green(g)
        Pm = S.make_basis_projection(g, n_cutoff=5.0)
        assert np.abs(S.galerkin_residual(NEWT, v, S.rhs(NEWT, v), Pm)).max() < 1e-12


def test_spectral_convergence_on_the_manufactured_solution():
    model = rheology.make_model("power_law", p=2.5, mu1=4.0, mu2=1.0)
    ref = relative.manufactured(model, S.TorusGrid(2, 64))
    T = 0.2
    errs = []
    for N in (8, 16, 32):
        g = S.TorusGrid(2, N)
        v0 = S.SpectralVelocity(g, S.resample(ref.at(0.0).coeffs, ref.grid, g))
        v, _ = S.integrate(model, v0, T, 2.5e-4, force=ref.force, if_mu0=1.4, budget=False)
        errs.append(math.sqrt(relative.relative_energy(v, None, ref.at(T))))
    rates = [math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])]
    assert rates[1] > rates[0] > 4 or errs[2] < 1e-10, (errs, rates)


class TestInitialData:
    def test_taylor_green_energy(self):
        assert S.taylor_green(S.TorusGrid(2, 16)).kinetic_energy() == pytest.approx(1.0, rel=1e-15)

    def test_seeded_data_independent_of_resolution(self):
        a = S.seeded_random_smooth(S.TorusGrid(2, 16), 3)
        b = S.seeded_random_smooth(S.TorusGrid(2, 64), 3)
        assert np.array_equal(a.resampled(b.grid).coeffs, b.coeffs)
        a.check()
        assert a.kinetic_energy() == pytest.approx(0.5, rel=1e-14)

    def test_max_mode_must_fit(self):
        with pytest.raises(ConfigurationError):
            S.seeded_random_smooth(S.TorusGrid(2, 8), 0, max_mode=4)

    def test_check_rejects_bad_fields(self):
        g = S.TorusGrid(2, 16)
        c = np.zeros((2,) + g.shape, complex)
        c[0, 1, 0] = 1.0  # compressive and not Hermitian
        with pytest.raises(DomainError):
            S.SpectralVelocity(g, c).check()
        with pytest.raises(InputError):
            S.SpectralVelocity(g, np.zeros((2, 4, 4)))


class TestSnapshots:
    def test_round_trip_and_header(self, tmp_path):
        g = S.TorusGrid(2, 16)
        v = S.seeded_random_smooth(g, 1)
        v.time = 0.375
        path = tmp_path / "s.bin"
        S.write_snapshot(path, v)
        raw = path.read_bytes()
        assert raw[:4] == b"DRHE"
        assert struct.unpack("<IIId", raw[4:24]) == (1, 2, 16, 0.375)
        assert len(raw) == 24 + 16 * 2 * 16 * 16
        # components innermost: the first record holds both components of mode (0, 0)
        re0, im0, re1, im1 = struct.unpack("<4d", raw[24:56])
        assert (re0 + 1j * im0, re1 + 1j * im1) == (v.coeffs[0, 0, 0], v.coeffs[1, 0, 0])
        w = S.read_snapshot(path)
        assert np.array_equal(w.coeffs, v.coeffs) and w.time == v.time

    def test_bad_files(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(InputError):
            S.read_snapshot(bad)
        g = S.TorusGrid(2, 8)
        good = tmp_path / "good.bin"
        S.write_snapshot(good, S.taylor_green(g))
        good.write_bytes(good.read_bytes()[:-16])
        with pytest.raises(InputError):
            S.read_snapshot(good)


def test_worker_count_does_not_change_results():
    g = S.TorusGrid(2, 32)
    v = S.seeded_random_smooth(g, 2)
    a = S.step(PL, v, 1e-4)
    S.set_workers(2)
    try:
        b = S.step(PL, v, 1e-4)
    finally:
        S.set_workers(1)
    assert np.allclose(a.coeffs, b.coeffs, rtol=0, atol=1e-15)
