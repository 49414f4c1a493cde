import csv

import numpy as np
import pytest

from kdvh.errors import ConvergenceError
from kdvh.imex.stepper import KdvhProblem, integrate
from kdvh.imex.tableaux import get_tableau
from kdvh.model import kdv_soliton
from kdvh.sbp import make_grid, make_operators
from kdvh.waves import (
    OrbitConfig,
    PhasePoint,
    SingularLineError,
    TravelingWaveParams,
    classify_equilibria,
    comparison_curve,
    find_homoclinic,
    first_integral,
    flux_jacobian_eigs,
    homoclinic_launch_points,
    integrate_orbit,
    petviashvili_solve,
    phase_portrait_field,
    singular_distance,
    tw_auxiliaries,
    tw_constraint_residual,
    tw_vector_field,
    write_field_csv,
    write_orbit_csv,
)

FIG = TravelingWaveParams(1.0, 0.4)


@pytest.fixture(scope="module")
def wide_grid():
    return make_grid(-30 * np.pi, 30 * np.pi, 512)


@pytest.fixture(scope="module")
def profiles(wide_grid):
    out = {}
    for tau in (1.0, 0.5, 0.1, 0.0):
        p = TravelingWaveParams(1 / 3, tau)
        out[tau] = petviashvili_solve(wide_grid, p, kdv_soliton(1 / 3, wide_grid.nodes))
    return out


def crest_of(p):
    """Nonzero root of H(u, 0) = 0 that lies on the saddle side of the singular line."""
    a, c, tau = p.alpha, p.c, p.tau
    roots = np.roots([-a / 8, (3 * c * c * tau - 1) / 6, c * (1 - c * c * tau) / 2])
    return roots[roots > 0].real.min()


class TestParams:
    def test_alpha_and_singular_line(self):
        assert FIG.alpha == pytest.approx(0.4)
        assert FIG.singular_u == pytest.approx(1.0 - 2.5)
        assert TravelingWaveParams(1.0, 0.0).singular_u is None

    @pytest.mark.parametrize("args", [(1.0, -0.1), (np.nan, 1.0), (1.0, np.inf)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            TravelingWaveParams(*args)


class TestVectorField:
    @pytest.mark.parametrize("pt", [(0.0, 0.0), (2.0, 0.0)])
    def test_equilibria(self, pt):
        assert tw_vector_field(FIG, pt) == (0.0, 0.0)

    def test_substitution(self):
        du, dv = tw_vector_field(FIG, PhasePoint(1.0, 0.0))
        assert du == 0.0
        assert dv == pytest.approx(0.5 / 1.4, rel=1e-15)

    def test_singular_line(self):
        with pytest.raises(SingularLineError):
            tw_vector_field(FIG, (FIG.singular_u, 0.3))
        assert singular_distance(FIG, (FIG.singular_u + 0.25, 0.0)) == pytest.approx(0.25)


class TestFirstIntegral:
    def test_simple_values(self):
        assert first_integral(FIG, (0.0, 0.0)) == 0.0
        assert first_integral(FIG, (0.0, 0.7)) == pytest.approx(0.245)

    def test_conserved_by_field(self):
        # complex-step gradient of the polynomial H, exact to roundoff
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = rng.uniform(0.1, 2.0)
            p = TravelingWaveParams(c, rng.uniform(0.01, 1.0))
            u, v = rng.uniform(-3, 3, 2)
            if singular_distance(p, (u, v)) < 0.05:
                continue
            h = 1e-30
            Hu = first_integral(p, (u + 1j * h, v)).imag / h
            Hv = first_integral(p, (u, v + 1j * h)).imag / h
            du, dv = tw_vector_field(p, (u, v))
            scale = (abs(Hu) + abs(Hv)) * (abs(du) + abs(dv)) + 1e-300
            assert abs(Hu * du + Hv * dv) <= 1e-12 * scale


class TestEquilibria:
    def test_figure_parameters(self):
        eq = classify_equilibria(FIG)
        assert eq["origin_is_saddle"]
        assert eq["crest"]["kind"] == "center"
        assert np.allclose(eq["crest"]["eigenvalues"].real, 0.0, atol=1e-14)

    def test_fast_wave_is_not_saddle(self):
        eq = classify_equilibria(TravelingWaveParams(2.0, 1.0))
        assert not eq["origin_is_saddle"]
        assert np.allclose(eq["origin"]["eigenvalues"].real, 0.0, atol=1e-14)

    def test_saddle_lattice(self):
        for c in np.linspace(0.05, 3.0, 20):
            for tau in np.geomspace(0.013, 7.0, 20):
                expected = 1 / tau > c * c
                assert classify_equilibria(TravelingWaveParams(c, tau))["origin_is_saddle"] == expected


class TestOrbits:
    def test_homoclinic(self):
        orbit = find_homoclinic(FIG)
        assert orbit.classification == "homoclinic"
        assert orbit.H_drift <= 1e-10
        assert orbit.u_tilde.max() == pytest.approx(crest_of(FIG), abs=1e-5)
        assert abs(orbit.H0) < 1e-15

    def test_launch_points(self):
        pts = homoclinic_launch_points(FIG)
        assert len(pts) == 2
        assert np.hypot(*pts[0].as_array()) == pytest.approx(1e-8)
        with pytest.raises(ValueError):
            homoclinic_launch_points(TravelingWaveParams(2.0, 1.0))

    def test_periodic(self):
        orbit = integrate_orbit(FIG, (1.5, 0.0))
        assert orbit.classification == "periodic"
        assert orbit.H_drift <= 1e-10

    def test_center_at_origin_for_fast_waves(self):
        orbit = integrate_orbit(TravelingWaveParams(2.0, 1.0), (1.4, 0.1))
        assert orbit.classification == "periodic"

    @pytest.mark.parametrize("start", [(1.4, 1.0), (1.4, -1.0), (0.5, 2.0)])
    def test_singular_hit(self, start):
        orbit = integrate_orbit(TravelingWaveParams(2.0, 1.0), start)
        assert orbit.classification == "singular_hit"
        assert orbit.H_drift <= 1e-10

    def test_escape(self):
        assert integrate_orbit(FIG, (-5.0, 2.0), OrbitConfig(bound=4.0)).classification == "escaped"
        assert integrate_orbit(FIG, (1.5, 0.0), OrbitConfig(xi_max=1.0)).classification == "escaped"

    def test_large_energy_orbit_reaches_singular_line(self):
        orbit = integrate_orbit(FIG, (-5.0, 2.0))
        assert orbit.classification == "singular_hit"
        assert singular_distance(FIG, orbit.samples[-1, 1:]) < 1e-4
        assert orbit.H_drift <= 1e-10 * abs(orbit.H0)

    def test_start_on_singular_line(self):
        with pytest.raises(SingularLineError):
            integrate_orbit(FIG, (FIG.singular_u, 0.0))

    def test_no_homoclinic(self):
        with pytest.raises((ConvergenceError, ValueError)):
            find_homoclinic(TravelingWaveParams(2.0, 1.0))


class TestPetviashvili:
    def test_kdv_limit(self, profiles, wide_grid):
        res = profiles[0.0]
        assert res.converged and res.residual <= 5e-13
        assert np.abs(res.profile - kdv_soliton(1 / 3, wide_grid.nodes)).max() <= 1e-10

    def test_converged_and_monotone(self, profiles):
        for tau in (1.0, 0.5, 0.1):
            res = profiles[tau]
            assert res.converged and res.residual <= 1e-13
            assert np.all(np.diff(res.residual_history[20:]) <= 0)

    def test_ordering_toward_soliton(self, profiles, wide_grid):
        sol = kdv_soliton(1 / 3, wide_grid.nodes)
        dist = [np.abs(profiles[t].profile - sol).max() for t in (1.0, 0.5, 0.1)]
        assert dist[0] > dist[1] > dist[2]
        peaks = [profiles[t].profile.max() for t in (1.0, 0.5, 0.1)]
        assert peaks[0] < peaks[1] < peaks[2] < 1.0

    def test_peak_matches_phase_plane(self, profiles):
        for tau in (1.0, 0.5, 0.1):
            p = TravelingWaveParams(1 / 3, tau)
            assert profiles[tau].profile.max() == pytest.approx(crest_of(p), abs=1e-6)

    def test_constraints(self, profiles, wide_grid):
        ops = make_operators(wide_grid, "fourier")
        for tau in (1.0, 0.1):
            p = TravelingWaveParams(1 / 3, tau)
            u = profiles[tau].profile
            v, w = tw_auxiliaries(wide_grid, p, u)
            r1, r2 = tw_constraint_residual(ops, p, u, v, w)
            assert r1 <= 1e-11 and r2 <= 1e-11

    def test_constraints_negative_control(self, wide_grid):
        ops = make_operators(wide_grid, "fourier")
        rng = np.random.default_rng(1)
        r1, r2 = tw_constraint_residual(ops, FIG, *rng.standard_normal((3, wide_grid.n)))
        assert r1 > 1.0 and r2 > 1.0

    def test_alpha_zero_constraints(self):
        g = make_grid(0.0, 2 * np.pi, 32)
        ops = make_operators(g, "fourier")
        u = np.sin(g.nodes)
        v = ops.d_central @ u
        w = ops.d_central @ v
        assert max(tw_constraint_residual(ops, TravelingWaveParams(1.0, 0.0), u, v, w)) < 1e-12

    def test_translation(self, profiles, wide_grid):
        # the wave moves at speed c without changing shape under the KdVH time stepper
        tau = 0.1
        ops = make_operators(wide_grid, "fourier")
        p = TravelingWaveParams(1 / 3, tau)
        u = profiles[tau].profile
        v, w = tw_auxiliaries(wide_grid, p, u)
        res = integrate(get_tableau("ARS(4,4,3)"), KdvhProblem(ops, tau), np.concatenate([u, v, w]), 0.05, 10.0)
        k = 2 * np.pi * np.fft.rfftfreq(wide_grid.n, d=wide_grid.dx)
        moved = np.fft.irfft(np.fft.rfft(u) * np.exp(-1j * k * 10.0 / 3), n=wide_grid.n)
        assert np.abs(res.q[:wide_grid.n] - moved).max() <= 1e-4

    def test_errors(self, wide_grid):
        p = TravelingWaveParams(1 / 3, 0.1)
        with pytest.raises(ValueError):
            petviashvili_solve(wide_grid, TravelingWaveParams(1.0, 1.0), np.ones(512))
        with pytest.raises(ValueError):
            petviashvili_solve(make_grid(0.0, 1.0, 15), p, np.ones(15))
        with pytest.raises(ValueError):
            petviashvili_solve(wide_grid, p, np.ones(100))
        with pytest.raises(ValueError):
            petviashvili_solve(wide_grid, p, np.zeros(512))
        # odd guess under a quadratic nonlinearity: <N(u), u> = 0
        with pytest.raises(ConvergenceError):
            odd = np.sin(2 * np.pi * wide_grid.nodes / wide_grid.length)
            petviashvili_solve(wide_grid, TravelingWaveParams(1 / 3, 0.0), odd)


class TestFluxJacobian:
    @pytest.mark.parametrize("tau", [1.0, 0.25, 1e-2])
    def test_eigenvalues(self, tau):
        expected = np.sort([-1 / tau, 1 / np.sqrt(tau), -1 / np.sqrt(tau)])
        np.testing.assert_allclose(flux_jacobian_eigs(tau), expected, rtol=1e-12, atol=1e-12)

    def test_quarter(self):
        np.testing.assert_allclose(flux_jacobian_eigs(0.25), [-4.0, -2.0, 2.0], atol=1e-12)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            flux_jacobian_eigs(0.0)


class TestOutputs:
    def test_comparison_curve(self):
        assert comparison_curve(np.array([0.0]))[0] == pytest.approx(2 / 3)
        assert comparison_curve(np.array([40.0]))[0] == pytest.approx(-1.0, abs=1e-12)

    def test_field_masks_singular_line(self):
        U, V, DU, DV, H = phase_portrait_field(FIG, (-2.0, -1.0), (-1.0, 1.0), nu=5, nv=3)
        assert np.isnan(DU[2]).all()  # u = -1.5 is the singular line
        assert np.isfinite(H).all()

    def test_csv_files(self, tmp_path):
        orbit = integrate_orbit(FIG, (1.5, 0.0))
        write_orbit_csv(tmp_path / "orbit.csv", orbit)
        rows = list(csv.reader(open(tmp_path / "orbit.csv")))
        assert rows[0] == ["xi", "u_tilde", "v_tilde"] and len(rows) == len(orbit.samples) + 1
        write_field_csv(tmp_path / "field.csv", *phase_portrait_field(FIG, (0, 1), (0, 1), 3, 3))
        assert len(list(csv.reader(open(tmp_path / "field.csv")))) == 10
