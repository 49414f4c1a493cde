import numpy as np
import pytest

from kdvh.model import (
    KdvhState,
    SolitonParams,
    StiffOperator,
    energy_kdv,
    energy_kdvh,
    kdv_dispersion,
    kdv_rhs,
    kdv_soliton,
    kdv_soliton_derivative,
    kdvh_rhs,
    kdvh_rhs_split,
    mass,
    read_snapshot,
    well_prepared_init,
    write_snapshot,
)
from kdvh.sbp import make_grid, make_operators


@pytest.fixture(params=[("upwind_fd", 1), ("upwind_fd", 8), ("fourier", None)], ids=["q1", "q8", "fourier"])
def ops(request):
    kind, q = request.param
    return make_operators(make_grid(-10.0, 10.0, 32), kind, q or 8)


def random_state(rng, n, tau=0.3):
    return KdvhState(*rng.standard_normal((3, n)), tau)


class TestTypes:
    def test_state_validation(self):
        with pytest.raises(ValueError):
            KdvhState(np.zeros(4), np.zeros(4), np.zeros(4), 0.0)
        with pytest.raises(ValueError):
            KdvhState(np.zeros(4), np.zeros(3), np.zeros(4), 1.0)

    def test_vector_roundtrip(self):
        s = KdvhState(np.arange(3.0), np.arange(3.0) + 3, np.arange(3.0) + 6, 0.5)
        np.testing.assert_array_equal(s.as_vector(), np.arange(9.0))
        t = KdvhState.from_vector(s.as_vector(), 0.5)
        np.testing.assert_array_equal(t.w, s.w)

    def test_soliton_params(self):
        assert SolitonParams.from_amplitude(1.0).c == pytest.approx(1 / 3)
        assert SolitonParams(0.5).amplitude == 1.5
        with pytest.raises(ValueError):
            SolitonParams(0.0)


class TestRhs:
    def test_kdv_constants_and_zero(self, ops):
        np.testing.assert_allclose(kdv_rhs(ops, np.ones(ops.n)), 0.0, atol=1e-12)
        np.testing.assert_array_equal(kdv_rhs(ops, np.zeros(ops.n)), 0.0)

    def test_kdv_dense_oracle(self):
        ops = make_operators(make_grid(0.0, 1.0, 16), "upwind_fd", 1)
        rng = np.random.default_rng(1)
        eta = rng.standard_normal(16)
        Dp, Dm = ops.d_plus.dense(), ops.d_minus.dense()
        D = 0.5 * (Dp + Dm)
        expected = -(D @ eta**2 + eta * (D @ eta)) / 3 - Dp @ D @ Dm @ eta
        np.testing.assert_allclose(kdv_rhs(ops, eta), expected, rtol=1e-12, atol=1e-9)

    def test_kdv_length_mismatch(self, ops):
        with pytest.raises(ValueError):
            kdv_rhs(ops, np.zeros(ops.n + 1))

    def test_split_zero_and_constant(self, ops):
        n = ops.n
        f, g = kdvh_rhs_split(ops, KdvhState(np.zeros(n), np.zeros(n), np.zeros(n), 1.0))
        assert not f.any() and not g.any()
        f, g = kdvh_rhs_split(ops, KdvhState(np.ones(n), np.zeros(n), np.zeros(n), 1.0))
        np.testing.assert_allclose(f, 0.0, atol=1e-12)
        np.testing.assert_allclose(g, 0.0, atol=1e-12)
        # a constant v feeds the w equation directly: (-D_- u + v) / tau
        f, g = kdvh_rhs_split(ops, KdvhState(np.ones(n), np.ones(n), np.zeros(n), 1.0))
        np.testing.assert_allclose(g[:2 * n], 0.0, atol=1e-12)
        np.testing.assert_allclose(g[2 * n:], 1.0, atol=1e-12)

    def test_split_sum(self, ops):
        s = random_state(np.random.default_rng(2), ops.n)
        f, g = kdvh_rhs_split(ops, s)
        np.testing.assert_allclose(kdvh_rhs(ops, s), f + g)

    def test_stiff_operator_consistency(self, ops):
        s = random_state(np.random.default_rng(3), ops.n, tau=0.07)
        _, g = kdvh_rhs_split(ops, s)
        G = StiffOperator(ops, 0.07)
        np.testing.assert_allclose(G @ s.as_vector(), g, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(G.dense() @ s.as_vector(), g, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(G.sparse() @ s.as_vector(), g, rtol=1e-10, atol=1e-10)

    def test_symbol_blocks_diagonalize(self, ops):
        G = StiffOperator(ops, 0.2)
        blocks = G.symbol_blocks()
        k = 3
        e = np.exp(2j * np.pi * k * np.arange(ops.n) / ops.n)
        for j in range(3):
            q = np.zeros(3 * ops.n, dtype=complex)
            q[j * ops.n:(j + 1) * ops.n] = e
            out = G.dense() @ q
            np.testing.assert_allclose(out.reshape(3, -1), blocks[k][:, j][:, None] * e, atol=1e-10)

    def test_limit_form(self, ops):
        s = random_state(np.random.default_rng(4), ops.n, tau=1e-3)
        _, g = kdvh_rhs_split(ops, s)
        n = ops.n
        np.testing.assert_allclose(1e-3 * g[n:2 * n], ops.d_central @ s.v - s.w, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(1e-3 * g[2 * n:], -(ops.d_minus @ s.u) + s.v, rtol=1e-12, atol=1e-12)


class TestConservation:
    def test_kdvh_mass_and_energy(self, ops):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = random_state(rng, ops.n, tau=rng.uniform(1e-3, 1.0))
            f, g = kdvh_rhs_split(ops, s)
            n = ops.n
            scale = np.abs(s.as_vector()).max() ** 2 * np.abs(ops.d_plus.dense()).max() * ops.grid.length
            dm = np.sum(ops.norm_weights * (f + g)[:n])
            de = (ops.inner(s.u, f[:n] + g[:n]) + s.tau * ops.inner(s.v, g[n:2 * n])
                  + s.tau * ops.inner(s.w, g[2 * n:]))
            assert abs(dm) <= 1e-11 * scale
            assert abs(de) <= 1e-11 * scale * np.abs(s.as_vector()).max()

    def test_kdv_mass_and_energy(self, ops):
        rng = np.random.default_rng(6)
        for _ in range(100):
            eta = rng.standard_normal(ops.n)
            r = kdv_rhs(ops, eta)
            scale = np.abs(eta).max() ** 3 * np.abs(ops.third_derivative.dense()).max() * ops.grid.length
            assert abs(np.sum(ops.norm_weights * r)) <= 1e-11 * scale
            assert abs(ops.inner(eta, r)) <= 1e-11 * scale

    def test_dispersion_is_skew(self, ops):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((2, ops.n))
        lhs = ops.inner(a, kdv_dispersion(ops, b)) + ops.inner(kdv_dispersion(ops, a), b)
        assert abs(lhs) < 1e-9 * np.abs(ops.third_derivative.dense()).max()


class TestInvariants:
    def test_mass_of_constant(self, ops):
        assert mass(ops, np.ones(ops.n)) == pytest.approx(ops.grid.length)
        s = KdvhState(np.ones(ops.n), np.zeros(ops.n), np.zeros(ops.n), 1.0)
        assert mass(ops, s) == pytest.approx(ops.grid.length)

    def test_energy_identity(self, ops):
        s = random_state(np.random.default_rng(8), ops.n, tau=1e-4)
        diff = energy_kdvh(ops, s) - energy_kdv(ops, s.u)
        bound = s.tau * 0.5 * np.sum(ops.norm_weights * (s.v**2 + s.w**2))
        assert diff == pytest.approx(bound, rel=1e-12)


class TestSoliton:
    def test_peak(self):
        assert kdv_soliton(SolitonParams(1 / 3), np.array([0.0]))[0] == pytest.approx(1.0)
        assert kdv_soliton(1.2, np.array([1.2 * 5.0]), t=5.0)[0] == pytest.approx(3.6)

    def test_amplitude_form(self):
        x = np.linspace(-10, 10, 101)
        A = 2.0
        np.testing.assert_allclose(kdv_soliton(SolitonParams.from_amplitude(A), x),
                                   A / np.cosh(np.sqrt(3 * A) * x / 6) ** 2)

    def test_decay(self):
        # sech^2(z) < 4 exp(-2z): below 1e-12 once sqrt(9c)|x|/6 > 15
        c = 1 / 3
        x = np.array([90 / np.sqrt(9 * c), 100.0, -120.0])
        assert np.all(np.abs(kdv_soliton(c, x)) < 1e-12)
        edge = kdv_soliton(c, np.array([60 / np.sqrt(9 * c)]))[0]
        assert edge == pytest.approx(1 / np.cosh(10.0) ** 2, rel=1e-12)

    def test_derivative_against_finite_differences(self):
        x = np.linspace(-8, 8, 33)
        h = 1e-5
        fd = (kdv_soliton(0.7, x + h) - kdv_soliton(0.7, x - h)) / (2 * h)
        np.testing.assert_allclose(kdv_soliton_derivative(0.7, x), fd, atol=1e-8)

    def test_solves_kdv(self):
        # eta_t + eta eta_x + eta_xxx = 0, checked with finite differences in x and t
        c, x, t, h = 0.8, np.linspace(-5, 5, 21), 0.3, 1e-3
        e = lambda xx, tt: kdv_soliton(c, xx, tt)
        et = (e(x, t + h) - e(x, t - h)) / (2 * h)
        ex = (e(x + h, t) - e(x - h, t)) / (2 * h)
        exxx = (e(x + 2 * h, t) - 2 * e(x + h, t) + 2 * e(x - h, t) - e(x - 2 * h, t)) / (2 * h**3)
        np.testing.assert_allclose(et + e(x, t) * ex + exxx, 0.0, atol=1e-4)


class TestWellPrepared:
    def test_constant(self, ops):
        s = well_prepared_init(ops, np.ones(ops.n), 0.1)
        np.testing.assert_allclose(s.v, 0.0, atol=1e-12)
        np.testing.assert_allclose(s.w, 0.0, atol=1e-12)

    def test_soliton_derivative_accuracy(self):
        errs = []
        for n in (256, 512):
            g = make_grid(-40.0, 40.0, n)
            ops = make_operators(g, "upwind_fd", 4)
            s = well_prepared_init(ops, kdv_soliton(1 / 3, g.nodes), 0.1)
            errs.append(np.abs(s.v - kdv_soliton_derivative(1 / 3, g.nodes)).max())
        assert np.log2(errs[0] / errs[1]) > 3.5

    def test_fourier_spectral(self):
        g = make_grid(0.0, 2 * np.pi, 32)
        ops = make_operators(g, "fourier")
        s = well_prepared_init(ops, np.sin(2 * g.nodes), 0.1)
        np.testing.assert_allclose(s.v, 2 * np.cos(2 * g.nodes), atol=1e-12)
        np.testing.assert_allclose(s.w, -4 * np.sin(2 * g.nodes), atol=1e-11)


def test_snapshot_roundtrip(tmp_path):
    g = make_grid(0.0, 1.0, 8)
    rng = np.random.default_rng(9)
    s = KdvhState(*rng.standard_normal((3, 8)), 1e-3)
    path = tmp_path / "snap.csv"
    write_snapshot(path, g.nodes, s, 1.25, {"n": 8})
    header, x, back = read_snapshot(path)
    assert header["t"] == 1.25 and header["tau"] == 1e-3 and header["grid"] == {"n": 8}
    np.testing.assert_array_equal(x, g.nodes)
    np.testing.assert_array_equal(back.as_vector(), s.as_vector())
