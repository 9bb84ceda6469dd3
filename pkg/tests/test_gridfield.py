import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tamelab.gridfield import (
    PERIOD,
    GridFunction,
    IncompatibleGrids,
    NormVector,
    ResolutionError,
    axpy,
    ck_norm,
    component_mean,
    component_sum,
    coordinates,
    derivative,
    load_csv,
    mollify,
    oscillator,
    pointwise_mul,
    random_trig_polynomial,
    refine,
    save_csv,
)

HYP = dict(max_examples=25, deadline=None, derandomize=True)


def grid_x(n):
    return PERIOD * np.arange(n) / n


def sine(freq, n, amplitude=1.0):
    return oscillator(amplitude, freq, phase=-np.pi / 2, n_points=n)


class TestDerivative:
    def test_sin_to_cos(self):
        f = sine(1, 256)
        d = derivative(f)
        expected = np.cos(grid_x(256))
        assert np.max(np.abs(d.samples[:, 0] - expected)) < 1e-12

    def test_constant_derivative_vanishes(self):
        f = GridFunction.constant(3.0, 128)
        assert derivative(f).sup() == 0.0

    def test_second_derivative_oracle(self):
        # oracle: analytic second derivative of sin(7x) evaluated on the grid
        f = sine(7, 256)
        d2 = derivative(f, 0, 2)
        expected = -49.0 * np.sin(7 * grid_x(256))
        assert np.max(np.abs(d2.samples[:, 0] - expected)) < 1e-10

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError, match="axis"):
            derivative(sine(1, 64), axis=1)
        with pytest.raises(ValueError, match="order"):
            derivative(sine(1, 64), order=0)

    def test_2d_axis_derivative(self):
        g = oscillator(1.0, 4, axis=1, n_points=64, dim=2)
        dg = derivative(g, axis=1)
        expected = -4.0 * np.sin(4 * grid_x(64))[None, :]
        assert np.max(np.abs(dg.samples[:, :, 0] - expected)) < 1e-11
        assert derivative(g, axis=0).sup() < 1e-12

    @given(mode=st.integers(min_value=1, max_value=30),
           order=st.integers(min_value=1, max_value=3))
    @settings(**HYP)
    def test_pure_mode_exact(self, mode, order):
        # tolerance scales with the derivative amplitude mode^order (the
        # analytic reference itself carries argument-reduction rounding)
        n = 512
        f = oscillator(1.0, mode, phase=0.3, n_points=n)
        d = derivative(f, 0, order)
        x = grid_x(n)
        expected = mode ** order * np.cos(mode * x + 0.3 + order * np.pi / 2)
        assert np.max(np.abs(d.samples[:, 0] - expected)) < 1e-12 * (1 + mode ** order)


class TestCkNorm:
    def test_constant(self):
        norms = ck_norm(GridFunction.constant(-2.5, 128), 4)
        assert norms.values == (2.5,) * 5

    def test_pure_mode_powers(self):
        norms = ck_norm(sine(16, 1024), 3)
        expected = (1.0, 16.0, 256.0, 4096.0)
        assert np.allclose(norms.values, expected, rtol=1e-9)

    def test_2d_pure_mode(self):
        g = oscillator(1.0, 4, axis=1, n_points=64, dim=2)
        norms = ck_norm(g, 2)
        assert np.allclose(norms.values, (1.0, 4.0, 16.0), rtol=1e-9)

    def test_refusal_beyond_safe_order(self):
        with pytest.raises(ResolutionError, match="n_points"):
            ck_norm(sine(1, 64), 8)

    def test_monotone_and_component_max(self):
        rng = np.random.default_rng(3)
        f = random_trig_polynomial(rng, 256, n_components=3, normalize=False)
        norms = ck_norm(f, 4)
        assert all(norms[k + 1] >= norms[k] for k in range(4))
        comp_sups = [np.max(np.abs(f.samples[..., c])) for c in range(3)]
        assert norms[0] == pytest.approx(max(comp_sups), abs=0.0)

    @given(seed=st.integers(min_value=0, max_value=10 ** 6))
    @settings(**HYP)
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        f = random_trig_polynomial(rng, 256, normalize=False)
        g = random_trig_polynomial(rng, 256, normalize=False)
        nf, ng, nsum = ck_norm(f, 3), ck_norm(g, 3), ck_norm(f + g, 3)
        for k in range(4):
            assert nsum[k] <= nf[k] + ng[k] + 1e-9 * (1 + nf[k] + ng[k])

    @given(seed=st.integers(min_value=0, max_value=10 ** 6))
    @settings(**HYP)
    def test_product_bound(self, seed):
        # generous Leibniz-type bound 2^k sum_j binom(k,j) ||f||_j ||g||_{k-j}
        from math import comb
        rng = np.random.default_rng(seed)
        f = random_trig_polynomial(rng, 512, normalize=False)
        g = random_trig_polynomial(rng, 512, normalize=False)
        nf, ng = ck_norm(f, 3), ck_norm(g, 3)
        nprod = ck_norm(pointwise_mul(f, g), 3)
        for k in range(4):
            bound = 2 ** k * sum(comb(k, j) * nf[j] * ng[k - j] for j in range(k + 1))
            assert nprod[k] <= bound * (1 + 1e-9)

    def test_random_poly_vs_refined_oracle(self):
        rng = np.random.default_rng(42)
        f = random_trig_polynomial(rng, 256)
        coarse = ck_norm(f, 3)
        fine = ck_norm(refine(f, 8), 3)
        for k in range(4):
            assert abs(fine[k] - coarse[k]) / fine[k] < 0.01


class TestNormVector:
    def test_rejects_decreasing(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            NormVector((1.0, 0.5))

    def test_rejects_negative_and_empty(self):
        with pytest.raises(ValueError):
            NormVector((-1.0,))
        with pytest.raises(ValueError):
            NormVector(())


class TestMollify:
    def test_unit_mass_on_constants(self):
        f = GridFunction.constant(4.2, 128)
        assert (mollify(f, 0.5) - f).sup() < 1e-12

    def test_small_ell_limit(self):
        # oracle: multiplier exp(-ell^2/2) on mode 1
        f = sine(1, 256)
        out = mollify(f, 1e-3)
        assert (out - f).sup() < 1e-4
        expected = np.exp(-0.5e-6)
        assert out.sup() == pytest.approx(expected, rel=1e-9)

    def test_gaussian_multiplier_oracle(self):
        # lam*ell = 4: amplitude exp(-8) ~ 3.3546e-4, within 1 percent
        lam, ell = 16, 0.25
        out = mollify(sine(lam, 512), ell)
        assert out.sup() == pytest.approx(np.exp(-8.0), rel=0.01)

    def test_ell_domain(self):
        f = sine(1, 64)
        for bad in (0.0, -1.0, PERIOD):
            with pytest.raises(ValueError, match="ell"):
                mollify(f, bad)

    def test_smoothing_constant_stable_across_lambda(self):
        # ||mollify(f, ell)||_{k+1} <= C ||f||_k / ell with C stable across
        # frequencies at fixed lam*ell >= 2
        ratios = []
        for lam in (16, 32, 64):
            ell = 2.0 / lam
            f = sine(lam, 2048)
            k = 1
            smooth = mollify(f, ell)
            ratios.append(ck_norm(smooth, k + 1)[k + 1] * ell / ck_norm(f, k)[k])
        assert max(ratios) / min(ratios) < 1.2

    def test_2d_constant(self):
        f = GridFunction.constant(1.0, 32, dim=2)
        assert (mollify(f, 0.3) - f).sup() < 1e-12


class TestOscillator:
    def test_zero_amplitude(self):
        assert oscillator(0.0, 32, n_points=512).sup() == 0.0

    def test_pure_mode_norms(self):
        norms = ck_norm(oscillator(1.0, 32, n_points=2048), 2)
        assert np.allclose(norms.values, (1.0, 32.0, 1024.0), rtol=1e-9)

    def test_phase_identity(self):
        # 2 cos(16x + pi/2) = -2 sin(16x)
        f = oscillator(2.0, 16, phase=np.pi / 2, n_points=512)
        expected = -2.0 * np.sin(16 * grid_x(512))
        assert np.max(np.abs(f.samples[:, 0] - expected)) < 1e-12

    def test_unresolved_frequency_refused(self):
        with pytest.raises(ResolutionError, match="unresolved"):
            oscillator(1.0, 32, n_points=128)
        with pytest.raises(ValueError, match="integer"):
            oscillator(1.0, 2.5, n_points=512)


class TestPointwiseOps:
    def test_axpy_neutral(self):
        rng = np.random.default_rng(0)
        f = random_trig_polynomial(rng, 128)
        g = random_trig_polynomial(rng, 128)
        assert np.array_equal(axpy(0.0, g, f).samples, f.samples)

    def test_sin_squared_identity(self):
        s = sine(1, 256)
        prod = pointwise_mul(s, s)
        expected = (1.0 - np.cos(2 * grid_x(256))) / 2.0
        assert np.max(np.abs(prod.samples[:, 0] - expected)) < 1e-12

    @given(seed=st.integers(min_value=0, max_value=10 ** 6))
    @settings(**HYP)
    def test_sup_submultiplicative(self, seed):
        rng = np.random.default_rng(seed)
        f = random_trig_polynomial(rng, 128, normalize=False)
        g = random_trig_polynomial(rng, 128, normalize=False)
        assert pointwise_mul(f, g).sup() <= f.sup() * g.sup() * (1 + 1e-12)

    def test_incompatible_grids(self):
        f, g = sine(1, 128), sine(1, 256)
        with pytest.raises(IncompatibleGrids):
            axpy(1.0, f, g)
        with pytest.raises(IncompatibleGrids):
            pointwise_mul(f, g)
        h = GridFunction.constant(1.0, 128, n_components=2)
        with pytest.raises(IncompatibleGrids):
            axpy(1.0, f, h)

    def test_component_broadcast_and_sum(self):
        two = GridFunction.constant(3.0, 64, n_components=2)
        one = GridFunction.constant(2.0, 64)
        prod = pointwise_mul(one, two)
        assert prod.n_components == 2
        assert component_sum(prod).samples[0, 0] == pytest.approx(12.0)
        assert component_mean(prod).samples[0, 0] == pytest.approx(6.0)


class TestGridFunction:
    def test_immutable_samples(self):
        f = sine(1, 64)
        with pytest.raises(ValueError):
            f.samples[0, 0] = 99.0

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(ValueError, match="power of two"):
            GridFunction(1, 100, 1, np.zeros((100, 1)))
        with pytest.raises(ValueError, match="shape"):
            GridFunction(1, 64, 2, np.zeros((64, 1)))
        bad = np.zeros((64, 1))
        bad[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            GridFunction(1, 64, 1, bad)

    def test_no_duplicated_endpoint(self):
        (x,) = coordinates(64)
        assert x[0] == 0.0
        assert x[-1] < PERIOD


class TestRefine:
    def test_shared_points_exact(self):
        rng = np.random.default_rng(5)
        f = random_trig_polynomial(rng, 128)
        r = refine(f, 4)
        assert np.max(np.abs(r.samples[::4, 0] - f.samples[:, 0])) < 1e-12

    def test_pure_mode_everywhere(self):
        f = sine(7, 128)
        r = refine(f, 4)
        expected = np.sin(7 * grid_x(512))
        assert np.max(np.abs(r.samples[:, 0] - expected)) < 1e-12

    def test_guards(self):
        f = sine(1, 128)
        with pytest.raises(ValueError, match="power of two"):
            refine(f, 3)
        with pytest.raises(ResolutionError, match="too large"):
            refine(sine(1, 2048), 4096)

    def test_2d_shared_points(self):
        rng = np.random.default_rng(6)
        f = random_trig_polynomial(rng, 32, dim=2)
        r = refine(f, 2)
        assert np.max(np.abs(r.samples[::2, ::2, 0] - f.samples[:, :, 0])) < 1e-12


class TestCsv:
    def test_roundtrip_1d(self, tmp_path):
        rng = np.random.default_rng(1)
        f = random_trig_polynomial(rng, 64, n_components=2, normalize=False)
        path = tmp_path / "f.csv"
        save_csv(f, path)
        g = load_csv(path)
        assert g.dim == 1 and g.n_points == 64 and g.n_components == 2
        assert np.array_equal(f.samples, g.samples)

    def test_roundtrip_2d(self, tmp_path):
        rng = np.random.default_rng(2)
        f = random_trig_polynomial(rng, 16, dim=2, n_components=3, normalize=False)
        path = tmp_path / "f2.csv"
        save_csv(f, path)
        g = load_csv(path)
        assert np.array_equal(f.samples, g.samples)

    def test_header_present(self, tmp_path):
        f = sine(1, 32)
        path = tmp_path / "f.csv"
        save_csv(f, path)
        assert path.read_text().startswith("# 1,32,1\n")
