import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsepp.imaging import (
    CartesianMask,
    FanBeamGeometry,
    FanBeamModel,
    FourierModel,
    IntensityData,
    KSpaceData,
    SparseFormatError,
    add_complex_gaussian,
    add_poisson,
    build_fanbeam,
    fourier_adjoint,
    fourier_forward,
    gaussian_fidelity,
    generalized_kl,
    kl_fidelity,
    load_sparse,
    make_cartesian_mask,
    phantom_generate,
    phantom_line_integral,
    save_sparse,
    xray_intensity,
    zero_fill_projection,
)
from pulsepp.imaging.phantom import square_chord


@pytest.fixture(scope="module")
def ct():
    geom = FanBeamGeometry(angles_deg=np.linspace(0, 119, 40))
    return geom, build_fanbeam(geom)


class TestMask:
    def test_full(self):
        m = make_cartesian_mask(32, 32, 1, 0.04, 0)
        assert m.M == m.N == 1024

    def test_exact_division(self):
        m = make_cartesian_mask(64, 64, 8, 0.04, 0)
        assert m.columns.sum() == 8 and m.M == 8 * 64

    @pytest.mark.parametrize("R", [6, 8])
    def test_knee_factors(self, R):
        m = make_cartesian_mask(64, 64, R, 0.04, 3)
        assert m.columns.sum() == round(64 / R)
        assert m.columns[0]  # DC column always kept

    def test_infeasible(self):
        with pytest.raises(ValueError):
            make_cartesian_mask(32, 32, 4, 0.5, 0)

    def test_dict_roundtrip(self):
        m = make_cartesian_mask(32, 32, 4, 0.04, 2)
        m2 = CartesianMask.from_dict(m.to_dict())
        np.testing.assert_array_equal(m.columns, m2.columns)


class TestFourier:
    def test_zero(self):
        m = make_cartesian_mask(16, 16, 2, 0.04, 0)
        assert not fourier_forward(np.zeros((16, 16)), m).any()

    def test_unitary(self):
        m = make_cartesian_mask(16, 16, 1, 0.04, 0)
        f = np.random.default_rng(0).random((16, 16))
        assert np.max(np.abs(fourier_adjoint(fourier_forward(f, m), m) - f)) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([1.0, 2.0, 4.0, 8.0]))
    def test_dot_product(self, seed, R):
        m = make_cartesian_mask(32, 32, R, 0.04, seed % 97)
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((32, 32))
        g = rng.standard_normal(m.M) + 1j * rng.standard_normal(m.M)
        lhs = np.vdot(g, fourier_forward(f, m)).real
        rhs = float(np.sum(f * fourier_adjoint(g, m)))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300) + 1e-12

    def test_closed_form_projector_idempotent(self):
        m = make_cartesian_mask(32, 32, 3, 0.04, 5)
        f = np.random.default_rng(1).random((32, 32))
        p = zero_fill_projection(f, m)
        np.testing.assert_allclose(zero_fill_projection(p, m), p, atol=1e-13)


class TestGaussianNoise:
    def test_sigma_zero(self):
        x = np.arange(5) + 1j
        np.testing.assert_array_equal(add_complex_gaussian(x, 0.0, 1).samples, x)

    def test_variance(self):
        sigma = 0.3
        d = add_complex_gaussian(np.zeros(100_000), sigma, 4)
        mean = np.mean(np.abs(d.samples) ** 2)
        assert abs(mean - sigma**2) < 3 * sigma**2 / np.sqrt(100_000)

    def test_seeded(self):
        a = add_complex_gaussian(np.zeros(10), 1.0, 8).samples
        np.testing.assert_array_equal(a, add_complex_gaussian(np.zeros(10), 1.0, 8).samples)


class TestGaussianFidelity:
    def setup_method(self):
        self.m = make_cartesian_mask(32, 32, 2, 0.04, 0)
        self.f = np.random.default_rng(2).random((32, 32))

    def test_noiseless(self):
        g = KSpaceData(fourier_forward(self.f, self.m), 0.1)
        J, grad = gaussian_fidelity(g, self.f, self.m)
        assert J == 0.0 and not grad.any()

    def test_quadratic(self):
        g = KSpaceData(np.zeros(self.m.M), 0.1)
        J1 = gaussian_fidelity(g, self.f, self.m)[0]
        J2 = gaussian_fidelity(g, 2 * self.f, self.m)[0]
        assert J2 == pytest.approx(4 * J1, rel=1e-12)

    def test_gradient_fd(self):
        g = add_complex_gaussian(fourier_forward(self.f, self.m), 0.05, 1)
        f0 = self.f + 0.1
        J, grad = gaussian_fidelity(g, f0, self.m)
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(20):
            i, j = rng.integers(32, size=2)
            E = np.zeros_like(f0)
            E[i, j] = h
            fd = (gaussian_fidelity(g, f0 + E, self.m)[0] - gaussian_fidelity(g, f0 - E, self.m)[0]) / (2 * h)
            assert abs(fd - grad[i, j]) <= 1e-4 * abs(grad[i, j]) + 1e-6

    def test_morozov_mean(self):
        model = FourierModel(self.m, 0.05)
        Js = [model.fidelity(model.simulate(self.f, s), self.f)[0] for s in range(100)]
        M = self.m.M
        assert abs(np.mean(Js) - M / 2) < 3 * np.sqrt(M / 4) / np.sqrt(100)


class TestFanBeam:
    def test_nonneg_and_shape(self, ct):
        geom, H = ct
        assert H.shape == (40 * 64, 1024)
        assert H.data.min() >= 0

    def test_adjoint(self, ct):
        _, H = ct
        rng = np.random.default_rng(4)
        f, g = rng.standard_normal(H.shape[1]), rng.standard_normal(H.shape[0])
        lhs, rhs = g @ (H @ f), (H.T @ g) @ f
        assert abs(lhs - rhs) / abs(lhs) < 1e-12

    def test_chord_lengths(self, ct):
        geom, H = ct
        n, pitch = geom.n_pix, geom.pixel_mm
        for row, (src, dst) in enumerate(geom.rays()):
            if row % 97:
                continue
            d = dst - src
            entries = H.getrow(row)
            for idx, val in zip(entries.indices, entries.data):
                r, c = divmod(idx, n)
                centre = np.array([(c - (n - 1) / 2) * pitch, ((n - 1) / 2 - r) * pitch])
                assert abs(val - square_chord(src - centre, d, pitch / 2)) < 1e-10

    def test_single_pixel_center_ray(self):
        # one view, detector centre ray passes through the image centre
        geom = FanBeamGeometry(n_pix=3, pixel_mm=1.0, n_detectors=1, angles_deg=np.array([0.0]))
        H = build_fanbeam(geom)
        centre_pixel = 1 * 3 + 1
        assert abs(H[0, centre_pixel] - 1.0) < 1e-10

    def test_phantom_line_integrals(self, ct):
        geom, H = ct
        seed = 3
        f = phantom_generate("ellipses", 32, 32, seed)
        half = geom.n_pix * geom.pixel_mm / 2
        sino = H @ f.ravel()
        for row, (src, dst) in enumerate(geom.rays()):
            if row % geom.n_detectors != geom.n_detectors // 2:
                continue
            exact = phantom_line_integral(seed, src, dst - src, half)
            assert abs(sino[row] - exact) / exact < 0.02

    def test_intensity(self, ct):
        _, H = ct
        np.testing.assert_allclose(xray_intensity(H, np.zeros(1024), 1e3, 0.063), 1e3)
        f = np.random.default_rng(5).random(1024)
        f2 = f.copy()
        f2[500] += 0.5
        assert np.all(xray_intensity(H, f2, 1e5, 0.063) <= xray_intensity(H, f, 1e5, 0.063))

    def test_sparse_file(self, ct, tmp_path):
        _, H = ct
        p = tmp_path / "h.lmsm"
        save_sparse(H, p)
        H2 = load_sparse(p)
        assert (H != H2).nnz == 0
        raw = bytearray(p.read_bytes())
        raw[100] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(SparseFormatError):
            load_sparse(p)

    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            FanBeamGeometry(source_to_iso_mm=5.0)


class TestPoisson:
    def test_zero_mean(self):
        assert not add_poisson(np.zeros(10), 0).counts.any()

    def test_moments(self):
        c = add_poisson(np.full(100_000, 100.0), 6).counts
        assert abs(c.mean() - 100) < 1
        assert abs(c.var() - 100) < 5


class TestKL:
    def test_zero_at_match(self):
        assert generalized_kl([0.0, 3.0, 7.0], [0.0, 3.0, 7.0]) == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            g, gh = rng.poisson(20, 50).astype(float), rng.uniform(0.1, 40, 50)
            assert generalized_kl(g, gh) >= 0

    @pytest.mark.parametrize("I0", [1e3, 1e5])
    def test_gradient_fd(self, ct, I0):
        geom, H = ct
        model = FanBeamModel(geom, H, I0)
        f = phantom_generate("ellipses", 32, 32, 1)
        data = model.simulate(f, 2)
        f0 = f + 0.05
        J, grad = kl_fidelity(data, f0, H)
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(20):
            i, j = rng.integers(32, size=2)
            E = np.zeros_like(f0)
            E[i, j] = h
            fd = (kl_fidelity(data, f0 + E, H)[0] - kl_fidelity(data, f0 - E, H)[0]) / (2 * h)
            assert abs(fd - grad[i, j]) <= 1e-4 * abs(grad[i, j]) + 1e-6

    def test_intensity_data_validation(self):
        with pytest.raises(ValueError):
            IntensityData(np.array([-1.0]), 1e3, 0.063)


class TestPhantom:
    @pytest.mark.parametrize("kind", ["ellipses", "checker"])
    def test_seeded_and_range(self, kind):
        a = phantom_generate(kind, 32, 32, 4)
        np.testing.assert_array_equal(a, phantom_generate(kind, 32, 32, 4))
        assert a.min() > 0 and a.max() < 1

    def test_unknown(self):
        with pytest.raises(ValueError):
            phantom_generate("disk", 8, 8, 0)
