import math

import numpy as np
import pytest

from risk_terrain.errors import ConfigError, DomainError
from risk_terrain.impact import (
    GaussianImpactParams,
    ImpactKernel,
    RayleighImpactParams,
    RayleighMode,
    build_kernel,
    gaussian_cell_prob,
    gaussian_density,
    integrate_cells,
    rayleigh_cell_prob,
    rayleigh_density,
    rayleigh_normalization,
)

GAUSS = GaussianImpactParams(0.0244)
RING = RayleighImpactParams(0.2790, 0.0918, RayleighMode.PAPER_FAITHFUL)
RING_NORMALIZED = RayleighImpactParams(0.2790, 0.0918, RayleighMode.NORMALIZED)


def test_gaussian_peak_density():
    assert gaussian_density((0, 0), (0, 0), 125.0, GAUSS) == pytest.approx(4.175e-4, rel=1e-3)


def test_gaussian_density_is_radially_symmetric():
    a = gaussian_density((3.0, 4.0), (0, 0), 60.0, GAUSS)
    b = gaussian_density((-5.0, 0.0), (0, 0), 60.0, GAUSS)
    assert a == pytest.approx(b, rel=1e-12)


def test_peak_times_height_squared_is_constant():
    peaks = [gaussian_density((0, 0), (0, 0), h, GAUSS) * h * h for h in (10.0, 50.0, 125.0, 200.0)]
    np.testing.assert_allclose(peaks, peaks[0], rtol=1e-12)


def test_zero_altitude_is_rejected():
    with pytest.raises(DomainError):
        gaussian_density((0, 0), (0, 0), 0.0, GAUSS)
    with pytest.raises(DomainError):
        rayleigh_density((0, 0), (0, 0), -1.0, RING)


def test_gaussian_integrates_to_one_over_the_plane():
    h0 = 50.0
    sigma = math.sqrt(GAUSS.alpha) * h0
    offsets = np.arange(-6 * sigma, 6 * sigma + 2, 2.0)
    ox, oy = np.meshgrid(offsets, offsets)
    assert integrate_cells(GAUSS, ox, oy, h0, 1.0).sum() == pytest.approx(1.0, abs=1e-4)


def test_center_cell_probability_at_125m():
    assert gaussian_cell_prob((0, 0), (0, 0), 125.0, GAUSS) == pytest.approx(1.670e-3, rel=2e-3)


def test_small_cell_limit_is_density_times_area():
    delta = 0.01
    p = gaussian_cell_prob((2.0, 1.0), (0, 0), 40.0, GAUSS, delta=delta)
    assert p / (4 * delta * delta) == pytest.approx(gaussian_density((2.0, 1.0), (0, 0), 40.0, GAUSS), rel=1e-4)


def test_nested_squares_are_monotone():
    inner = gaussian_cell_prob((4.0, 0), (0, 0), 30.0, GAUSS, delta=0.5)
    outer = gaussian_cell_prob((4.0, 0), (0, 0), 30.0, GAUSS, delta=1.0)
    assert 0 < inner <= outer <= 1


def test_ring_density_peaks_on_the_ring():
    h0 = 100.0
    ring = RING.beta * h0
    assert rayleigh_density((ring, 0), (0, 0), h0, RING) == pytest.approx(1.889e-3, rel=1e-3)

    radii = np.linspace(0, 3 * ring, 3001)
    values = rayleigh_density(np.column_stack((radii, np.zeros_like(radii))), (0, 0), h0, RING)
    assert abs(radii[np.argmax(values)] - ring) <= radii[1]


def test_ring_density_is_rotation_invariant():
    h0 = 80.0
    a = rayleigh_density((12.0, 5.0), (0, 0), h0, RING)
    b = rayleigh_density((0.0, -13.0), (0, 0), h0, RING)
    assert a == pytest.approx(b, rel=1e-12)


def test_ring_center_is_suppressed():
    h0 = 100.0
    ring = RING.beta * h0
    center = rayleigh_density((0, 0), (0, 0), h0, RING)
    peak = rayleigh_density((ring, 0), (0, 0), h0, RING)
    ratio = math.exp(-(RING.beta / RING.gamma) ** 2 / 2)
    assert center / peak == pytest.approx(ratio, rel=1e-9)


def test_normalization_constant():
    assert rayleigh_normalization(0.0, 1.0) == pytest.approx(1.0)
    assert RING.normalization == pytest.approx(7.62, abs=0.01)
    values = [rayleigh_normalization(d, 1.0) for d in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert values == sorted(values)


def test_normalized_mode_divides_by_the_constant():
    p = (20.0, 10.0)
    faithful = rayleigh_density(p, (0, 0), 100.0, RING)
    normalized = rayleigh_density(p, (0, 0), 100.0, RING_NORMALIZED)
    assert normalized == pytest.approx(faithful / RING.normalization, rel=1e-12)


def test_ring_cell_probability_on_the_ring():
    h0 = 100.0
    ring = RING.beta * h0
    assert rayleigh_cell_prob((ring, 0), (0, 0), h0, RING) == pytest.approx(7.56e-3, rel=5e-3)


@pytest.mark.parametrize("h0", [50.0, 150.0])
def test_gaussian_window_sum(h0):
    kernel = build_kernel(GAUSS, altitudes=[h0])
    sigma = math.sqrt(GAUSS.alpha) * h0
    expected = math.erf(21.0 / (sigma * math.sqrt(2.0))) ** 2
    assert float(kernel.probs[0].astype(np.float64).sum()) == pytest.approx(expected, abs=1e-4)


def test_kernel_shape_and_bounds():
    kernel = build_kernel(RING, altitudes=[20.0, 60.0, 100.0])
    assert kernel.probs.shape == (3, 21, 21)
    assert kernel.probs.dtype == np.float32
    assert kernel.radius_cells == 10
    assert np.all(kernel.probs >= 0) and np.all(kernel.probs <= 1)
    np.testing.assert_array_equal(kernel.offsets, np.arange(-20, 21, 2))


def test_kernel_is_symmetric_under_quarter_turns():
    kernel = build_kernel(RING, altitudes=[60.0])
    np.testing.assert_allclose(np.rot90(kernel.probs[0]), kernel.probs[0], rtol=1e-6)
    np.testing.assert_allclose(kernel.probs[0][::-1], kernel.probs[0], rtol=1e-6)


def test_slice_index_picks_the_nearest_slice_and_ties_go_low():
    kernel = build_kernel(GAUSS, altitudes=[2.0, 4.0, 6.0])
    assert kernel.slice_index(2.9) == 0
    assert kernel.slice_index(3.0) == 0
    assert kernel.slice_index(3.1) == 1
    assert kernel.slice_index(100.0) == 2
    assert kernel.slice_index(0.5) == 0
    np.testing.assert_array_equal(kernel.slice_index(np.array([1.0, 5.0, 5.5])), [0, 1, 2])


def test_bad_kernel_settings_are_rejected():
    with pytest.raises(ConfigError):
        build_kernel(GAUSS, altitudes=[])
    with pytest.raises(ConfigError):
        build_kernel(GAUSS, altitudes=[4.0, 2.0])
    with pytest.raises(ConfigError):
        build_kernel(GAUSS, half_extent_m=21.0, altitudes=[2.0])
    with pytest.raises(ConfigError):
        GaussianImpactParams(0.0)
    with pytest.raises(ConfigError):
        RayleighImpactParams(0.2, -0.1)


def test_kernel_file_keeps_params_and_values(tmp_path):
    kernel = build_kernel(RING_NORMALIZED, altitudes=[10.0, 30.0])
    kernel.save(tmp_path / "k.vrtg")
    loaded = ImpactKernel.load(tmp_path / "k.vrtg")
    assert loaded.params == RING_NORMALIZED
    np.testing.assert_array_equal(loaded.altitudes, [10.0, 30.0])
    np.testing.assert_array_equal(loaded.probs, kernel.probs)
