import json
import math

import numpy as np
import pytest
from scipy import stats

from risk_terrain.errors import ConfigError
from risk_terrain.impact import (
    GaussianImpactParams,
    ImpactKernel,
    RayleighImpactParams,
    RayleighMode,
    build_kernel,
    gaussian_cell_prob,
)
from risk_terrain.oracle import (
    BLOCK_SIZE,
    compare_kernel,
    empirical_cell_prob,
    radial_cdf,
    sample_gaussian,
    sample_rayleigh,
    z_limit,
)

GAUSS = GaussianImpactParams(0.0244)
RING = RayleighImpactParams(0.2790, 0.0918, RayleighMode.NORMALIZED)
RING_RAW = RayleighImpactParams(0.2790, 0.0918, RayleighMode.PAPER_FAITHFUL)
SEED = 20240611


def test_gaussian_samples_have_the_right_moments():
    h0 = 100.0
    batch = sample_gaussian(GAUSS, (10.0, -5.0), h0, 200_000, SEED)
    sigma = math.sqrt(GAUSS.alpha) * h0
    mean = batch.points.mean(axis=0)
    np.testing.assert_allclose(mean, [10.0, -5.0], atol=4 * sigma / math.sqrt(batch.n))
    np.testing.assert_allclose(batch.points.var(axis=0), sigma ** 2, rtol=0.05)


def test_batches_do_not_depend_on_thread_count():
    n = 3 * BLOCK_SIZE + 17
    one = sample_rayleigh(RING, (0, 0), 80.0, n, SEED, stream=4, threads=1)
    many = sample_rayleigh(RING, (0, 0), 80.0, n, SEED, stream=4, threads=3)
    np.testing.assert_array_equal(one.points, many.points)


def test_streams_and_seeds_are_independent():
    a = sample_gaussian(GAUSS, (0, 0), 50.0, 1000, SEED, stream=0)
    b = sample_gaussian(GAUSS, (0, 0), 50.0, 1000, SEED, stream=1)
    c = sample_gaussian(GAUSS, (0, 0), 50.0, 1000, SEED + 1, stream=0)
    again = sample_gaussian(GAUSS, (0, 0), 50.0, 1000, SEED, stream=0)
    assert not np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    np.testing.assert_array_equal(a.points, again.points)


def test_bad_sample_settings():
    with pytest.raises(ConfigError):
        sample_gaussian(GAUSS, (0, 0), 50.0, 0, SEED)
    with pytest.raises(ConfigError):
        sample_gaussian(GAUSS, (0, 0), 50.0, 10, -1)


def test_radial_cdf_limits():
    assert radial_cdf(0.0, 27.9, 9.18) == 0.0
    assert radial_cdf(1e4, 27.9, 9.18) == pytest.approx(1.0, abs=1e-12)
    r = np.linspace(0, 30, 7)
    np.testing.assert_allclose(radial_cdf(r, 0.0, 3.0), 1 - np.exp(-r ** 2 / 18.0), atol=1e-12)


def test_ring_radii_follow_the_radial_law():
    h0 = 100.0
    batch = sample_rayleigh(RING, (0, 0), h0, 100_000, SEED)
    r = np.hypot(batch.points[:, 0], batch.points[:, 1])
    ring, sigma = RING.beta * h0, RING.gamma * h0
    statistic = stats.kstest(r, lambda x: radial_cdf(x, ring, sigma)).statistic
    assert statistic < 1.63 / math.sqrt(batch.n)

    counts, edges = np.histogram(r, bins=60, range=(0, ring + 4 * sigma))
    peak = 0.5 * (edges[np.argmax(counts)] + edges[np.argmax(counts) + 1])
    assert abs(peak - ring) < 0.1 * ring


def test_ring_angles_are_uniform():
    batch = sample_rayleigh(RING, (0, 0), 60.0, 100_000, SEED, stream=2)
    angles = np.arctan2(batch.points[:, 1], batch.points[:, 0])
    counts, _ = np.histogram(angles, bins=36, range=(-math.pi, math.pi))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_empirical_cell_probability():
    batch = sample_gaussian(GAUSS, (0, 0), 125.0, 1_000_000, SEED)
    p_hat, se = empirical_cell_prob(batch, (0.0, 0.0), 1.0)
    assert abs(p_hat - gaussian_cell_prob((0, 0), (0, 0), 125.0, GAUSS)) < 4 * se

    everything, zero_se = empirical_cell_prob(batch, (0.0, 0.0), 1e6)
    assert everything == 1.0 and zero_se == 0.0

    left, _ = empirical_cell_prob(batch, (-1.0, 0.0), 1.0)
    right, _ = empirical_cell_prob(batch, (1.0, 0.0), 1.0)
    wide, _ = empirical_cell_prob(batch, (0.0, 0.0), 2.0)
    assert left + right <= wide


def test_z_limit_grows_with_the_number_of_tests():
    assert z_limit(1) == 3.0
    assert 4.0 < z_limit(441) < 5.0
    assert z_limit(1000) > z_limit(100)


def test_gaussian_kernel_passes():
    kernel = build_kernel(GAUSS, altitudes=[50.0, 100.0, 150.0])
    report = compare_kernel(kernel, 1_000_000, SEED, threads=2)
    assert report.passed, report.to_json()
    assert [s.altitude_m for s in report.slices] == [50.0, 100.0, 150.0]
    assert not report.z_corrected


def test_normalized_ring_kernel_passes():
    kernel = build_kernel(RING, altitudes=[100.0])
    assert compare_kernel(kernel, 1_000_000, SEED).passed


def test_unnormalized_ring_kernel_needs_z_correction():
    kernel = build_kernel(RING_RAW, altitudes=[100.0])
    with pytest.raises(ConfigError, match="Z correction"):
        compare_kernel(kernel, 1000, SEED, z_correction=False)
    report = compare_kernel(kernel, 1_000_000, SEED)
    assert report.z_corrected
    assert report.passed


def test_corrupted_cell_is_reported():
    kernel = build_kernel(GAUSS, altitudes=[100.0])
    probs = kernel.probs.copy()
    m = kernel.radius_cells
    probs[0, m, m + 1] *= 1.5
    broken = ImpactKernel(kernel.params, kernel.half_extent_m, kernel.altitudes, kernel.delta_m, kernel.spacing_m, probs)

    report = compare_kernel(broken, 1_000_000, SEED)
    assert not report.passed
    failure = report.slices[0].failures[0]
    assert (failure.dx_m, failure.dy_m) == (2.0, 0.0)
    assert json.loads(report.to_json())["result"] == "FAIL"


def test_missing_altitude_is_a_config_error():
    kernel = build_kernel(GAUSS, altitudes=[50.0, 100.0])
    with pytest.raises(ConfigError, match="75"):
        compare_kernel(kernel, 1000, SEED, altitudes=[75.0])


def test_report_is_reproducible():
    kernel = build_kernel(GAUSS, altitudes=[60.0])
    first = compare_kernel(kernel, 50_000, SEED, threads=1).to_json()
    second = compare_kernel(kernel, 50_000, SEED, threads=4).to_json()
    assert first == second
    data = json.loads(first)
    assert data["seed"] == SEED and data["samples"] == 50_000
