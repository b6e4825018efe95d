"""Monte Carlo ground truth for impact-kernel cell probabilities.

Random numbers come from a counter-based Philox stream keyed by (seed, stream)
and split into fixed blocks by the counter, so a batch is identical however
many threads draw it.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from risk_terrain.errors import ConfigError
from risk_terrain.impact import (
    GaussianImpactParams,
    ImpactKernel,
    ImpactParams,
    RayleighImpactParams,
    RayleighMode,
    rayleigh_normalization,
)

logger = logging.getLogger(__name__)

BLOCK_SIZE = 65536
RADIAL_TABLE_NODES = 2 ** 16 + 1
MIN_EXPECTED_COUNT = 10.0
FAMILY_ALPHA = 0.0027  # two-sided tail beyond 3 standard errors
BASE_Z_LIMIT = 3.0


@dataclass(frozen=True, eq=False)
class SampleBatch:
    params: ImpactParams
    p0: tuple[float, float]
    h0: float
    n: int
    seed: int
    stream: int
    points: np.ndarray  # (n, 2) ground coordinates


def _generator(seed: int, stream: int, block: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, block, 0]))


def _draw_blocks(n: int, seed: int, stream: int, threads: int, draw) -> np.ndarray:
    if n < 1:
        raise ConfigError(f"oracle.samples: must be >= 1, got {n}")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"oracle.seed: must be a 64-bit unsigned integer, got {seed}")
    sizes = [min(BLOCK_SIZE, n - start) for start in range(0, n, BLOCK_SIZE)]

    def run(block: int) -> np.ndarray:
        return draw(_generator(seed, stream, block), sizes[block])

    with ThreadPoolExecutor(max_workers=max(1, threads), thread_name_prefix="oracle") as pool:
        return np.concatenate(list(pool.map(run, range(len(sizes)))))


def sample_gaussian(
    params: GaussianImpactParams, p0, h0: float, n: int, seed: int, stream: int = 0, threads: int = 1
) -> SampleBatch:
    sigma = math.sqrt(params.alpha) * h0
    center = np.asarray(p0, dtype=np.float64)
    points = _draw_blocks(n, seed, stream, threads, lambda rng, k: rng.standard_normal((k, 2)) * sigma + center)
    return SampleBatch(params, tuple(center), float(h0), n, seed, stream, points)


def radial_cdf(r, delta_disp: float, sigma: float):
    """CDF of the impact distance for the ring law, i.e. of r*exp(-(r-D)^2/(2 s^2)) / (s^2 Z)."""
    r = np.asarray(r, dtype=np.float64)
    z = rayleigh_normalization(delta_disp, sigma)
    s2 = sigma * sigma
    gauss = s2 * (math.exp(-delta_disp ** 2 / (2.0 * s2)) - np.exp(-((r - delta_disp) ** 2) / (2.0 * s2)))
    ring = delta_disp * sigma * math.sqrt(2.0 * math.pi) * (norm.cdf((r - delta_disp) / sigma) - norm.cdf(-delta_disp / sigma))
    cdf = np.clip((gauss + ring) / (s2 * z), 0.0, 1.0)
    return float(cdf) if cdf.ndim == 0 else cdf


def radial_table(delta_disp: float, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """(cdf, radius) nodes for inverse-CDF sampling, covering the ring out to 12 widths."""
    radius = np.linspace(0.0, delta_disp + 12.0 * sigma, RADIAL_TABLE_NODES)
    cdf = np.maximum.accumulate(radial_cdf(radius, delta_disp, sigma))
    cdf[-1] = 1.0
    return cdf, radius


def sample_rayleigh(
    params: RayleighImpactParams, p0, h0: float, n: int, seed: int, stream: int = 0, threads: int = 1
) -> SampleBatch:
    """Draws from the normalized ring law whatever the params' mode; samples cannot follow an improper density."""
    ring = params.beta * h0
    sigma = params.gamma * h0
    cdf, radius = radial_table(ring, sigma)
    center = np.asarray(p0, dtype=np.float64)

    def draw(rng: np.random.Generator, k: int) -> np.ndarray:
        u = rng.random((k, 2))
        angle = 2.0 * math.pi * u[:, 0]
        r = np.interp(u[:, 1], cdf, radius)
        return center + np.column_stack((r * np.cos(angle), r * np.sin(angle)))

    points = _draw_blocks(n, seed, stream, threads, draw)
    return SampleBatch(params, tuple(center), float(h0), n, seed, stream, points)


def sample(params: ImpactParams, p0, h0: float, n: int, seed: int, stream: int = 0, threads: int = 1) -> SampleBatch:
    if isinstance(params, GaussianImpactParams):
        return sample_gaussian(params, p0, h0, n, seed, stream, threads)
    return sample_rayleigh(params, p0, h0, n, seed, stream, threads)


def empirical_cell_prob(batch: SampleBatch, cell_center, delta: float) -> tuple[float, float]:
    """Fraction of points in the square [c - delta, c + delta) on both axes, and its standard error."""
    cx, cy = cell_center
    x = batch.points[:, 0] - cx
    y = batch.points[:, 1] - cy
    inside = (x >= -delta) & (x < delta) & (y >= -delta) & (y < delta)
    p_hat = np.count_nonzero(inside) / batch.n
    return p_hat, math.sqrt(p_hat * (1.0 - p_hat) / batch.n)


def _cell_counts(batch: SampleBatch, kernel: ImpactKernel) -> np.ndarray:
    """Sample counts per kernel cell, shaped like a kernel slice (iy, ix)."""
    offsets = kernel.offsets
    delta = kernel.delta_m
    x = batch.points[:, 0] - batch.p0[0]
    y = batch.points[:, 1] - batch.p0[1]
    if math.isclose(2.0 * delta, kernel.spacing_m):
        edges = np.append(offsets - delta, offsets[-1] + delta)
        counts, _, _ = np.histogram2d(y, x, bins=[edges, edges])
        return counts
    counts = np.zeros((offsets.size, offsets.size))
    for iy, oy in enumerate(offsets):
        for ix, ox in enumerate(offsets):
            p_hat, _ = empirical_cell_prob(batch, (batch.p0[0] + ox, batch.p0[1] + oy), delta)
            counts[iy, ix] = p_hat * batch.n
    return counts


def z_limit(tests: int) -> float:
    """Per-cell z limit holding the family-wise false-alarm rate of one 3-SE test."""
    return max(BASE_Z_LIMIT, float(norm.isf(FAMILY_ALPHA / (2.0 * max(tests, 1)))))


@dataclass
class CellFailure:
    altitude_m: float
    dx_m: float | None  # None for the pooled low-count cells
    dy_m: float | None
    expected: float
    empirical: float
    z: float


@dataclass
class SliceReport:
    altitude_m: float
    stream: int
    cells_tested: int
    cells_pooled: int
    max_z: float
    z_limit: float
    failures: list[CellFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass
class KernelReport:
    model: dict
    samples: int
    seed: int
    z_corrected: bool
    slices: list[SliceReport]
    scenario_sha256: str = ""

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.slices)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["result"] = "PASS" if self.passed else "FAIL"
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _z(expected: float, empirical: float, n: int) -> float:
    se = math.sqrt(expected * (1.0 - expected) / n) if 0.0 < expected < 1.0 else 0.0
    if se == 0.0:
        return 0.0 if empirical == expected else math.inf
    return abs(empirical - expected) / se


def _compare_slice(kernel: ImpactKernel, k: int, batch: SampleBatch, scale: float) -> SliceReport:
    n = batch.n
    altitude = float(kernel.altitudes[k])
    expected = kernel.probs[k].astype(np.float64) / scale
    empirical = _cell_counts(batch, kernel) / n
    offsets = kernel.offsets

    tested = expected * n >= MIN_EXPECTED_COUNT
    pooled = ~tested
    units = int(np.count_nonzero(tested)) + (1 if pooled.any() else 0)
    limit = z_limit(units)

    failures = []
    max_z = 0.0
    for iy, ix in np.argwhere(tested):
        z = _z(expected[iy, ix], empirical[iy, ix], n)
        max_z = max(max_z, z)
        if z > limit:
            failures.append(CellFailure(altitude, float(offsets[ix]), float(offsets[iy]), float(expected[iy, ix]), float(empirical[iy, ix]), z))
    if pooled.any():
        pooled_expected = float(expected[pooled].sum())
        pooled_empirical = float(empirical[pooled].sum())
        z = _z(pooled_expected, pooled_empirical, n)
        max_z = max(max_z, z)
        if z > limit:
            failures.append(CellFailure(altitude, None, None, pooled_expected, pooled_empirical, z))
    return SliceReport(altitude, batch.stream, int(np.count_nonzero(tested)), int(np.count_nonzero(pooled)), max_z, limit, failures)


def compare_kernel(
    kernel: ImpactKernel,
    n: int,
    seed: int,
    altitudes=None,
    z_correction: bool = True,
    threads: int = 1,
    scenario_hash: str = "",
) -> KernelReport:
    """Check every cell of the selected kernel slices against an n-sample empirical frequency.

    Unnormalized ring kernels integrate to Z != 1; their values are divided
    by Z before comparison, which requires ``z_correction``.
    """
    params = kernel.params
    scale = 1.0
    if isinstance(params, RayleighImpactParams) and params.mode is RayleighMode.PAPER_FAITHFUL:
        if not z_correction:
            raise ConfigError("oracle: an unnormalized (paper_faithful) ring kernel can only be compared with Z correction")
        scale = params.normalization

    if altitudes is None:
        indices = list(range(kernel.altitudes.size))
    else:
        indices = []
        for h in altitudes:
            k = kernel.slice_index(float(h))
            if not math.isclose(kernel.altitudes[k], float(h)):
                raise ConfigError(f"oracle.altitudes: kernel has no slice at {h} m")
            indices.append(k)

    slices = []
    for k in indices:
        batch = sample(params, (0.0, 0.0), float(kernel.altitudes[k]), n, seed, stream=k, threads=threads)
        report = _compare_slice(kernel, k, batch, scale)
        logger.info(
            "Oracle slice %g m: max z %.2f (limit %.2f), %d cells tested, %d pooled -> %s",
            report.altitude_m, report.max_z, report.z_limit, report.cells_tested, report.cells_pooled,
            "PASS" if report.passed else "FAIL",
        )
        for failure in report.failures:
            logger.warning("Oracle mismatch at %g m, cell (%s, %s): expected %.3e, empirical %.3e, z %.1f",
                           failure.altitude_m, failure.dx_m, failure.dy_m, failure.expected, failure.empirical, failure.z)
        slices.append(report)
    return KernelReport(params.to_dict(), n, seed, scale != 1.0, slices, scenario_hash)
