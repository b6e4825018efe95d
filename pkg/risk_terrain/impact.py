"""Impact-location models and the precomputed per-column impact kernel.

A failure at altitude h0 above ground point p0 lands somewhere around p0. Two
radially symmetric densities are supported:

- Gaussian: isotropic bivariate normal, variance alpha * h0**2.
- Rayleigh ring: exp(-(r - beta*h0)**2 / (2 (gamma*h0)**2)) / (2 pi (gamma*h0)**2).
  As written this integrates to Z != 1 over the plane; ``mode="normalized"``
  divides by Z.

Cell probabilities integrate the density over a 2*delta square with an
adaptive midpoint rule, and the kernel stacks them for every altitude slice.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from risk_terrain.errors import ConfigError, DomainError
from risk_terrain.gridio import read_grid_file, write_grid_file

logger = logging.getLogger(__name__)

QUAD_TOLERANCE = 1e-9
QUAD_MAX_NODES = 64  # per axis, per cell

DEFAULT_HALF_EXTENT_M = 20.0
DEFAULT_DELTA_M = 1.0
DEFAULT_SPACING_M = 2.0


class RayleighMode(str, Enum):
    PAPER_FAITHFUL = "paper_faithful"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class GaussianImpactParams:
    alpha: float = 0.0244

    kind = "gaussian"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"impact.alpha: must be > 0, got {self.alpha}")

    def to_dict(self) -> dict:
        return {"model": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class RayleighImpactParams:
    beta: float = 0.2790
    gamma: float = 0.0918
    mode: RayleighMode = RayleighMode.PAPER_FAITHFUL

    kind = "rayleigh"

    def __post_init__(self):
        object.__setattr__(self, "mode", RayleighMode(self.mode))
        if not self.beta >= 0:
            raise ConfigError(f"impact.beta: must be >= 0, got {self.beta}")
        if not self.gamma > 0:
            raise ConfigError(f"impact.gamma: must be > 0, got {self.gamma}")

    @property
    def normalization(self) -> float:
        """Plane integral of the unnormalized ring density; independent of h0."""
        return rayleigh_normalization(self.beta, self.gamma)

    def to_dict(self) -> dict:
        return {"model": self.kind, "beta": self.beta, "gamma": self.gamma, "mode": self.mode.value}


ImpactParams = GaussianImpactParams | RayleighImpactParams


def impact_params_from_dict(data: dict) -> ImpactParams:
    if data.get("model") == "gaussian":
        return GaussianImpactParams(alpha=float(data["alpha"]))
    if data.get("model") == "rayleigh":
        return RayleighImpactParams(
            beta=float(data["beta"]), gamma=float(data["gamma"]), mode=data.get("mode", RayleighMode.PAPER_FAITHFUL)
        )
    raise ConfigError(f"impact.model: must be 'gaussian' or 'rayleigh', got {data.get('model')!r}")


def _check_altitude(h0: float) -> None:
    if not h0 > 0:
        raise DomainError(f"failure altitude must be > 0, got {h0}")


def _scalar(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def _offset(p, p0) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(p, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    return d[..., 0], d[..., 1]


def _gaussian(dx: np.ndarray, dy: np.ndarray, h0: float, params: GaussianImpactParams) -> np.ndarray:
    variance = params.alpha * h0 * h0
    return np.exp(-(dx * dx + dy * dy) / (2.0 * variance)) / (2.0 * math.pi * variance)


def _rayleigh(dx: np.ndarray, dy: np.ndarray, h0: float, params: RayleighImpactParams) -> np.ndarray:
    ring = params.beta * h0
    sigma = params.gamma * h0
    r = np.hypot(dx, dy)
    f = np.exp(-((r - ring) ** 2) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)
    if params.mode is RayleighMode.NORMALIZED:
        f = f / params.normalization
    return f


def _density(params: ImpactParams, dx: np.ndarray, dy: np.ndarray, h0: float) -> np.ndarray:
    if isinstance(params, GaussianImpactParams):
        return _gaussian(dx, dy, h0, params)
    return _rayleigh(dx, dy, h0, params)


def gaussian_density(p, p0, h0: float, params: GaussianImpactParams):
    """Impact density per m² at ground point ``p`` for a failure above ``p0``."""
    _check_altitude(h0)
    return _scalar(_gaussian(*_offset(p, p0), h0, params))


def rayleigh_density(p, p0, h0: float, params: RayleighImpactParams):
    _check_altitude(h0)
    return _scalar(_rayleigh(*_offset(p, p0), h0, params))


def rayleigh_normalization(delta_disp: float, sigma: float) -> float:
    """Plane integral Z of the unnormalized ring density with ring radius delta_disp and width sigma.

    Only the ratio matters, so it also accepts (beta, gamma).
    """
    if not sigma > 0 or not delta_disp >= 0:
        raise DomainError(f"need sigma > 0 and ring radius >= 0, got {sigma}, {delta_disp}")
    ratio = delta_disp / sigma
    return math.exp(-0.5 * ratio * ratio) + ratio * math.sqrt(2.0 * math.pi) * float(norm.cdf(ratio))


def integrate_cells(params: ImpactParams, cx, cy, h0: float, delta: float) -> np.ndarray:
    """Probability mass of the 2*delta squares centered at offsets (cx, cy) from the failure column.

    Adaptive midpoint rule: each level splits every sub-square into four, a
    cell stops once two successive estimates differ by less than
    QUAD_TOLERANCE, and QUAD_MAX_NODES per axis is the hard cap. Each cell is
    refined independently, so its value does not depend on the batch it is in.
    """
    _check_altitude(h0)
    if not delta > 0:
        raise DomainError(f"cell half side must be > 0, got {delta}")
    cx = np.asarray(cx, dtype=np.float64).ravel()
    cy = np.asarray(cy, dtype=np.float64).ravel()
    result = np.empty(cx.size)
    pending = np.arange(cx.size)
    previous = None
    n = 1
    while pending.size:
        step = 2.0 * delta / n
        nodes = -delta + (np.arange(n) + 0.5) * step
        gx = cx[pending, None, None] + nodes[None, None, :]
        gy = cy[pending, None, None] + nodes[None, :, None]
        values = _density(params, gx, gy, h0).reshape(pending.size, n * n)
        estimate = values.sum(axis=1) * (step * step)
        if n >= QUAD_MAX_NODES:
            done = np.ones(pending.size, dtype=bool)
        elif previous is None:
            done = np.zeros(pending.size, dtype=bool)
        else:
            done = np.abs(estimate - previous) < QUAD_TOLERANCE
        result[pending[done]] = estimate[done]
        pending = pending[~done]
        previous = estimate[~done]
        n *= 2
    return np.clip(result, 0.0, 1.0)


def gaussian_cell_prob(p, p0, h0: float, params: GaussianImpactParams, delta: float = DEFAULT_DELTA_M) -> float:
    dx, dy = _offset(p, p0)
    return float(integrate_cells(params, dx, dy, h0, delta)[0])


def rayleigh_cell_prob(p, p0, h0: float, params: RayleighImpactParams, delta: float = DEFAULT_DELTA_M) -> float:
    dx, dy = _offset(p, p0)
    return float(integrate_cells(params, dx, dy, h0, delta)[0])


def cell_prob(params: ImpactParams, p, p0, h0: float, delta: float = DEFAULT_DELTA_M) -> float:
    if isinstance(params, GaussianImpactParams):
        return gaussian_cell_prob(p, p0, h0, params, delta)
    return rayleigh_cell_prob(p, p0, h0, params, delta)


def default_altitudes(step_m: float = 2.0, top_m: float = 200.0) -> np.ndarray:
    count = int(round(top_m / step_m))
    return step_m * np.arange(1, count + 1)


def kernel_header(params: ImpactParams, half_extent_m, altitudes, delta_m, spacing_m) -> dict:
    """Every setting a kernel depends on; two kernels with equal headers hold the same probabilities."""
    return {
        "params": params.to_dict(),
        "half_extent_m": float(half_extent_m),
        "altitudes_m": [float(a) for a in altitudes],
        "delta_m": float(delta_m),
        "spacing_m": float(spacing_m),
    }


@dataclass(frozen=True, eq=False)
class ImpactKernel:
    """Cell-impact probabilities around a failure column, one slice per failure altitude.

    ``probs[k, iy, ix]`` is the probability that a failure at ``altitudes[k]``
    lands in the cell whose center is at offset ``(offsets[ix], offsets[iy])``
    from the column.
    """

    params: ImpactParams
    half_extent_m: float
    altitudes: np.ndarray
    delta_m: float
    spacing_m: float
    probs: np.ndarray

    @property
    def radius_cells(self) -> int:
        return (self.probs.shape[-1] - 1) // 2

    @property
    def offsets(self) -> np.ndarray:
        m = self.radius_cells
        return np.arange(-m, m + 1) * self.spacing_m

    def slice_index(self, heights):
        """Index of the nearest altitude slice; ties go to the lower slice."""
        alts = self.altitudes
        h = np.asarray(heights, dtype=np.float64)
        if alts.size == 1:
            return np.zeros(h.shape, dtype=np.intp) if h.ndim else 0
        upper = np.clip(np.searchsorted(alts, h), 1, alts.size - 1)
        lower = upper - 1
        idx = np.where(h - alts[lower] <= alts[upper] - h, lower, upper)
        return int(idx) if idx.ndim == 0 else idx

    def header(self) -> dict:
        return kernel_header(self.params, self.half_extent_m, self.altitudes, self.delta_m, self.spacing_m)

    def save(self, path, meta: dict | None = None) -> str:
        return write_grid_file(path, "kernel", {"probs": self.probs}, meta={**self.header(), **(meta or {})})

    @classmethod
    def load(cls, path) -> "ImpactKernel":
        grid_file = read_grid_file(path, kind="kernel")
        meta = grid_file.meta
        return cls(
            params=impact_params_from_dict(meta["params"]),
            half_extent_m=float(meta["half_extent_m"]),
            altitudes=np.asarray(meta["altitudes_m"], dtype=np.float64),
            delta_m=float(meta["delta_m"]),
            spacing_m=float(meta["spacing_m"]),
            probs=grid_file.arrays["probs"],
        )


def build_kernel(
    params: ImpactParams,
    half_extent_m: float = DEFAULT_HALF_EXTENT_M,
    altitudes=None,
    delta_m: float = DEFAULT_DELTA_M,
    spacing_m: float = DEFAULT_SPACING_M,
    threads: int = 1,
) -> ImpactKernel:
    altitudes = default_altitudes() if altitudes is None else np.asarray(altitudes, dtype=np.float64)
    if altitudes.size == 0:
        raise ConfigError("kernel altitudes: list is empty")
    if np.any(altitudes <= 0) or np.any(np.diff(altitudes) <= 0):
        raise ConfigError("kernel altitudes: must be positive and strictly increasing")
    if not spacing_m > 0 or not delta_m > 0:
        raise ConfigError("kernel spacing and delta must be > 0")
    cells = half_extent_m / spacing_m
    if half_extent_m < 0 or abs(cells - round(cells)) > 1e-9:
        raise ConfigError(f"kernel half extent {half_extent_m} m is not a multiple of the spacing {spacing_m} m")

    m = int(round(cells))
    offsets = np.arange(-m, m + 1) * spacing_m
    ox, oy = np.meshgrid(offsets, offsets)

    def build_slice(h0: float) -> np.ndarray:
        return integrate_cells(params, ox, oy, float(h0), delta_m).reshape(ox.shape)

    with ThreadPoolExecutor(max_workers=max(1, threads), thread_name_prefix="kernel") as pool:
        slices = list(pool.map(build_slice, altitudes))
    probs = np.stack(slices).astype(np.float32)
    logger.info(
        "Built %s kernel: %d slices (%g..%g m), %dx%d cells",
        params.kind, altitudes.size, altitudes[0], altitudes[-1], ox.shape[0], ox.shape[1],
    )
    return ImpactKernel(params, float(half_extent_m), altitudes, float(delta_m), float(spacing_m), probs)
