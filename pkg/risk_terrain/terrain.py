"""Cumulative risk volume, no-fly terrains, clearance fields and terrain fusion.

The cumulative risk at an air voxel is the largest per-hour expected-harm
product over the ground cells a failure there could hit:

    R(p0) = max_p  lambda_F * P_R(h0) * P_G(p | p0) * P_H(p) * N(p)

P_G comes from the precomputed impact kernel, so the max only runs over the
kernel footprint around the column.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from risk_terrain.errors import ConfigError, DomainError, ExtentError
from risk_terrain.exposure import ExposureGrid, ExposureModel, build_exposure_grid, normalize_time_label
from risk_terrain.grid import (
    GridSpec,
    GroundClass,
    GroundUseGrid,
    OccupancyMask,
    ScalarField,
    UrbanModel,
    classify_ground,
    rasterize_occupancy,
)
from risk_terrain.gridio import read_grid_file, write_grid_file
from risk_terrain.hazard import REGULATORY_CEILING_M, EoV, HazardChain
from risk_terrain.impact import ImpactKernel, ImpactParams, build_kernel, cell_prob, default_altitudes, kernel_header

logger = logging.getLogger(__name__)

BLOCKED = -1.0

_EOV_OF_CLASS = {GroundClass.PEDESTRIAN: EoV.PEDESTRIAN, GroundClass.VEHICLE: EoV.VEHICLE}


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    urban_model: UrbanModel
    grid: GridSpec
    impact: ImpactParams
    hazard: HazardChain = field(default_factory=HazardChain)
    exposure: ExposureModel = field(default_factory=ExposureModel)
    time_label: str = "5pm"
    thresholds: tuple[float, ...] = (1e-6, 1e-7, 1e-8)
    ceiling_m: float = 200.0
    kernel_half_extent_m: float = 20.0
    kernel_delta_m: float = 1.0
    elevation: ScalarField | None = None
    density_override: ScalarField | None = None
    label: str = ""
    scenario_hash: str = ""

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise ConfigError("grid: scenario needs a 3D grid")
        object.__setattr__(self, "time_label", normalize_time_label(self.time_label))
        thresholds = tuple(float(t) for t in self.thresholds)
        if not thresholds:
            raise ConfigError("thresholds: at least one risk threshold is required")
        if any(not 0 < t < 1 for t in thresholds):
            raise ConfigError(f"thresholds: every threshold must be in (0, 1), got {list(thresholds)}")
        if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigError("thresholds: must be strictly decreasing")
        object.__setattr__(self, "thresholds", thresholds)
        if self.grid.centers(2)[-1] > self.ceiling_m + 1e-9:
            raise ConfigError(f"grid: top voxel lies above the ceiling {self.ceiling_m} m")

    @property
    def kernel_altitudes(self) -> np.ndarray:
        return default_altitudes(self.grid.spacing[2], self.ceiling_m)

    def kernel_header(self) -> dict:
        return kernel_header(
            self.impact, self.kernel_half_extent_m, self.kernel_altitudes, self.kernel_delta_m, self.grid.spacing[0]
        )

    def build_kernel(self, threads: int = 1) -> ImpactKernel:
        return build_kernel(
            self.impact,
            half_extent_m=self.kernel_half_extent_m,
            altitudes=self.kernel_altitudes,
            delta_m=self.kernel_delta_m,
            spacing_m=self.grid.spacing[0],
            threads=threads,
        )


@dataclass(frozen=True, eq=False)
class RiskVolume:
    """R^c per voxel (expected harm events per flight hour); blocked voxels hold BLOCKED."""

    spec: GridSpec
    values: np.ndarray
    blocked: np.ndarray
    classes: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def free_max(self) -> float:
        free = self.values[~self.blocked]
        return float(free.max()) if free.size else 0.0

    def save(self, path) -> str:
        arrays = {"risk": self.values, "blocked": self.blocked, "ground_class": self.classes.astype(np.uint8)}
        return write_grid_file(path, "risk_volume", arrays, self.spec, self.meta)

    @classmethod
    def load(cls, path) -> "RiskVolume":
        grid_file = read_grid_file(path, kind="risk_volume")
        return cls(
            spec=grid_file.spec,
            values=grid_file.arrays["risk"].astype(np.float64),
            blocked=grid_file.arrays["blocked"],
            classes=grid_file.arrays["ground_class"],
            meta=grid_file.meta,
        )


@dataclass(frozen=True, eq=False)
class NoFlyTerrain:
    spec: GridSpec
    excluded: np.ndarray
    threshold: float | None = None
    kind: str = "risk"
    scenario_hash: str = ""
    inputs: tuple[str, ...] = ()

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.excluded))

    def save(self, path, meta: dict | None = None) -> str:
        header = {
            "terrain_kind": self.kind,
            "threshold": self.threshold,
            "scenario_sha256": self.scenario_hash,
            "inputs": list(self.inputs),
            **(meta or {}),
        }
        return write_grid_file(path, "terrain", {"excluded": self.excluded}, self.spec, header)

    @classmethod
    def load(cls, path) -> "NoFlyTerrain":
        grid_file = read_grid_file(path, kind="terrain")
        meta = grid_file.meta
        return cls(
            spec=grid_file.spec,
            excluded=grid_file.arrays["excluded"],
            threshold=meta.get("threshold"),
            kind=meta.get("terrain_kind", "risk"),
            scenario_hash=meta.get("scenario_sha256", ""),
            inputs=tuple(meta.get("inputs", ())),
        )


def _quiet_zones(spec: GridSpec, zones, where: str) -> np.ndarray:
    if not isinstance(zones, list):
        raise ConfigError(f"{where}.zones: expected a list of {{min, max}} boxes")
    z = spec.centers(2)[:, None, None]
    y = spec.centers(1)[None, :, None]
    x = spec.centers(0)[None, None, :]
    excluded = np.zeros(spec.shape, dtype=bool)
    for i, zone in enumerate(zones):
        try:
            lo = [float(v) for v in zone["min"]]
            hi = [float(v) for v in zone["max"]]
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{where}.zones[{i}]: expected min and max as [x, y, z]") from None
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise ConfigError(f"{where}.zones[{i}]: min must be <= max on all three axes")
        excluded |= (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1]) & (z >= lo[2]) & (z <= hi[2])
    return excluded


def load_acoustic_terrain(path) -> NoFlyTerrain:
    """Import an externally computed acoustic terrain as an opaque voxel grid.

    Accepts a grid file (a terrain, or a 3D raster where nonzero means excluded)
    or a JSON document with a grid and axis-aligned quiet zones, where a voxel is
    excluded when its center lies inside a zone. The SHA-256 of the file takes
    the place of the scenario hash.
    """
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("grid"), dict):
            raise ConfigError(f"{path}: expected an object with a grid")
        grid = doc["grid"]
        try:
            spec = GridSpec(tuple(grid["origin"]), tuple(grid["spacing"]), tuple(grid["dims"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: grid needs origin, spacing and dims ({exc})") from exc
        if spec.ndim != 3:
            raise ConfigError(f"{path}: acoustic grid must be 3D")
        excluded = _quiet_zones(spec, doc.get("zones", []), str(path))
    else:
        grid_file = read_grid_file(path)
        if grid_file.kind == "terrain":
            excluded = grid_file.arrays["excluded"].astype(bool)
        elif grid_file.kind == "raster" and "values" in grid_file.arrays:
            excluded = grid_file.arrays["values"] != 0
        else:
            raise ConfigError(f"{path}: expected a terrain or raster file, found {grid_file.kind}")
        spec = grid_file.spec
        if spec is None or spec.ndim != 3 or excluded.shape != spec.shape:
            raise ConfigError(f"{path}: acoustic terrain needs a 3D grid matching its values")
    terrain = NoFlyTerrain(spec, excluded, None, "acoustic", digest, (f"file:{path.name}",))
    logger.info("Imported acoustic terrain %s: %d voxels excluded", path, terrain.count)
    return terrain


class ClearanceStatus(IntEnum):
    OPEN = 0
    RESTRICTED = 1
    CLOSED = 2


@dataclass(frozen=True, eq=False)
class ClearanceField:
    """Minimum clearance altitude per column; NaN where the column is closed to the ceiling."""

    spec: GridSpec
    values: np.ndarray
    status: np.ndarray
    ceiling_m: float


def individual_risk(exposure, lambda_f, p_r, p_g, p_h):
    """Expected harm events per flight hour from one (failure voxel, ground cell) pair."""
    return (((lambda_f * p_r) * p_g) * p_h) * exposure


# --- assembly ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiskInputs:
    cfg: ScenarioConfig
    occupancy: OccupancyMask
    ground: GroundUseGrid
    exposure: ExposureGrid
    kernel: ImpactKernel
    elevation: np.ndarray


def prepare_inputs(cfg: ScenarioConfig, kernel: ImpactKernel | None = None, threads: int = 1) -> RiskInputs:
    spec = cfg.grid
    spec2 = spec.horizontal()
    if spec.spacing[0] != spec.spacing[1]:
        raise ConfigError(f"grid: horizontal spacing must be square, got {spec.spacing[:2]}")
    if kernel is None:
        kernel = cfg.build_kernel(threads)
    if kernel.spacing_m != spec.spacing[0]:
        raise ConfigError(
            f"kernel spacing {kernel.spacing_m} m does not match the grid spacing {spec.spacing[:2]}"
        )
    if kernel.params != cfg.impact:
        raise ConfigError("kernel was built for different impact parameters than the scenario")
    if kernel.delta_m != cfg.kernel_delta_m:
        raise ConfigError(f"kernel delta {kernel.delta_m} m does not match kernel.delta_m {cfg.kernel_delta_m} m")
    if kernel.half_extent_m != cfg.kernel_half_extent_m:
        raise ConfigError(
            f"kernel half extent {kernel.half_extent_m} m does not match kernel.half_extent_m {cfg.kernel_half_extent_m} m"
        )
    if cfg.ceiling_m > kernel.altitudes[-1] + 1e-9:
        raise ConfigError(f"ceiling {cfg.ceiling_m} m exceeds the top kernel slice {kernel.altitudes[-1]} m")

    occupancy = rasterize_occupancy(cfg.urban_model, spec, cfg.elevation)
    ground = classify_ground(cfg.urban_model, spec2)
    exposure = build_exposure_grid(ground, cfg.exposure, cfg.time_label, cfg.density_override)
    if exposure.spec != spec2:
        raise ExtentError("exposure grid is not aligned with the voxel grid")
    elevation = np.zeros(spec2.shape) if cfg.elevation is None else cfg.elevation.values
    return RiskInputs(cfg, occupancy, ground, exposure, kernel, elevation)


def _per_unique(values: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function once per distinct value."""
    unique, inverse = np.unique(values, return_inverse=True)
    mapped = np.array([fn(float(v)) for v in unique], dtype=np.float64)
    return mapped[inverse].reshape(values.shape)


@dataclass(frozen=True, eq=False)
class _Level:
    p_r: np.ndarray  # per failure column
    p_h: np.ndarray  # per impact cell
    exposure: np.ndarray  # per impact cell
    slice_index: np.ndarray  # per impact cell


def _level(inputs: RiskInputs, k: int) -> _Level:
    cfg = inputs.cfg
    chain = cfg.hazard
    z = cfg.grid.centers(2)[k]
    height = z - inputs.elevation
    above = height > 0

    p_r = _per_unique(height, lambda h: chain.p_unrecoverable(h) if h > 0 else 0.0)
    classes = inputs.ground.classes
    p_h = np.zeros(height.shape)
    for ground_class, eov in _EOV_OF_CLASS.items():
        cells = classes == ground_class
        if cells.any():
            p_h[cells] = _per_unique(height[cells], lambda h, eov=eov: chain.harm_probability(eov, h))
    exposure = np.where(above, inputs.exposure.counts, 0.0)
    slice_index = np.asarray(inputs.kernel.slice_index(np.where(above, height, inputs.kernel.altitudes[0])))
    return _Level(p_r, p_h, exposure, slice_index)


def _gather_level(inputs: RiskInputs, k: int, probs: np.ndarray) -> np.ndarray:
    level = _level(inputs, k)
    lam = inputs.cfg.hazard.failure.lambda_per_hour
    m = inputs.kernel.radius_cells
    ny, nx = level.p_r.shape
    exposure = np.pad(level.exposure, m)
    p_h = np.pad(level.p_h, m)
    slices = np.pad(level.slice_index, m)
    used = np.unique(level.slice_index)
    uniform = used.size == 1
    first = int(used[0])

    out = np.zeros((ny, nx))
    for iy in range(2 * m + 1):
        rows = slice(iy, iy + ny)  # impact row = column row + (iy - m)
        for ix in range(2 * m + 1):
            if not probs[used, iy, ix].any():
                continue  # no mass at this offset in any slice in use
            cols = slice(ix, ix + nx)
            p_g = probs[first, iy, ix] if uniform else probs[slices[rows, cols], iy, ix]
            term = individual_risk(exposure[rows, cols], lam, level.p_r, p_g, p_h[rows, cols])
            np.maximum(out, term, out=out)
    return out


def _finish(inputs: RiskInputs, values: np.ndarray) -> RiskVolume:
    cfg = inputs.cfg
    blocked = inputs.occupancy.blocked
    values = np.where(blocked, BLOCKED, values)
    meta = {
        "scenario_sha256": cfg.scenario_hash,
        "label": cfg.label,
        "time_label": cfg.time_label,
        "lambda_per_hour": cfg.hazard.failure.lambda_per_hour,
        "impact": cfg.impact.to_dict(),
        "ceiling_m": cfg.ceiling_m,
    }
    return RiskVolume(cfg.grid, values, blocked, inputs.ground.classes, meta)


def cumulative_risk_volume(
    cfg: ScenarioConfig,
    kernel: ImpactKernel | None = None,
    threads: int = 1,
    inputs: RiskInputs | None = None,
) -> RiskVolume:
    """Gather form: every air voxel takes the max over the ground cells in its kernel footprint."""
    inputs = inputs or prepare_inputs(cfg, kernel, threads)
    probs = inputs.kernel.probs.astype(np.float64)
    nz = cfg.grid.dims[2]
    with ThreadPoolExecutor(max_workers=max(1, threads), thread_name_prefix="gather") as pool:
        levels = list(pool.map(lambda k: _gather_level(inputs, k, probs), range(nz)))
    volume = _finish(inputs, np.stack(levels))
    logger.info(
        "Risk volume %s at %s, lambda %g/h: max %.3e per flight hour",
        cfg.label or "scenario", cfg.time_label, cfg.hazard.failure.lambda_per_hour, volume.free_max,
    )
    return volume


def scatter_risk_volume(cfg: ScenarioConfig, kernel: ImpactKernel | None = None, inputs: RiskInputs | None = None) -> RiskVolume:
    """Scatter form: every exposed ground cell pushes its contribution up into the columns around it."""
    inputs = inputs or prepare_inputs(cfg, kernel)
    probs = inputs.kernel.probs.astype(np.float64)
    lam = cfg.hazard.failure.lambda_per_hour
    m = inputs.kernel.radius_cells
    nz, ny, nx = cfg.grid.shape
    values = np.zeros((nz, ny, nx))
    for k in range(nz):
        level = _level(inputs, k)
        out = values[k]
        for cy, cx in np.argwhere(level.exposure > 0):
            flipped = probs[level.slice_index[cy, cx], ::-1, ::-1]
            y0, y1 = max(0, cy - m), min(ny, cy + m + 1)
            x0, x1 = max(0, cx - m), min(nx, cx + m + 1)
            p_g = flipped[y0 - cy + m:y1 - cy + m, x0 - cx + m:x1 - cx + m]
            term = individual_risk(level.exposure[cy, cx], lam, level.p_r[y0:y1, x0:x1], p_g, level.p_h[cy, cx])
            np.maximum(out[y0:y1, x0:x1], term, out=out[y0:y1, x0:x1])
    return _finish(inputs, values)


def reference_risk_volume(cfg: ScenarioConfig, kernel: ImpactKernel | None = None) -> RiskVolume:
    """Direct evaluation of the max over ground cells, one pair at a time. For small grids only.

    Pair probabilities are integrated from scratch for the kernel slice nearest
    to the fall height and rounded to float32, the kernel's storage precision.
    """
    inputs = prepare_inputs(cfg, kernel)
    chain = cfg.hazard
    lam = chain.failure.lambda_per_hour
    altitudes = inputs.kernel.altitudes
    m = inputs.kernel.radius_cells
    spec = cfg.grid
    xs, ys, zs = spec.centers(0), spec.centers(1), spec.centers(2)
    nz, ny, nx = spec.shape
    elevation = inputs.elevation
    classes = inputs.ground.classes
    counts = inputs.exposure.counts
    pair_cache: dict[tuple, float] = {}
    harm_cache: dict[tuple, float] = {}

    values = np.zeros((nz, ny, nx))
    for k in range(nz):
        for y in range(ny):
            for x in range(nx):
                height = zs[k] - elevation[y, x]
                p_r = chain.p_unrecoverable(height) if height > 0 else 0.0
                best = 0.0
                for cy in range(max(0, y - m), min(ny, y + m + 1)):
                    for cx in range(max(0, x - m), min(nx, x + m + 1)):
                        fall = zs[k] - elevation[cy, cx]
                        if fall <= 0:
                            continue
                        h_slice = float(altitudes[inputs.kernel.slice_index(fall)])
                        p = (xs[cx], ys[cy])
                        p0 = (xs[x], ys[y])
                        key = (p[0] - p0[0], p[1] - p0[1], h_slice)
                        if key not in pair_cache:
                            prob = cell_prob(cfg.impact, p, p0, h_slice, inputs.kernel.delta_m)
                            pair_cache[key] = float(np.float32(prob))
                        eov = _EOV_OF_CLASS.get(GroundClass(int(classes[cy, cx])))
                        if eov is None:
                            p_h = 0.0
                        else:
                            if (eov, fall) not in harm_cache:
                                harm_cache[(eov, fall)] = chain.harm_probability(eov, float(fall))
                            p_h = harm_cache[(eov, fall)]
                        best = max(best, individual_risk(float(counts[cy, cx]), lam, p_r, pair_cache[key], p_h))
                values[k, y, x] = best
    return _finish(inputs, values)


# --- terrains -------------------------------------------------------------------


def threshold_terrain(vol: RiskVolume, threshold: float) -> NoFlyTerrain:
    if not threshold > 0:
        raise DomainError(f"risk threshold must be > 0, got {threshold}")
    excluded = vol.blocked | (vol.values > threshold)
    return NoFlyTerrain(
        spec=vol.spec,
        excluded=excluded,
        threshold=float(threshold),
        kind="risk",
        scenario_hash=vol.meta.get("scenario_sha256", ""),
    )


def min_clearance(terrain: NoFlyTerrain) -> ClearanceField:
    """Lowest voxel altitude per column above which every voxel up to the ceiling is flyable."""
    excluded = terrain.excluded
    nz = excluded.shape[0]
    zc = terrain.spec.centers(2)
    any_excluded = excluded.any(axis=0)
    top = nz - 1 - np.argmax(excluded[::-1], axis=0)
    closed = any_excluded & (top == nz - 1)
    restricted = any_excluded & ~closed

    values = np.zeros(excluded.shape[1:])
    values[restricted] = zc[top[restricted] + 1]
    values[closed] = np.nan
    status = np.full(excluded.shape[1:], ClearanceStatus.OPEN, dtype=np.uint8)
    status[restricted] = ClearanceStatus.RESTRICTED
    status[closed] = ClearanceStatus.CLOSED
    return ClearanceField(terrain.spec.horizontal(), values, status, float(zc[-1]))


def clearance_summary(clearance: ClearanceField, classes: np.ndarray) -> dict[str, dict]:
    """min / median / max clearance per ground class; closed columns are counted but not averaged."""
    summary = {}
    for ground_class in GroundClass:
        cells = classes == ground_class
        numeric = clearance.values[cells & (clearance.status != ClearanceStatus.CLOSED)]
        entry = {
            "cells": int(np.count_nonzero(cells)),
            "open": int(np.count_nonzero(cells & (clearance.status == ClearanceStatus.OPEN))),
            "closed": int(np.count_nonzero(cells & (clearance.status == ClearanceStatus.CLOSED))),
        }
        if numeric.size:
            entry.update(min_m=float(numeric.min()), median_m=float(np.median(numeric)), max_m=float(numeric.max()))
        summary[ground_class.name.lower()] = entry
    return summary


def clearance_status_label(value: float, status: int) -> str:
    if status == ClearanceStatus.OPEN:
        return "open"
    if status == ClearanceStatus.CLOSED:
        return "closed"
    return "restricted_above_regulatory" if value > REGULATORY_CEILING_M else "restricted"


def fuse_terrains(terrains: list[NoFlyTerrain]) -> NoFlyTerrain:
    """Voxelwise union of exclusion terrains (risk, acoustic, or already fused)."""
    if not terrains:
        raise ConfigError("fuse: at least one terrain is required")
    spec = terrains[0].spec
    for t in terrains[1:]:
        if t.spec != spec:
            raise ExtentError("fuse: terrains are defined on different grids")
    excluded = np.logical_or.reduce([t.excluded for t in terrains])
    inputs = tuple(f"{t.kind}:{t.threshold}:{t.scenario_hash}" for t in terrains)
    digest = hashlib.sha256("\n".join(sorted(t.scenario_hash for t in terrains)).encode()).hexdigest()
    return NoFlyTerrain(spec, excluded, None, "fused", digest, inputs)


# --- mesh export --------------------------------------------------------------

# Unit-cube corners per face direction, counter-clockwise seen from outside.
# Axes are (x, y, z); the neighbour offset is given in array order (z, y, x).
_FACES = (
    ((0, 0, 1), ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1))),
    ((0, 0, -1), ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0))),
    ((0, 1, 0), ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0))),
    ((0, -1, 0), ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1))),
    ((1, 0, 0), ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))),
    ((-1, 0, 0), ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0))),
)


def export_terrain_mesh(terrain: NoFlyTerrain) -> str:
    """Boundary surface of the excluded voxels as Wavefront OBJ text.

    Only faces between an excluded voxel and a free (or outside) neighbour are
    emitted, two triangles each. Shared corners are merged, so the surface is
    closed; vertices are listed in sorted lattice order.
    """
    excluded = terrain.excluded
    padded = np.pad(excluded, 1)
    nz, ny, nx = excluded.shape
    quads = []
    for (dz, dy, dx), corners in _FACES:
        neighbour = padded[1 + dz:1 + dz + nz, 1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
        iz, iy, ix = np.nonzero(excluded & ~neighbour)
        base = np.stack([ix, iy, iz], axis=1)
        quads.append(base[:, None, :] + np.asarray(corners)[None, :, :])
    quads = np.concatenate(quads) if quads else np.zeros((0, 4, 3), dtype=np.int64)

    lines = [
        "# no-fly terrain boundary mesh",
        f"# kind {terrain.kind} threshold {terrain.threshold} scenario_sha256 {terrain.scenario_hash}",
        f"# voxels {terrain.count}",
    ]
    if quads.size == 0:
        return "\n".join(lines) + "\n"

    vertices, inverse = np.unique(quads.reshape(-1, 3), axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 4) + 1
    origin = np.asarray(terrain.spec.origin)
    spacing = np.asarray(terrain.spec.spacing)
    for v in origin + vertices * spacing:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for a, b, c, d in faces:
        lines.append(f"f {a} {b} {c}")
        lines.append(f"f {a} {c} {d}")
    return "\n".join(lines) + "\n"
