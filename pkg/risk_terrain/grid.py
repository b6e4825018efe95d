import json
import logging
import math
import sys
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np
import shapely
from shapely.geometry import LinearRing, Polygon

from risk_terrain.errors import AmbiguityError, ExtentError, GeometryError, UrbanModelError

logger = logging.getLogger(__name__)

GROUND_USE_CLASSES = ("sidewalk", "road", "other")


class GroundClass(IntEnum):
    NONE = 0
    PEDESTRIAN = 1
    VEHICLE = 2


_USE_TO_CLASS = {
    "sidewalk": GroundClass.PEDESTRIAN,
    "road": GroundClass.VEHICLE,
    "other": GroundClass.NONE,
}


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned sampled grid. ``origin`` is the lower corner of cell 0, axes ordered (x, y[, z])."""

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if len(self.origin) not in (2, 3) or not len(self.origin) == len(self.spacing) == len(self.dims):
            raise ExtentError(f"GridSpec needs 2 or 3 matching axes, got {self.origin}, {self.spacing}, {self.dims}")
        if not all(math.isfinite(v) for v in self.origin + self.spacing):
            raise ExtentError("GridSpec origin and spacing must be finite")
        if any(s <= 0 for s in self.spacing):
            raise ExtentError(f"GridSpec spacing must be > 0 on every axis, got {self.spacing}")
        if any(d < 1 for d in self.dims):
            raise ExtentError(f"GridSpec dims must be >= 1 on every axis, got {self.dims}")
        if math.prod(self.dims) > sys.maxsize:
            raise ExtentError(f"GridSpec with dims {self.dims} is too large to address")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple[int, ...]:
        """numpy shape of a field on this grid: (ny, nx) or (nz, ny, nx)."""
        return self.dims[::-1]

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def cell_area(self) -> float:
        return self.spacing[0] * self.spacing[1]

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    def bounds(self, axis: int) -> tuple[float, float]:
        return self.origin[axis], self.origin[axis] + self.dims[axis] * self.spacing[axis]

    def horizontal(self) -> "GridSpec":
        return GridSpec(self.origin[:2], self.spacing[:2], self.dims[:2])

    def column_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of horizontal cell centers, each shaped (ny, nx)."""
        return np.meshgrid(self.centers(0), self.centers(1))

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": list(self.spacing), "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(tuple(data["origin"]), tuple(data["spacing"]), tuple(data["dims"]))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Finite real value per cell of a 2D or 3D grid."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.spec.shape:
            raise ExtentError(f"field of shape {values.shape} does not match grid shape {self.spec.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    def require_nonnegative(self, what: str) -> "ScalarField":
        if np.any(self.values < 0):
            raise ValueError(f"{what} must be >= 0 everywhere")
        return self


@dataclass(frozen=True)
class Building:
    footprint: tuple[tuple[float, float], ...]
    height_m: float

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.footprint)


@dataclass(frozen=True)
class GroundUse:
    polygon_coords: tuple[tuple[float, float], ...]
    use: str
    priority: int = 0

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.polygon_coords)


@dataclass(frozen=True)
class UrbanModel:
    extent: tuple[float, float, float, float]
    buildings: tuple[Building, ...] = ()
    ground_use: tuple[GroundUse, ...] = ()


@dataclass(frozen=True, eq=False)
class OccupancyMask:
    spec: GridSpec
    blocked: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.blocked))


@dataclass(frozen=True, eq=False)
class GroundUseGrid:
    spec: GridSpec
    classes: np.ndarray

    def counts(self) -> dict[GroundClass, int]:
        return {c: int(np.count_nonzero(self.classes == c)) for c in GroundClass}


# --- urban model document --------------------------------------------------


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise UrbanModelError(f"{path}: expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise UrbanModelError(f"{path}: number must be finite")
    return float(value)


def _ring(raw, path: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(raw, list):
        raise UrbanModelError(f"{path}: expected a list of [x, y] points")
    points = []
    for i, point in enumerate(raw):
        if not isinstance(point, list) or len(point) != 2:
            raise UrbanModelError(f"{path}[{i}]: expected [x, y]")
        points.append((_number(point[0], f"{path}[{i}][0]"), _number(point[1], f"{path}[{i}][1]")))
    if len(points) > 1 and points[0] == points[-1]:
        points.pop()  # explicitly closed ring
    if len(points) < 3:
        raise UrbanModelError(f"{path}: polygon needs at least 3 distinct points")
    ring = LinearRing(points)
    if not ring.is_simple or Polygon(points).area <= 0:
        raise GeometryError(f"{path}: polygon is self-intersecting or degenerate")
    return tuple(points)


def _check_inside(points, extent, path: str) -> None:
    xmin, ymin, xmax, ymax = extent
    for x, y in points:
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            raise GeometryError(f"{path}: point ({x}, {y}) lies outside the model extent")


def parse_urban_model(data) -> UrbanModel:
    if not isinstance(data, dict):
        raise UrbanModelError("$: expected an object")
    unknown = set(data) - {"extent", "buildings", "ground_use"}
    if unknown:
        raise UrbanModelError(f"$.{sorted(unknown)[0]}: unknown key")

    raw_extent = data.get("extent")
    if not isinstance(raw_extent, list) or len(raw_extent) != 4:
        raise UrbanModelError("$.extent: expected [xmin, ymin, xmax, ymax]")
    extent = tuple(_number(v, f"$.extent[{i}]") for i, v in enumerate(raw_extent))
    if not (extent[0] < extent[2] and extent[1] < extent[3]):
        raise UrbanModelError("$.extent: requires xmin < xmax and ymin < ymax")

    raw_buildings = data.get("buildings", [])
    if not isinstance(raw_buildings, list):
        raise UrbanModelError("$.buildings: expected a list")
    buildings = []
    for i, raw in enumerate(raw_buildings):
        path = f"$.buildings[{i}]"
        if not isinstance(raw, dict):
            raise UrbanModelError(f"{path}: expected an object")
        if "footprint" not in raw:
            raise UrbanModelError(f"{path}.footprint: required")
        if "height_m" not in raw:
            raise UrbanModelError(f"{path}.height_m: required")
        footprint = _ring(raw["footprint"], f"{path}.footprint")
        height = _number(raw["height_m"], f"{path}.height_m")
        if height < 0:
            raise UrbanModelError(f"{path}.height_m: must be >= 0")
        _check_inside(footprint, extent, f"{path}.footprint")
        buildings.append(Building(footprint, height))

    raw_uses = data.get("ground_use", [])
    if not isinstance(raw_uses, list):
        raise UrbanModelError("$.ground_use: expected a list")
    uses = []
    for i, raw in enumerate(raw_uses):
        path = f"$.ground_use[{i}]"
        if not isinstance(raw, dict):
            raise UrbanModelError(f"{path}: expected an object")
        if "polygon" not in raw:
            raise UrbanModelError(f"{path}.polygon: required")
        use = raw.get("class")
        if use not in GROUND_USE_CLASSES:
            raise UrbanModelError(f"{path}.class: must be one of {', '.join(GROUND_USE_CLASSES)}, got {use!r}")
        priority = raw.get("priority", 0)
        if isinstance(priority, bool) or not isinstance(priority, int):
            raise UrbanModelError(f"{path}.priority: expected an integer")
        coords = _ring(raw["polygon"], f"{path}.polygon")
        _check_inside(coords, extent, f"{path}.polygon")
        uses.append(GroundUse(coords, use, priority))

    return UrbanModel(extent=extent, buildings=tuple(buildings), ground_use=tuple(uses))


def load_urban_model(text: str) -> UrbanModel:
    """Parse and validate an urban-model JSON document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UrbanModelError(f"$: not valid JSON ({exc})") from exc
    model = parse_urban_model(data)
    logger.info("Loaded urban model: %d buildings, %d ground-use polygons", len(model.buildings), len(model.ground_use))
    return model


def dump_urban_model(model: UrbanModel) -> str:
    data = {
        "extent": list(model.extent),
        "buildings": [
            {"footprint": [list(p) for p in b.footprint], "height_m": b.height_m} for b in model.buildings
        ],
        "ground_use": [
            {"polygon": [list(p) for p in g.polygon_coords], "class": g.use, "priority": g.priority}
            for g in model.ground_use
        ],
    }
    return json.dumps(data, indent=1)


# --- rasterization ---------------------------------------------------------


def _check_extent(model: UrbanModel, spec: GridSpec) -> None:
    """Grid must sit inside the model extent padded by one cell."""
    xmin, ymin, xmax, ymax = model.extent
    gx0, gx1 = spec.bounds(0)
    gy0, gy1 = spec.bounds(1)
    pad_x, pad_y = spec.spacing[0], spec.spacing[1]
    if gx0 < xmin - pad_x or gx1 > xmax + pad_x or gy0 < ymin - pad_y or gy1 > ymax + pad_y:
        raise ExtentError(
            f"grid [{gx0}, {gx1}] x [{gy0}, {gy1}] lies outside model extent {list(model.extent)}"
        )


def _elevation_values(spec2: GridSpec, elevation: ScalarField | None) -> np.ndarray:
    if elevation is None:
        return np.zeros(spec2.shape)
    if elevation.spec != spec2:
        raise ExtentError("elevation raster is not aligned with the horizontal grid")
    return elevation.values


def roof_heights(model: UrbanModel, spec2: GridSpec, elevation: ScalarField | None = None) -> np.ndarray:
    """Per column absolute roof altitude, -inf where no footprint covers the column center."""
    xs, ys = spec2.column_centers()
    elev = _elevation_values(spec2, elevation)
    roof = np.full(spec2.shape, -np.inf)
    for building in model.buildings:
        # intersects_xy counts boundary points as inside
        inside = shapely.intersects_xy(building.polygon, xs, ys)
        roof = np.where(inside, np.maximum(roof, elev + building.height_m), roof)
    return roof


def rasterize_occupancy(model: UrbanModel, spec: GridSpec, elevation: ScalarField | None = None) -> OccupancyMask:
    if spec.ndim != 3:
        raise ExtentError("occupancy needs a 3D grid")
    _check_extent(model, spec)
    spec2 = spec.horizontal()
    elev = _elevation_values(spec2, elevation)
    roof = roof_heights(model, spec2, elevation)
    zc = spec.centers(2)[:, None, None]
    blocked = (zc <= roof[None, :, :]) | (zc < elev[None, :, :])
    mask = OccupancyMask(spec, blocked)
    logger.info("Rasterized occupancy: %d of %d voxels blocked", mask.count, spec.size)
    return mask


def classify_ground(model: UrbanModel, spec: GridSpec) -> GroundUseGrid:
    if spec.ndim != 2:
        raise ExtentError("ground classification needs a 2D grid")
    _check_extent(model, spec)
    xs, ys = spec.column_centers()
    use_codes = {name: i + 1 for i, name in enumerate(GROUND_USE_CLASSES)}

    best_priority = np.full(spec.shape, np.iinfo(np.int64).min, dtype=np.int64)
    best_use = np.zeros(spec.shape, dtype=np.int8)
    conflict = np.zeros(spec.shape, dtype=bool)
    for region in model.ground_use:
        inside = shapely.intersects_xy(region.polygon, xs, ys)
        code = use_codes[region.use]
        higher = inside & (region.priority > best_priority)
        tie = inside & (region.priority == best_priority) & (best_use != code)
        best_priority = np.where(higher, region.priority, best_priority)
        best_use = np.where(higher, code, best_use)
        conflict = np.where(higher, False, conflict | tie)

    if conflict.any():
        iy, ix = np.argwhere(conflict)[0]
        raise AmbiguityError(
            f"ground-use polygons of different classes overlap at ({xs[iy, ix]}, {ys[iy, ix]}) "
            f"with equal priority; give one of them a higher priority"
        )

    classes = np.full(spec.shape, GroundClass.NONE, dtype=np.uint8)
    for name, code in use_codes.items():
        classes[best_use == code] = _USE_TO_CLASS[name]
    roof = roof_heights(model, spec)
    classes[np.isfinite(roof)] = GroundClass.NONE
    return GroundUseGrid(spec, classes)


def case_grid(model: UrbanModel, spacing_m: float = 2.0, ceiling_m: float = 200.0) -> GridSpec:
    """3D grid over the model extent with voxel centers at spacing, 2*spacing, ..., ceiling."""
    xmin, ymin, xmax, ymax = model.extent
    nx = int(round((xmax - xmin) / spacing_m))
    ny = int(round((ymax - ymin) / spacing_m))
    nz = int(round(ceiling_m / spacing_m))
    return GridSpec((xmin, ymin, spacing_m / 2), (spacing_m, spacing_m, spacing_m), (nx, ny, nz))
