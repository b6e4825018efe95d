import logging
import re
from dataclasses import dataclass, field

import numpy as np

from risk_terrain.errors import ConfigError, ExtentError
from risk_terrain.grid import GroundClass, GroundUseGrid, GridSpec, ScalarField
from risk_terrain.hazard import EoV

logger = logging.getLogger(__name__)

# people/m², descriptive classes for sidewalk crowds
PEDESTRIAN_DENSITY_CLASSES = {
    "very_low": (0.0, 0.05),
    "low": (0.05, 0.1),
    "moderate": (0.1, 0.2),
    "high": (0.2, 0.3),
    "very_high": (0.3, 2.0),
}

# vehicles per 100 m per lane
VEHICLE_DENSITY_CLASSES = {
    "very_low": (0.0, 2.0),
    "low": (2.0, 5.0),
    "moderate": (5.0, 10.0),
    "high": (10.0, 15.0),
    "very_high": (15.0, float("inf")),
}

DEFAULT_TIMES = {
    "12pm": (0.5, 0.6),
    "5pm": (1.0, 1.0),
    "10pm": (0.1, 0.2),
}


def vehicle_base_density(veh_per_100m_lane: float = 10.0, lane_width_m: float = 3.0, windshield_m2: float = 1.28) -> float:
    """Windshield strike targets per m² of road."""
    return veh_per_100m_lane * windshield_m2 / (100.0 * lane_width_m)


_CLOCK_12 = re.compile(r"^(\d{1,2})(?::(\d{2}))?\s*(am|pm)$")
_CLOCK_24 = re.compile(r"^(\d{1,2}):(\d{2})$")


def normalize_time_label(raw: str) -> str:
    """Canonical label for a time of day: "5 pm", "5PM", "17:00" -> "5pm"; "17:30" -> "5:30pm".

    Labels that are not clock times (e.g. "rush_hour") pass through lowercased.
    """
    text = str(raw).strip().lower()
    m = _CLOCK_12.match(text)
    if m:
        hour, minute = int(m.group(1)), int(m.group(2) or 0)
        if not 1 <= hour <= 12:
            raise ConfigError(f"time label {raw!r}: hour must be 1-12 with am/pm")
        hour = hour % 12 + (12 if m.group(3) == "pm" else 0)
    else:
        m = _CLOCK_24.match(text)
        if not m:
            return text
        hour, minute = int(m.group(1)), int(m.group(2))
    if hour > 23 or minute > 59:
        raise ConfigError(f"time label {raw!r}: not a valid time of day")
    suffix = "am" if hour < 12 else "pm"
    hour12 = hour % 12 or 12
    return f"{hour12}{suffix}" if minute == 0 else f"{hour12}:{minute:02d}{suffix}"


@dataclass(frozen=True)
class ExposureModel:
    ped_base: float = 0.15
    veh_base: float = 0.04
    times: dict = field(default_factory=lambda: dict(DEFAULT_TIMES))
    base_time: str = "5pm"

    def __post_init__(self):
        if self.ped_base < 0 or self.veh_base < 0:
            raise ConfigError("exposure: base densities must be >= 0")
        times = {normalize_time_label(k): (float(tp), float(tv)) for k, (tp, tv) in self.times.items()}
        if any(tp < 0 or tv < 0 for tp, tv in times.values()):
            raise ConfigError("exposure.times: temporal factors must be >= 0")
        base = normalize_time_label(self.base_time)
        if times.get(base) != (1.0, 1.0):
            raise ConfigError(f"exposure.times: base time {base} must have factors (1, 1)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "base_time", base)


@dataclass(frozen=True, eq=False)
class ExposureGrid:
    """Expected number of EoVs per ground cell."""

    spec: GridSpec
    counts: np.ndarray
    classes: np.ndarray

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def temporal_factor(model: ExposureModel, time_label: str, eov: EoV) -> float:
    label = normalize_time_label(time_label)
    if label not in model.times:
        raise ConfigError(f"exposure.times: unknown time label {time_label!r} (known: {', '.join(model.times)})")
    t_p, t_v = model.times[label]
    return t_p if EoV(eov) is EoV.PEDESTRIAN else t_v


def exposure_at(model: ExposureModel, ground_class: GroundClass, time_label: str) -> float:
    """EoV density per m² for a ground class at a time of day."""
    ground_class = GroundClass(ground_class)
    if ground_class is GroundClass.PEDESTRIAN:
        return model.ped_base * temporal_factor(model, time_label, EoV.PEDESTRIAN)
    if ground_class is GroundClass.VEHICLE:
        return model.veh_base * temporal_factor(model, time_label, EoV.VEHICLE)
    temporal_factor(model, time_label, EoV.PEDESTRIAN)  # still reject unknown labels
    return 0.0


def build_exposure_grid(
    ground: GroundUseGrid,
    model: ExposureModel,
    time_label: str,
    density_override: ScalarField | None = None,
) -> ExposureGrid:
    """Expected EoV count per cell: density times cell area.

    ``density_override`` replaces the base density per cell (per m², at the base
    time); temporal factors and the ground classes still apply.
    """
    spec = ground.spec
    classes = ground.classes
    density = np.zeros(spec.shape)
    if density_override is None:
        density[classes == GroundClass.PEDESTRIAN] = exposure_at(model, GroundClass.PEDESTRIAN, time_label)
        density[classes == GroundClass.VEHICLE] = exposure_at(model, GroundClass.VEHICLE, time_label)
    else:
        if density_override.spec != spec:
            raise ExtentError("density override raster is not aligned with the ground grid")
        density_override.require_nonnegative("density override")
        ped = classes == GroundClass.PEDESTRIAN
        veh = classes == GroundClass.VEHICLE
        density[ped] = density_override.values[ped] * temporal_factor(model, time_label, EoV.PEDESTRIAN)
        density[veh] = density_override.values[veh] * temporal_factor(model, time_label, EoV.VEHICLE)
    counts = density * spec.cell_area
    grid = ExposureGrid(spec, counts, classes)
    logger.info("Exposure at %s: %.1f expected EoVs over %d cells", normalize_time_label(time_label), grid.total, spec.size)
    return grid
