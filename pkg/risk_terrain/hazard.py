"""Per-event probability chain: failure rate, recovery, impact energy and harm."""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import expit

from risk_terrain.errors import ConfigError, DomainError, EvaluationError

logger = logging.getLogger(__name__)

AIR_DENSITY = 1.225  # kg/m³
GRAVITY = 9.8  # m/s²
REGULATORY_CEILING_M = 122.0  # 400 ft


class EoV(str, Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"


class AisLevel(IntEnum):
    """Abbreviated Injury Scale."""

    MINOR = 1
    MODERATE = 2
    SERIOUS = 3
    SEVERE = 4
    CRITICAL = 5
    UNSURVIVABLE = 6


class IeaLevel(IntEnum):
    """Impact effect on a vehicle windshield."""

    LOW = 1  # no penetration, no loss of visibility
    MEDIUM = 2  # no penetration, partial loss of visibility
    HIGH = 3  # penetration


@dataclass(frozen=True)
class UavSpec:
    mass_kg: float = 25.0
    cross_section_m2: float = 0.2
    drag_coeff: float = 1.8
    diameter_cm: float = 50.0
    cruise_speed_ms: float = 10.0

    def __post_init__(self):
        for name in ("mass_kg", "cross_section_m2", "drag_coeff", "diameter_cm", "cruise_speed_ms"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"uav.{name}: must be > 0")

    @property
    def drag_factor(self) -> float:
        """rho * S * C_D, kg/m."""
        return AIR_DENSITY * self.cross_section_m2 * self.drag_coeff

    @property
    def terminal_energy_j(self) -> float:
        return self.mass_kg ** 2 * GRAVITY / self.drag_factor


@dataclass(frozen=True)
class FailureModel:
    lambda_per_hour: float
    label: str = ""

    def __post_init__(self):
        if not 0 < self.lambda_per_hour < 1:
            raise ConfigError(f"failure.lambda_per_hour: must be in (0, 1), got {self.lambda_per_hour}")
        if not self.label:
            object.__setattr__(self, "label", f"{self.lambda_per_hour:g}/h")


FAILURE_PRESETS = {
    "catastrophic_1e-5": FailureModel(1e-5, "catastrophic 1e-5/h"),
    "catastrophic_5e-6": FailureModel(5e-6, "catastrophic 5e-6/h"),
    "catastrophic_2e-6": FailureModel(2e-6, "catastrophic 2e-6/h"),
    "catastrophic_1e-6": FailureModel(1e-6, "catastrophic 1e-6/h"),
}

# Subsystem failures per 10^6 flight hours of a commercial drone
FIT_TABLE = {
    "ground_control": 2.00,
    "mainframe": 2.77,
    "power_plant": 9.94,
    "navigation": 9.41,
    "electronic": 5.01,
    "payload": 1.10,
}


def fit_failure_model(subsystems: list[str] | None = None) -> FailureModel:
    """Failure model from the summed FIT rates of the given subsystems (all of them by default)."""
    names = list(FIT_TABLE) if subsystems is None else subsystems
    unknown = [n for n in names if n not in FIT_TABLE]
    if unknown:
        raise ConfigError(f"failure.subsystems: unknown subsystem(s) {', '.join(unknown)}")
    total = sum(FIT_TABLE[n] for n in names)
    return FailureModel(total * 1e-6, f"FIT {'+'.join(names)}")


def mtbf_hours(fit: float) -> float:
    return 1e6 / fit


@dataclass(frozen=True)
class RecoveryModel:
    parachute: bool = False
    max_success: float = 0.5
    steepness: float = 1.35
    midpoint_m: float = 45.0

    def __post_init__(self):
        if not 0 <= self.max_success <= 1:
            raise ConfigError(f"recovery.max_success: must be in [0, 1], got {self.max_success}")
        if not self.midpoint_m > 0:
            raise ConfigError(f"recovery.midpoint_m: must be > 0, got {self.midpoint_m}")


@dataclass(frozen=True)
class BodyModel:
    mass_kg: float = 70.0
    wall_coeff: float = 0.652

    def __post_init__(self):
        if not (self.mass_kg > 0 and self.wall_coeff > 0):
            raise ConfigError("harm body mass and wall coefficient must be > 0")


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def p_unrecoverable(rec: RecoveryModel, h0):
    h = np.asarray(h0, dtype=np.float64)
    if np.any(h <= 0):
        raise DomainError(f"failure altitude must be > 0, got {h0}")
    if not rec.parachute:
        return _out(np.ones_like(h))
    return _out(1.0 - rec.max_success / (1.0 + rec.steepness * np.exp(rec.midpoint_m - h)))


def impact_kinetic_energy(uav: UavSpec, h):
    """Kinetic energy in J after a vertical drag-limited fall from rest through height h."""
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise DomainError(f"fall height must be >= 0, got {h}")
    return _out(-uav.terminal_energy_j * np.expm1(-uav.drag_factor * h / uav.mass_kg))


def terminal_velocity(uav: UavSpec, h):
    """Vertical speed after falling through h from rest; the limit is the terminal velocity."""
    return _out(np.sqrt(2.0 * np.asarray(impact_kinetic_energy(uav, h)) / uav.mass_kg))


def integrate_fall_speed(uav: UavSpec, h: float) -> float:
    """Numerical cross-check of terminal_velocity: integrates d(v²)/dh = 2g - (rho S C_D / m) v²."""
    k = uav.drag_factor / uav.mass_kg
    sol = solve_ivp(lambda _, w: 2.0 * GRAVITY - k * w, (0.0, float(h)), [0.0], rtol=1e-10, atol=1e-10)
    return math.sqrt(max(float(sol.y[0, -1]), 0.0))


def blunt_criterion(e_i, body: BodyModel, diameter_cm: float):
    e = np.asarray(e_i, dtype=np.float64)
    if np.any(e <= 0):
        raise DomainError(f"impact energy must be > 0 J, got {e_i}")
    return _out(np.log(e / (body.wall_coeff * diameter_cm * body.mass_kg ** (2.0 / 3.0))))


def p_ais3(bc):
    return _out(expit(38.50 * np.asarray(bc, dtype=np.float64) - 17.76))


def p_fatality_shelley(e_i, e0: float, k: float):
    return _out(expit(k * (np.asarray(e_i, dtype=np.float64) - e0)))


def p_fatality_primatesta(e_i, alpha_e: float, beta_e: float, c_s: float):
    if not 0 < c_s <= 1:
        raise DomainError(f"sheltering coefficient must be in (0, 1], got {c_s}")
    e = np.asarray(e_i, dtype=np.float64)
    if np.any(e <= 0):
        raise DomainError(f"impact energy must be > 0 J, got {e_i}")
    ratio = (beta_e / e) ** (1.0 / (4.0 * c_s))
    k = np.minimum(1.0, ratio)
    denominator = 1.0 - 2.0 * k + math.sqrt(alpha_e / beta_e) * ratio
    live = k < 1.0
    if np.any(live & (denominator <= 0)):
        raise EvaluationError(f"fatality model denominator is not positive at E = {e_i} J")
    safe = np.where(live, denominator, 1.0)
    return _out(np.where(live, (1.0 - k) / safe, 0.0))


def p_vehicle_medium_damage(e_i_kj, offset: float = 6.0, slope: float = 5.0, floor: float = 0.5):
    """Probability of medium windshield damage; energy in kJ."""
    e = np.asarray(e_i_kj, dtype=np.float64)
    if np.any(e < 0):
        raise DomainError(f"impact energy must be >= 0 kJ, got {e_i_kj}")
    if np.any(e > 1e3):
        raise DomainError(f"impact energy {e_i_kj} kJ is implausible; was it given in J?")
    return _out(1.0 / (1.0 + floor * np.exp(offset - slope * e)))


# --- harm models -----------------------------------------------------------


@dataclass(frozen=True)
class BcAis3:
    body: BodyModel = field(default_factory=BodyModel)

    def probability(self, e_j, uav: UavSpec):
        return p_ais3(blunt_criterion(e_j, self.body, uav.diameter_cm))


@dataclass(frozen=True)
class ShelleyFatality:
    e0_j: float
    k_per_j: float

    def __post_init__(self):
        if not (self.e0_j > 0 and self.k_per_j > 0):
            raise ConfigError("harm.parameters: shelley e0_j and k_per_j must be > 0")

    def probability(self, e_j, uav: UavSpec):
        return p_fatality_shelley(e_j, self.e0_j, self.k_per_j)


@dataclass(frozen=True)
class PrimatestaFatality:
    alpha_e_j: float
    beta_e_j: float
    c_s: float = 1.0

    def __post_init__(self):
        if not (self.alpha_e_j > 0 and self.beta_e_j > 0):
            raise ConfigError("harm.parameters: primatesta alpha_e_j and beta_e_j must be > 0")
        if self.alpha_e_j < self.beta_e_j:
            raise ConfigError("harm.parameters: primatesta alpha_e_j must be >= beta_e_j")
        if not 0 < self.c_s <= 1:
            raise ConfigError("harm.parameters: primatesta c_s must be in (0, 1]")

    def probability(self, e_j, uav: UavSpec):
        return p_fatality_primatesta(e_j, self.alpha_e_j, self.beta_e_j, self.c_s)


@dataclass(frozen=True)
class VehicleWindshield:
    offset: float = 6.0
    slope_per_kj: float = 5.0
    floor_coeff: float = 0.5

    def probability(self, e_j, uav: UavSpec):
        return p_vehicle_medium_damage(np.asarray(e_j, dtype=np.float64) / 1000.0, self.offset, self.slope_per_kj, self.floor_coeff)


HarmModel = BcAis3 | ShelleyFatality | PrimatestaFatality | VehicleWindshield

HARM_MODELS = {
    "bc_ais3": BcAis3,
    "shelley": ShelleyFatality,
    "primatesta": PrimatestaFatality,
    "vehicle_windshield": VehicleWindshield,
}


def default_harm_models() -> dict[EoV, HarmModel]:
    return {EoV.PEDESTRIAN: BcAis3(), EoV.VEHICLE: VehicleWindshield()}


def p_harm(eov: EoV, e_j, config: dict[EoV, HarmModel], uav: UavSpec | None = None):
    model = config.get(EoV(eov))
    if model is None:
        raise ConfigError(f"harm: no model configured for {EoV(eov).value}")
    return model.probability(e_j, uav or UavSpec())


@dataclass(frozen=True)
class HazardChain:
    """Everything between "a failure happens at h0" and "an EoV is harmed", except where it lands."""

    uav: UavSpec = field(default_factory=UavSpec)
    failure: FailureModel = field(default_factory=lambda: FAILURE_PRESETS["catastrophic_1e-5"])
    recovery: RecoveryModel = field(default_factory=RecoveryModel)
    harm: dict = field(default_factory=default_harm_models)
    include_cruise_energy: bool = False

    def impact_energy(self, fall_height_m: float) -> float:
        energy = float(impact_kinetic_energy(self.uav, fall_height_m))
        if self.include_cruise_energy:
            energy += 0.5 * self.uav.mass_kg * self.uav.cruise_speed_ms ** 2
        return energy

    def p_unrecoverable(self, h0: float) -> float:
        return float(p_unrecoverable(self.recovery, h0))

    def harm_probability(self, eov: EoV, fall_height_m: float) -> float:
        if fall_height_m <= 0:
            return 0.0
        return float(p_harm(eov, self.impact_energy(fall_height_m), self.harm, self.uav))
