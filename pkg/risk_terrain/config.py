import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from risk_terrain.errors import ConfigError, GridFileError
from risk_terrain.exposure import DEFAULT_TIMES, ExposureModel, normalize_time_label
from risk_terrain.grid import GridSpec, ScalarField, case_grid, load_urban_model
from risk_terrain.gridio import read_grid_file
from risk_terrain.hazard import (
    FAILURE_PRESETS,
    HARM_MODELS,
    BcAis3,
    BodyModel,
    EoV,
    FailureModel,
    HazardChain,
    RecoveryModel,
    UavSpec,
    default_harm_models,
    fit_failure_model,
)
from risk_terrain.impact import DEFAULT_DELTA_M, DEFAULT_HALF_EXTENT_M, impact_params_from_dict
from risk_terrain.terrain import ScenarioConfig

logger = logging.getLogger(__name__)

SCENARIO_VERSION = 1
_REQUIRED = object()


@dataclass
class OutputConfig:
    dir: Path
    mesh: bool = False
    kernel_cache: Path | None = None


@dataclass
class LoggingConfig:
    file: str = "risk_terrain.log"
    max_bytes: int = 5_242_880
    backup_count: int = 3


@dataclass
class OracleConfig:
    samples: int = 1_000_000
    seed: int = 20240611
    altitudes: tuple[float, ...] = (50.0, 100.0, 150.0)

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError(f"oracle.samples: must be >= 1, got {self.samples}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"oracle.seed: must be a 64-bit unsigned integer, got {self.seed}")


@dataclass
class ScenarioFile:
    path: Path
    label: str
    base: ScenarioConfig
    times: list[str]
    failures: list[FailureModel]
    output: OutputConfig
    oracle: OracleConfig = field(default_factory=OracleConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    scenario_hash: str = ""

    def variants(self) -> list[ScenarioConfig]:
        """One run per (time of day, failure rate) pair, times outermost."""
        many = len(self.times) * len(self.failures) > 1
        runs = []
        for time_label in self.times:
            for failure in self.failures:
                label = f"{self.label}_{time_label}_{failure.lambda_per_hour:g}" if many else self.label
                runs.append(
                    dataclasses.replace(
                        self.base,
                        time_label=time_label,
                        hazard=dataclasses.replace(self.base.hazard, failure=failure),
                        label=label,
                    )
                )
        return runs


# --- field readers -----------------------------------------------------------


def _section(data: dict, key: str) -> dict:
    raw = data.get(key, {})
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return raw


def _number(value, path: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def _float(section: dict, key: str, path: str, default=_REQUIRED) -> float:
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: required")
        return default
    return _number(section[key], f"{path}.{key}")


def _int(section: dict, key: str, path: str, default: int) -> int:
    if key not in section:
        return default
    value = section[key]
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    return value


def _bool(section: dict, key: str, path: str, default: bool = False) -> bool:
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected true or false, got {value!r}")
    return value


def _float_list(section: dict, key: str, path: str, default: tuple) -> tuple[float, ...]:
    raw = section.get(key, default)
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{path}.{key}: expected a non-empty list of numbers")
    return tuple(_number(v, f"{path}.{key}[{i}]") for i, v in enumerate(raw))


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")


def _resolve(base_dir: Path, raw, path: str) -> Path:
    if not isinstance(raw, str) or not raw:
        raise ConfigError(f"{path}: expected a file path")
    resolved = (base_dir / raw).resolve()
    if not resolved.exists():
        raise ConfigError(f"{path}: file not found: {resolved}")
    return resolved


def load_raster(path: Path, what: str) -> ScalarField:
    try:
        grid_file = read_grid_file(path, kind="raster")
    except GridFileError as exc:
        raise ConfigError(f"{what}: {exc}") from exc
    if grid_file.spec is None or "values" not in grid_file.arrays:
        raise ConfigError(f"{what}: raster file has no grid spec or no 'values' array")
    return ScalarField(grid_file.spec, grid_file.arrays["values"])


# --- sections ----------------------------------------------------------------


def _parse_impact(data: dict):
    raw = _section(data, "impact")
    if "model" not in raw:
        raise ConfigError("impact.model: required")
    model = raw["model"]
    if model == "gaussian":
        _check_keys(raw, {"model", "alpha"}, "impact")
        return impact_params_from_dict({"model": model, "alpha": _float(raw, "alpha", "impact")})
    if model == "rayleigh":
        _check_keys(raw, {"model", "beta", "gamma", "mode"}, "impact")
        try:
            return impact_params_from_dict({
                "model": model,
                "beta": _float(raw, "beta", "impact"),
                "gamma": _float(raw, "gamma", "impact"),
                "mode": raw.get("mode", "paper_faithful"),
            })
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"impact.mode: must be 'paper_faithful' or 'normalized', got {raw.get('mode')!r}") from exc
    raise ConfigError(f"impact.model: must be 'gaussian' or 'rayleigh', got {model!r}")


def _parse_failures(data: dict) -> list[FailureModel]:
    if "failure_rates" in data:
        rates = data["failure_rates"]
        if not isinstance(rates, list) or not rates:
            raise ConfigError("failure_rates: expected a non-empty list of per-hour rates")
        return [FailureModel(_number(r, f"failure_rates[{i}]")) for i, r in enumerate(rates)]

    raw = _section(data, "failure")
    _check_keys(raw, {"lambda_per_hour", "preset", "fit_subsystems", "label"}, "failure")
    if "lambda_per_hour" in raw:
        return [FailureModel(_float(raw, "lambda_per_hour", "failure"), str(raw.get("label", "")))]
    if "preset" in raw:
        preset = raw["preset"]
        if preset not in FAILURE_PRESETS:
            raise ConfigError(f"failure.preset: must be one of {', '.join(FAILURE_PRESETS)}, got {preset!r}")
        return [FAILURE_PRESETS[preset]]
    if "fit_subsystems" in raw:
        subsystems = raw["fit_subsystems"]
        if subsystems == "all":
            return [fit_failure_model()]
        if not isinstance(subsystems, list):
            raise ConfigError("failure.fit_subsystems: expected 'all' or a list of subsystem names")
        return [fit_failure_model([str(s) for s in subsystems])]
    raise ConfigError("failure.lambda_per_hour: required (or failure.preset, failure.fit_subsystems, failure_rates)")


def _parse_harm(data: dict) -> tuple[dict, bool]:
    raw = _section(data, "harm")
    _check_keys(raw, {"pedestrian", "vehicle", "include_cruise_energy"}, "harm")
    models = default_harm_models()
    for eov in EoV:
        entry = raw.get(eov.value)
        if entry is None:
            continue
        path = f"harm.{eov.value}"
        if not isinstance(entry, dict) or "model" not in entry:
            raise ConfigError(f"{path}.model: required")
        name = entry["model"]
        if name not in HARM_MODELS:
            raise ConfigError(f"{path}.model: must be one of {', '.join(HARM_MODELS)}, got {name!r}")
        params = {k: v for k, v in entry.items() if k != "model"}
        if HARM_MODELS[name] is BcAis3:
            _check_keys(params, {"body_mass_kg", "wall_coeff"}, path)
            body = BodyModel(
                mass_kg=_float(params, "body_mass_kg", path, BodyModel.mass_kg),
                wall_coeff=_float(params, "wall_coeff", path, BodyModel.wall_coeff),
            )
            models[eov] = BcAis3(body)
            continue
        names = {f.name for f in dataclasses.fields(HARM_MODELS[name])}
        _check_keys(params, names, path)
        try:
            models[eov] = HARM_MODELS[name](**{k: _float(params, k, path) for k in params})
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return models, _bool(raw, "include_cruise_energy", "harm")


def _parse_hazard(data: dict, failure: FailureModel) -> HazardChain:
    raw_uav = _section(data, "uav")
    uav_fields = {f.name for f in dataclasses.fields(UavSpec)}
    _check_keys(raw_uav, uav_fields, "uav")
    uav = UavSpec(**{k: _float(raw_uav, k, "uav") for k in raw_uav})

    raw_rec = _section(data, "recovery")
    _check_keys(raw_rec, {"parachute", "max_success", "steepness", "midpoint_m"}, "recovery")
    recovery = RecoveryModel(
        parachute=_bool(raw_rec, "parachute", "recovery"),
        max_success=_float(raw_rec, "max_success", "recovery", RecoveryModel.max_success),
        steepness=_float(raw_rec, "steepness", "recovery", RecoveryModel.steepness),
        midpoint_m=_float(raw_rec, "midpoint_m", "recovery", RecoveryModel.midpoint_m),
    )
    harm, cruise = _parse_harm(data)
    return HazardChain(uav=uav, failure=failure, recovery=recovery, harm=harm, include_cruise_energy=cruise)


def _parse_exposure(data: dict) -> ExposureModel:
    raw = _section(data, "exposure")
    _check_keys(raw, {"ped_base", "veh_base", "times", "base_time"}, "exposure")
    times = dict(DEFAULT_TIMES)
    raw_times = raw.get("times")
    if raw_times is not None:
        if not isinstance(raw_times, dict):
            raise ConfigError("exposure.times: expected a mapping of time label to {tp, tv}")
        times = {}
        for label, factors in raw_times.items():
            path = f"exposure.times.{label}"
            if not isinstance(factors, dict):
                raise ConfigError(f"{path}: expected {{tp, tv}}")
            times[str(label)] = (_float(factors, "tp", path), _float(factors, "tv", path))
    return ExposureModel(
        ped_base=_float(raw, "ped_base", "exposure", 0.15),
        veh_base=_float(raw, "veh_base", "exposure", 0.04),
        times=times,
        base_time=str(raw.get("base_time", "5pm")),
    )


def _parse_grid(data: dict, model) -> tuple[GridSpec, float]:
    raw = _section(data, "grid")
    _check_keys(raw, {"spacing_m", "ceiling_m", "origin", "spacing", "dims"}, "grid")
    ceiling = _float(raw, "ceiling_m", "grid", 200.0)
    if "dims" in raw:
        try:
            return GridSpec(tuple(raw["origin"]), tuple(raw["spacing"]), tuple(raw["dims"])), ceiling
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"grid: explicit grid needs origin, spacing and dims ({exc})") from exc
    return case_grid(model, _float(raw, "spacing_m", "grid", 2.0), ceiling), ceiling


def _parse_thresholds(data: dict) -> tuple[float, ...]:
    if "thresholds" not in data:
        raise ConfigError("thresholds: required")
    raw = data["thresholds"]
    if not isinstance(raw, list):
        raise ConfigError("thresholds: expected a list")
    return tuple(_number(t, f"thresholds[{i}]") for i, t in enumerate(raw))


def _parse_times(data: dict, exposure: ExposureModel) -> list[str]:
    raw = data.get("times", [exposure.base_time])
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("times: expected a non-empty list of time labels")
    times = [normalize_time_label(t) for t in raw]
    unknown = [t for t in times if t not in exposure.times]
    if unknown:
        raise ConfigError(f"times: unknown time label {unknown[0]!r} (known: {', '.join(exposure.times)})")
    return times


def scenario_hash(data: dict, referenced: list[Path]) -> str:
    digest = hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8"))
    for path in referenced:
        digest.update(path.read_bytes())
    return digest.hexdigest()


_TOP_LEVEL = {
    "version", "label", "urban_model", "grid", "elevation", "density_override", "impact", "kernel", "uav",
    "failure", "failure_rates", "recovery", "harm", "exposure", "times", "thresholds", "output", "oracle",
    "logging",
}


def load_scenario(yaml_path: str | Path) -> ScenarioFile:
    """Load and validate a scenario file (YAML or JSON). Raises ConfigError naming the offending field."""
    path = Path(yaml_path)
    if not path.exists():
        raise ConfigError(f"scenario: file not found: {path.resolve()}")
    with path.open() as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"scenario: not valid YAML/JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario: expected a mapping at the top level")
    _check_keys(data, _TOP_LEVEL, "scenario")
    if data.get("version") != SCENARIO_VERSION:
        raise ConfigError(f"version: must be {SCENARIO_VERSION}, got {data.get('version')!r}")

    base_dir = path.parent.resolve()
    if "urban_model" not in data:
        raise ConfigError("urban_model: required")
    model_path = _resolve(base_dir, data["urban_model"], "urban_model")
    model = load_urban_model(model_path.read_text())
    referenced = [model_path]

    elevation = density = None
    if data.get("elevation"):
        elevation_path = _resolve(base_dir, data["elevation"], "elevation")
        elevation = load_raster(elevation_path, "elevation")
        referenced.append(elevation_path)
    if data.get("density_override"):
        density_path = _resolve(base_dir, data["density_override"], "density_override")
        density = load_raster(density_path, "density_override")
        referenced.append(density_path)

    impact = _parse_impact(data)
    failures = _parse_failures(data)
    hazard = _parse_hazard(data, failures[0])
    exposure = _parse_exposure(data)
    times = _parse_times(data, exposure)
    grid, ceiling = _parse_grid(data, model)

    raw_kernel = _section(data, "kernel")
    _check_keys(raw_kernel, {"half_extent_m", "delta_m"}, "kernel")
    label = str(data.get("label", path.stem))
    digest = scenario_hash(data, referenced)

    base = ScenarioConfig(
        urban_model=model,
        grid=grid,
        impact=impact,
        hazard=hazard,
        exposure=exposure,
        time_label=times[0],
        thresholds=_parse_thresholds(data),
        ceiling_m=ceiling,
        kernel_half_extent_m=_float(raw_kernel, "half_extent_m", "kernel", DEFAULT_HALF_EXTENT_M),
        kernel_delta_m=_float(raw_kernel, "delta_m", "kernel", DEFAULT_DELTA_M),
        elevation=elevation,
        density_override=density,
        label=label,
        scenario_hash=digest,
    )

    raw_out = _section(data, "output")
    _check_keys(raw_out, {"dir", "mesh", "kernel_cache"}, "output")
    output = OutputConfig(
        dir=(base_dir / str(raw_out.get("dir", f"out/{label}"))).resolve(),
        mesh=_bool(raw_out, "mesh", "output"),
        kernel_cache=(base_dir / raw_out["kernel_cache"]).resolve() if raw_out.get("kernel_cache") else None,
    )

    raw_oracle = _section(data, "oracle")
    _check_keys(raw_oracle, {"samples", "seed", "altitudes"}, "oracle")
    oracle = OracleConfig(
        samples=_int(raw_oracle, "samples", "oracle", 1_000_000),
        seed=_int(raw_oracle, "seed", "oracle", 20240611),
        altitudes=_float_list(raw_oracle, "altitudes", "oracle", (50.0, 100.0, 150.0)),
    )

    raw_log = _section(data, "logging")
    _check_keys(raw_log, {"file", "max_bytes", "backup_count"}, "logging")
    log = LoggingConfig(
        file=str(raw_log.get("file", "risk_terrain.log")),
        max_bytes=_int(raw_log, "max_bytes", "logging", 5_242_880),
        backup_count=_int(raw_log, "backup_count", "logging", 3),
    )

    logger.info("Loaded scenario %s (%d run(s), sha256 %s)", label, len(times) * len(failures), digest[:12])
    return ScenarioFile(path, label, base, times, failures, output, oracle, log, digest)
