class RiskTerrainError(Exception):
    """Root of every error the engine raises on purpose."""

    exit_code = 2


class ConfigError(RiskTerrainError, ValueError):
    pass


class UrbanModelError(ConfigError):
    """Urban-model document does not match the schema. Message starts with the JSON path."""


class GeometryError(RiskTerrainError, ValueError):
    pass


class AmbiguityError(GeometryError):
    pass


class ExtentError(RiskTerrainError, ValueError):
    pass


class DomainError(RiskTerrainError, ValueError):
    pass


class EvaluationError(RiskTerrainError, ArithmeticError):
    pass


class GridFileError(RiskTerrainError, OSError):
    exit_code = 3
