"""Exception types shared across the package."""


class SchemaError(ValueError):
    """A tabular input is missing, duplicating, or misnaming a required column."""


class OrderingError(ValueError):
    """Date indices are not strictly increasing with unit spacing."""


class DomainError(ValueError):
    """A numeric input violates a physical or structural precondition."""


class ConfigError(ValueError):
    """A run configuration is malformed, inconsistent, or has unknown fields."""


class TrainingDiverged(RuntimeError):
    """A training loss or parameter became non-finite."""
