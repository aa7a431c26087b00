"""Shared exception taxonomy for the package."""


class ConfigurationError(ValueError):
    """Shapes, schemas or option combinations that can never work."""


class InputError(ValueError):
    """Malformed or non-finite runtime inputs."""


class StateError(RuntimeError):
    """An operation ran against stale or otherwise invalid state."""


class BudgetExhausted(RuntimeError):
    """Refusal signal raised when the annotation budget is spent."""


class SelectionError(RuntimeError):
    """No candidate subgroup or instance can be selected."""
