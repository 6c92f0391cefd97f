"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ContractViolation (and subclasses) -> 1,
InvalidNumerics (and subclasses) -> 2.
"""


class ContractViolation(Exception):
    """An argument or state violated a documented precondition."""


class ConfigError(ContractViolation):
    """A pipeline configuration is internally inconsistent.

    Raised at construction time, never mid-forward.
    """


class UnsatisfiableBudget(ContractViolation):
    """An activation budget is smaller than one region's working set."""


class InvalidNumerics(Exception):
    """A computation encountered NaN or infinite values."""


class TrainingDiverged(InvalidNumerics):
    """Training loss became non-finite."""
