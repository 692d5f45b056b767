"""Exception types shared across the package."""


class FilterDegeneracyError(RuntimeError):
    """Every importance weight vanished at one filter step."""

    def __init__(self, time_index: int):
        self.time_index = time_index
        super().__init__(
            f"all importance weights vanished at step t={time_index}"
        )


class DegenerateBackwardRowError(RuntimeError):
    """A backward kernel row has zero total mass for some target particle."""

    def __init__(self, time_index: int, target_index: int | None = None):
        self.time_index = time_index
        self.target_index = target_index
        where = f" (target particle {target_index})" if target_index is not None else ""
        super().__init__(
            f"backward row at t={time_index}{where} has no support"
        )


class UnsupportedModelError(ValueError):
    """The model lacks a structural feature the operation requires."""


class UnsupportedLagError(ValueError):
    """The functional lag is outside the range the operation supports."""


class ConfigError(ValueError):
    """A config file failed validation; carries a field or line diagnostic."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
