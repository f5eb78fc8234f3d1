"""Exception types raised across the package."""


class HypoError(Exception):
    """Base class for every error raised by this package."""


class DomainError(HypoError, ValueError):
    """An input lies outside the domain of a function (NaN, inf, log-prob > 0)."""


class ParameterError(HypoError, ValueError):
    """A hyperparameter or configuration value is invalid."""


class ConfigError(ParameterError):
    """An experiment config failed validation; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class CalibrationError(HypoError):
    def __init__(self, message: str, best_fraction: float, best_misalignment: float):
        super().__init__(
            f"{message} (best fraction {best_fraction:.4f} at misalignment {best_misalignment:.4g})"
        )
        self.best_fraction = best_fraction
        self.best_misalignment = best_misalignment


class TrainingError(HypoError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, step: int, record_ids=()):
        ids = list(record_ids)
        shown = ids[:10]
        suffix = "" if len(ids) <= 10 else f" (+{len(ids) - 10} more)"
        super().__init__(f"step {step}: {message}; records {shown}{suffix}")
        self.step = step
        self.record_ids = ids
