"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Distribution parameters violate their domain (weights, scales, tail)."""


class DomainError(ValueError):
    """A distribution function was evaluated outside its support or level range."""


class ConfigError(ValueError):
    """Model or training configuration is inconsistent."""


class FormatError(ValueError):
    """A serialized model, spec or report does not match the expected schema."""


class IngestionError(ValueError):
    """Input data could not be parsed or fails a domain check."""


class TrainingAborted(RuntimeError):
    """Training produced a non-finite loss or gradient.

    ``last_good`` holds the most recent finite weights (or ``None``) and
    ``diagnostics`` a short dict describing where it happened.
    """

    def __init__(self, message, last_good=None, diagnostics=None):
        super().__init__(message)
        self.last_good = last_good
        self.diagnostics = diagnostics or {}
