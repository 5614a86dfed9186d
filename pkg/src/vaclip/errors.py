"""Exception types shared across the toolkit."""


class VaclipError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(VaclipError):
    """Shape or dimension mismatch between tensors or network layers."""


class ContractError(VaclipError):
    """An API precondition was violated (bad argument, wrong usage)."""


class IntegrationError(VaclipError):
    """A numerical integration step produced a non-finite or diverging state.

    Carries the step index (and normalized time when known) so callers can
    segment or report where the solve broke down.
    """

    def __init__(self, message, step=None, tau=None):
        super().__init__(message)
        self.step = step
        self.tau = tau


class OracleError(VaclipError):
    """The analytical circuit reference could not produce a trustworthy result."""


class MetricError(VaclipError):
    """A metric is undefined for the given inputs (e.g. zero-energy target)."""


class AudioIOError(VaclipError):
    """WAV or manifest file could not be read or written."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class TrainingError(VaclipError):
    """Training aborted (NaN gradients, too many diverged subsequences)."""
