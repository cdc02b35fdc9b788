"""Exception hierarchy shared by every module."""


class HgtsmeError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class DomainError(HgtsmeError, ValueError):
    category = "domain"


class NumericalError(HgtsmeError, ArithmeticError):
    category = "numerical"


class IngestionError(HgtsmeError, ValueError):
    category = "ingestion"


class ConfigError(HgtsmeError, ValueError):
    category = "config"


class SamplerError(HgtsmeError, RuntimeError):
    """A kernel failed mid-chain; carries the iteration and kernel name."""

    category = "sampler"

    def __init__(self, iteration, kernel, cause):
        self.iteration = iteration
        self.kernel = kernel
        self.cause = cause
        super().__init__(f"iteration {iteration}, kernel {kernel}: {cause}")
