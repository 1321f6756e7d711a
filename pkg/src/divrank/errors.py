"""Exception types shared across the package."""


class DivrankError(Exception):
    """Base class for all package errors."""


class ContractViolation(DivrankError):
    """An operation was called with arguments that violate its contract."""


class ConfigurationError(DivrankError):
    """A configuration value is out of its legal range."""


class CorpusFormatError(DivrankError):
    """A corpus file is malformed (bad magic, bounds, checksum, ...)."""


class CheckpointFormatError(DivrankError):
    """A checkpoint file is malformed or has an unsupported version."""


class DivergenceError(DivrankError):
    """Training produced a non-finite loss."""
