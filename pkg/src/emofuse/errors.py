"""Exception types shared across the package."""


class EmofuseError(Exception):
    """Base class for all package errors."""


class ShapeError(EmofuseError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(EmofuseError):
    """A documented precondition was violated by the caller."""


class DataError(EmofuseError):
    """Malformed or inconsistent input data (files, records, labels)."""


class ConfigError(EmofuseError):
    """Invalid or inconsistent run configuration."""


class NumericError(EmofuseError):
    """Numeric failure at runtime (non-finite loss, divergence)."""
