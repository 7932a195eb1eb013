"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when input data violates the ingestion contract."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine cannot produce a valid result."""
