class NumericalError(Exception):
    """Raised when a computation produces non-finite values."""
