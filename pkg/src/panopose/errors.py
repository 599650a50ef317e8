"""Shared exception types."""


class ValidationError(ValueError):
    """Input data violates a documented contract (bad file, bad shape, bad value)."""
