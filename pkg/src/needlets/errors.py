"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class NumericIntegrityError(RuntimeError):
    """An internal numerical sanity check failed (e.g. imaginary residue too large)."""
