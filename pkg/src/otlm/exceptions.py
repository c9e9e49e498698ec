"""Exception hierarchy for the OTLM solver."""


class OtlmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(OtlmError, ValueError):
    """Input data violates a type invariant (NaN, negative entries, bad shape...)."""


class DimensionMismatch(InvalidInputError):
    pass


class DomainError(OtlmError, ValueError):
    """Argument outside the domain of a special function."""


class EmptyRowError(OtlmError):
    """A cost or kernel row/column has no stored entries.

    For kernels this usually means epsilon is too small for the cost scale:
    every entry in the row underflowed and was dropped.
    """


class DegenerateRow(OtlmError):
    """X w vanishes on a row where the dictionary has support."""


class NonPositiveEffTarget(OtlmError):
    """The effective MM target is zero on a row where the dictionary has support."""


class Infeasible(OtlmError):
    """The transport problem cannot satisfy its marginal constraints."""


class NumericalOverflow(OtlmError):
    """A scaling vector left the representable range."""


class BracketFailure(OtlmError):
    """A 1-D root bracket could not be established."""


class NonConvergence(OtlmError):
    """An iterative reference routine hit its iteration cap."""
