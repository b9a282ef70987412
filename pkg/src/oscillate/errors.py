"""Exception hierarchy shared across the package."""


class OscillateError(Exception):
    """Base class for every error raised by this package."""


class DomainError(OscillateError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class StencilUnavailableError(OscillateError, IndexError):
    """A finite-difference stencil would leave the grid."""


class DegeneracyError(OscillateError):
    """An operator failed an ellipticity diagnostic."""


class MonotonicityError(OscillateError):
    """Coefficients do not admit a monotone nine-point stencil."""

    def __init__(self, message, node=None, entry=None):
        super().__init__(message)
        self.node = node
        self.entry = entry


class NonConvergenceError(OscillateError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=float("nan"), history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class CrossMethodDisagreement(OscillateError):
    """Two routes to the same ergodic constant disagree beyond tolerance."""


class ExtrapolationError(OscillateError):
    """A tabulated quantity was requested outside its table."""


class ConstructionError(OscillateError):
    """An operator family could not be built with the requested parameters."""


class AuditInapplicable(OscillateError):
    """Inputs do not satisfy the hypotheses of an audit or check."""


class SpecSchemaError(OscillateError):
    """A structured document does not match its schema.

    ``line`` is the 1-based source line when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class TabulationError(OscillateError):
    """A table node failed; ``partial`` holds what was computed (NaN elsewhere)."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
