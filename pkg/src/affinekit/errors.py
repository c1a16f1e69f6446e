"""Exception taxonomy.

Two families matter downstream: hypothesis failures (the requested object is
not covered by the model's regularity regime; CLI exit status 2) and numerical
contract breaches detected at runtime (CLI exit status 3).
"""


class AffineError(Exception):
    """Base class for all library errors."""


class PreconditionError(AffineError):
    """A mathematical hypothesis of the requested operation is not met."""


class StructuralError(PreconditionError):
    """Malformed input: dimension mismatch, bad grid, unknown option."""


class AdmissibilityError(PreconditionError):
    """The parameter set fails one of the admissibility conditions."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RegularityError(PreconditionError):
    """Requested derivative orders or regime not covered by the density theory."""


class IntegrabilityError(RegularityError):
    """Frequency-side decay too weak to certify the requested inversion."""


class DegeneracyError(PreconditionError):
    """A diffusion coefficient required to be positive vanishes."""


class StabilityError(PreconditionError):
    """The drift spectrum is not contained in the open left half-plane."""


class NumericsError(AffineError):
    """A numerical quality contract was breached."""


class FlowDivergenceError(NumericsError):
    """Adaptive integration failed (step underflow or step budget exhausted)."""

    def __init__(self, message, t_last=None):
        super().__init__(message)
        self.t_last = t_last


class FlowDomainError(NumericsError):
    """The integrated flow left the admissible domain beyond clamp tolerance."""


class MassContractError(NumericsError):
    """An inverted density failed its unit-mass contract."""


class ResidueError(NumericsError):
    """Imaginary residue of an inverted field exceeded its contract."""


class CoverageError(NumericsError):
    """A grid fails to cover enough of the sampled range."""


class ConvergenceError(NumericsError):
    """An iterative computation did not converge within its budget."""


class FitError(NumericsError):
    """A diagnostic fit was rejected."""
