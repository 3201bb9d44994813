"""Exception hierarchy shared by all modules."""


class MassiveSLEError(Exception):
    """Base class for all package errors."""


# -- lattice ---------------------------------------------------------------

class DegenerateDomain(MassiveSLEError):
    """Shape has no interior cells at the requested mesh."""


class NotSimplyConnected(MassiveSLEError):
    """Interior cell set fails the Euler / connectivity check."""


class DegenerateMarks(MassiveSLEError):
    """Boundary marks coincide after snapping to the lattice."""


class NegativeMass(MassiveSLEError):
    """Mass-squared field contains a negative value."""


class SolverDiverged(MassiveSLEError):
    """Iterative linear solve failed to reach the residual tolerance."""


class TooLarge(MassiveSLEError):
    """Dense-mode operation requested above the configured size cap."""


class TooCloseToBoundary(MassiveSLEError):
    """Conformal radius requested too close to the domain boundary."""


# -- gff / reweight --------------------------------------------------------

class FactorizationFailed(MassiveSLEError):
    """Operator is not positive definite; Cholesky failed."""


class StencilUnresolvable(MassiveSLEError):
    """Circle-average radius below the resolvable mesh scale."""


class EmptyBatch(MassiveSLEError):
    """A batch operation received no samples."""


class NonConstantMass(MassiveSLEError):
    """Spectral shortcut requires a constant mass field."""


class AllWeightsZero(MassiveSLEError):
    """Every weight underflowed to zero; use log-space reductions."""


# -- loewner ---------------------------------------------------------------

class StepTooLarge(MassiveSLEError):
    """A tracked point entered the swallowing guard radius."""


class InversionUnstable(MassiveSLEError):
    """Trace inversion lost accuracy near the curve tip."""


class MaskDisconnected(MassiveSLEError):
    """Slit masking disconnected the computational grid."""


class UnsupportedUniformizer(MassiveSLEError):
    """No half-plane uniformizer available for this domain shape."""


# -- loop soup -------------------------------------------------------------

class RetryExhausted(MassiveSLEError):
    """Bridge rejection sampling exceeded the retry cap."""


class CenteringUnavailable(MassiveSLEError):
    """Occupation-field centering term has not been computed."""


class DegenerateInterior(MassiveSLEError):
    """Contour encloses no lattice cells."""


# -- estimators / harness --------------------------------------------------

class TooFewSamples(MassiveSLEError):
    """Statistical routine needs at least two samples."""


class MeshMismatch(MassiveSLEError):
    """Scaled-domain comparison requires commensurate meshes."""


class ConfigInvalid(MassiveSLEError):
    """Experiment configuration failed validation.

    Carries the offending field name when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class MissingResults(MassiveSLEError):
    """Plot emission requested before results exist."""
