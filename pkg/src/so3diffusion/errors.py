"""Exception types raised by the so3diffusion package."""


class So3DiffusionError(Exception):
    """Base class for all package-specific errors."""


class NotSkew(So3DiffusionError, ValueError):
    """Input matrix is not antisymmetric within tolerance."""


class NotRotation(So3DiffusionError, ValueError):
    """Input matrix is not orthogonal with unit determinant within tolerance."""


class NonUnitQuaternion(So3DiffusionError, ValueError):
    """Quaternion norm deviates from 1 beyond tolerance."""


class DegenerateFrame(So3DiffusionError, ValueError):
    """Six-dimensional frame input is numerically degenerate (near-zero or
    near-parallel vectors)."""


class NonFiniteDensity(So3DiffusionError, FloatingPointError):
    """Heat-kernel density evaluation produced a non-finite value."""


class NonPositiveDensity(So3DiffusionError, FloatingPointError):
    """Heat-kernel density underflowed to a non-positive value."""


class NearCutLocus(So3DiffusionError, ValueError):
    """Relative rotation angle is too close to pi for a well-defined score."""


class UnconvergedSeries(So3DiffusionError, RuntimeError):
    """Heat-kernel character series failed to converge below the term cap."""


class NonFiniteField(So3DiffusionError, FloatingPointError):
    """Vector field returned a non-finite increment during integration."""


class StepTooLarge(So3DiffusionError, RuntimeError):
    """A single integrator increment exceeded the angle-pi trust region."""


class ShapeMismatch(So3DiffusionError, ValueError):
    """Array arguments have inconsistent shapes."""


class NonFiniteLoss(So3DiffusionError, FloatingPointError):
    """Training loss became non-finite.

    Carries the last finite-loss parameters so callers can recover.
    """

    def __init__(self, message, step=None, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


class InsufficientSamples(So3DiffusionError, ValueError):
    """Too few samples for the requested statistical procedure."""


class UnknownTarget(So3DiffusionError, ValueError):
    """Requested target distribution name is not registered."""


class FileFormatError(So3DiffusionError, ValueError):
    """On-disk record violates the documented binary or text layout."""


class ChecksumError(FileFormatError):
    """Stored CRC32 does not match the payload."""


class VersionMismatch(FileFormatError):
    """On-disk record was written with an unsupported format version."""


class ConfigError(So3DiffusionError, ValueError):
    """Run configuration failed schema validation."""
