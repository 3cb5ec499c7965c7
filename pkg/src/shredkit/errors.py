"""Exception hierarchy shared across the package."""


class ShredKitError(Exception):
    """Base class for all package-specific errors."""


class ConstantFieldError(ShredKitError):
    """A field has zero range, so min-max scaling is undefined."""


class RatioError(ShredKitError):
    """Split ratios do not sum to one."""


class FormatError(ShredKitError):
    """A binary container has a bad magic, version, or truncated structure."""


class DimensionError(ShredKitError):
    """Declared dimensions are inconsistent with the actual payload."""


class ConvergenceError(ShredKitError):
    """The underlying eigensolver/SVD routine failed to converge."""


class EmptySpectrumError(ShredKitError):
    """All singular values are zero; rank selection is undefined."""


class OrderError(ShredKitError):
    """Reduced blocks were supplied out of the canonical field order."""


class ExhaustionError(ShredKitError):
    """More distinct sensor subsets were requested than exist."""


class GeometryError(ShredKitError):
    """A sensor channel does not fit inside the fluid domain."""


class ShapeError(ShredKitError):
    """An array argument has the wrong shape for the network."""


class DivergenceError(ShredKitError):
    """Training loss became non-finite."""


class CflError(ShredKitError):
    """The advective CFL limit was exceeded during time stepping."""


class PoissonDivergenceError(ShredKitError):
    """The pressure solve did not reach the configured tolerance."""


class UnknownPerturbation(ShredKitError):
    """Unrecognised perturbation name for the solver configuration."""


class ConfigError(ShredKitError):
    """A run configuration file is malformed or has unknown keys."""
