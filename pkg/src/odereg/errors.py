"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible extents or channel counts."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataFormatError(ValueError):
    """On-disk payload or header violates the file format."""


class GradientError(RuntimeError):
    """Autodiff contract violation (e.g. backward from a non-scalar)."""


class IntegrationError(RuntimeError):
    """ODE integration aborted; message carries the failing step index."""


class OptimizerError(RuntimeError):
    """Optimizer step rejected (e.g. non-finite gradient)."""
