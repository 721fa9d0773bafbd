"""Exception types shared across the library."""


class MfChaosError(Exception):
    """Base class for library errors."""


class ParameterError(MfChaosError, ValueError):
    """Invalid argument value (orders, counts, coefficients, ...)."""


class DimensionError(MfChaosError, ValueError):
    """Mismatched shapes, dimensions or sample counts."""


class DivergenceError(MfChaosError, RuntimeError):
    """A simulated state left the finite range; names particle and node."""


class UnsupportedModelError(MfChaosError, ValueError):
    """Operation requires structure the model does not declare
    (e.g. distribution-free invertible diffusion)."""


class ConfigError(MfChaosError, ValueError):
    """Malformed experiment configuration."""


class FitError(MfChaosError, RuntimeError):
    """Rate fit impossible (too few usable ladder points)."""
