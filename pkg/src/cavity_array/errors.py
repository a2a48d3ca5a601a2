"""Exception and warning types shared across the package."""


class SingularParameterError(ValueError):
    """A perturbative denominator vanishes for some (site, mode)."""


class PreconditionError(ValueError):
    """Site parameters violate the matching conditions of a protocol."""


class SelectivityError(ValueError):
    """Cross-pair decoupling ratio falls below the configured threshold."""


class LabFrameError(ValueError):
    """Lab-frame frequencies disagree with the interaction-picture detunings."""


class AccuracyError(RuntimeError):
    """Propagation drifted from unit norm beyond the allowed bound."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RegimeWarning(UserWarning):
    """A far-detuned or selectivity ratio is below its threshold."""
