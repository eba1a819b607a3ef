"""Exception types shared across the lab."""


class ComplianceLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ComplianceLabError):
    """Bad, missing or unknown scenario configuration."""


class DegenerateNormalError(ComplianceLabError):
    """Surface normal is undefined at the queried point."""


class SingularConfigError(ComplianceLabError):
    """Arm configuration too close to a Jacobian singularity for strict mode."""


class SimulationFault(ComplianceLabError):
    """A plant-state invariant broke during integration."""

    def __init__(self, message, tick=None):
        super().__init__(message)
        self.tick = tick


class InsufficientContactError(ComplianceLabError):
    """Not enough contact signal to estimate friction or force direction."""


class NotReadyError(ComplianceLabError):
    """Sliding window buffers are not yet full."""


class EmptyEnsembleError(ComplianceLabError):
    """An operation that needs at least one predictive model got none."""


class InsufficientDataError(ComplianceLabError):
    """A training/growth input is too short to form a single window."""


class RankDeficiencyError(ComplianceLabError):
    """Regularized least-squares system is numerically singular."""


class DivergenceError(ComplianceLabError):
    """Training loss became non-finite."""
