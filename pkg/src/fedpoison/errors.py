"""Exception types shared across the package."""


class FedPoisonError(Exception):
    """Base class for all library errors."""


class ValidationError(FedPoisonError):
    """Inconsistent shapes, non-finite values or bad parameters."""


class DomainError(FedPoisonError):
    """A label lies outside the domain of the chosen loss."""


class InfeasibleDualError(FedPoisonError):
    """A hinge dual variable violates the 0 <= y*alpha <= 1 box."""


class InfeasibleSpecError(FedPoisonError):
    """An attack specification cannot be realised on the given federation."""


class DataLoadError(FedPoisonError):
    """A federation CSV directory failed validation."""
