"""Exception hierarchy shared by every module."""


class OffDaeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OffDaeError, ValueError):
    """Inputs have the wrong shape, are not normalized, or are inconsistent."""


class EvaluationError(OffDaeError):
    """A Bellman system could not be solved (e.g. non-episodic with discount 1)."""


class FitError(OffDaeError):
    """A fitting routine cannot produce an estimate from the given data."""


class SupportError(OffDaeError, KeyError):
    """A nature-advantage entry was read outside the transition support."""


class DomainError(OffDaeError, ValueError):
    """A closed-form expression was evaluated outside its domain."""


class DivergenceError(OffDaeError):
    """Training produced values beyond the divergence guard."""
