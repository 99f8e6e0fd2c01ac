class L2MetricsError(Exception):
    """Base class for errors raised by this package."""


class DegenerateBase(L2MetricsError, ValueError):
    """A base tensor that must be positive definite is singular."""


class InvalidPath(L2MetricsError, ValueError):
    """A discrete path leaves the cone where its length needs it to stay inside."""


class DomainError(L2MetricsError, ValueError):
    """An argument lies outside the domain of a map (e.g. conformal factor below -4/n)."""


class DomainMismatch(L2MetricsError, ValueError):
    """Two fields, masks or paths live on different grids."""


class ResolutionError(L2MetricsError, ValueError):
    """A grid is too coarse for the requested construction."""
