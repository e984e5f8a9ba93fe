"""Exception hierarchy for gridflex."""


class GridflexError(Exception):
    """Base class for all gridflex errors."""


class MalformedCase(GridflexError):
    """Case file text could not be parsed."""


class UnsupportedFeature(GridflexError):
    """Case file uses a feature outside the supported subset."""


class UnknownBus(GridflexError):
    """Scenario references a bus number absent from the case."""


class UnknownLine(GridflexError):
    """Scenario references a line absent from the case."""


class DisconnectedNetwork(GridflexError):
    """In-service lines do not form a connected graph."""


class SingularNetwork(GridflexError):
    """Admittance matrix is numerically singular (network disconnection)."""


class UnbalancedInjection(GridflexError):
    """Nodal injection vector does not sum to zero."""


class NotNormalized(GridflexError):
    """Participation factors do not sum to one."""


class InfeasibleMargin(GridflexError):
    """Uncertainty margins exceed physical limits."""


class DegenerateStd(GridflexError):
    """Flow standard deviation is at its floor; sensitivity undefined."""


class InfeasibleProblem(GridflexError):
    """Dispatch subproblem admits no feasible point."""


class NumericalLimit(GridflexError):
    """Conic solver stopped before reaching the requested accuracy."""


class DomainError(GridflexError):
    """Numeric argument outside the domain of the operation."""
