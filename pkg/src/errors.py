""" Exceptions raised across the project, grouped by the module that raises them. """


class PLaplaceError(ValueError):
    """Base class for every error raised on bad input or failed checks."""


# space
class SpaceError(PLaplaceError):
    pass


class DisconnectedGraph(SpaceError):
    pass


class NonpositiveWeight(SpaceError):
    pass


class EmptyDomain(SpaceError):
    pass


class EmptyBoundary(SpaceError):
    pass


class MalformedSpace(SpaceError):
    pass


class EmptySet(SpaceError):
    pass


class DegenerateGrid(SpaceError):
    pass


# calculus
class CalculusError(PLaplaceError):
    pass


class InvalidPath(CalculusError):
    pass


class IsolatedVertex(CalculusError):
    pass


class EmptyFamily(CalculusError):
    pass


class SolverFailure(CalculusError):
    pass


class DegenerateExponent(CalculusError):
    pass


# energy
class EnergyError(PLaplaceError):
    pass


class NotMeanZero(EnergyError):
    pass


class BadRadii(EnergyError):
    pass


class UnbalancedData(EnergyError):
    pass


class BadExponent(EnergyError):
    pass


# solver
class SolverError(PLaplaceError):
    pass


class TooManyVertices(SolverError):
    pass


class NotConverged(SolverError):
    pass


# verify
class VerifyError(PLaplaceError):
    pass


class BallNotInterior(VerifyError):
    pass


class BadRadius(VerifyError):
    pass


class HypothesisFails(VerifyError):
    pass


# cli
class ConfigError(PLaplaceError):
    pass


class BadParams(ConfigError):
    pass
