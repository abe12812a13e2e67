"""Exception hierarchy for fleetopt."""


class FleetOptError(Exception):
    """Base class for every error raised by fleetopt."""


# core types / weights
class AllZeroWeights(FleetOptError, ValueError):
    pass


class NegativeWeight(FleetOptError, ValueError):
    pass


class InvalidConfiguration(FleetOptError, ValueError):
    pass


# objective
class NonFinite(FleetOptError, ValueError):
    pass


class EmptyFleet(FleetOptError, ValueError):
    pass


class LengthMismatch(FleetOptError, ValueError):
    pass


class UnnormalizedWeights(FleetOptError, ValueError):
    pass


# representative selection
class DegenerateFleet(FleetOptError, ValueError):
    pass


class InvalidK(FleetOptError, ValueError):
    pass


class RangeTooNarrow(FleetOptError, ValueError):
    pass


class NoNonRepresentatives(FleetOptError, ValueError):
    pass


# surrogate
class InsufficientFeasibleTrials(FleetOptError, ValueError):
    pass


class SingularGram(FleetOptError, ArithmeticError):
    pass


# sensitivity
class TooFewFeasibleTrials(FleetOptError, ValueError):
    pass


class RankDeficient(FleetOptError, ValueError):
    def __init__(self, message, collinear=()):
        super().__init__(message)
        self.collinear = tuple(collinear)


# evaluation
class EvaluatorFailure(FleetOptError, RuntimeError):
    pass


class UnknownModel(EvaluatorFailure, KeyError):
    pass


class UnknownTechnique(EvaluatorFailure, KeyError):
    pass


class ExternalCommandFailed(EvaluatorFailure):
    pass


class InvalidSpec(FleetOptError, ValueError):
    pass


class GridTooLarge(FleetOptError, ValueError):
    pass


# templates
class DimCoverageGap(FleetOptError, ValueError):
    pass


class DuplicateTechnique(FleetOptError, ValueError):
    pass


class OverrideOnStandardizedDim(FleetOptError, ValueError):
    pass


class OverrideOutOfBounds(FleetOptError, ValueError):
    pass


class StaleParent(FleetOptError, RuntimeError):
    pass


class RegistryCorrupt(FleetOptError, ValueError):
    pass


# cli / config
class ConfigParseError(FleetOptError, ValueError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigValidationError(FleetOptError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingArtifact(FleetOptError, FileNotFoundError):
    pass
