"""Exception hierarchy. Each leaf maps to one CLI exit code (see ``cli.EXIT_CODES``)."""

from __future__ import annotations


class ScNoiseError(Exception):
    """Base class for all analyzer errors."""


# -- netlist / plan -------------------------------------------------------

class NetlistError(ScNoiseError):
    pass


class NetlistSyntaxError(NetlistError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class DuplicateElementName(NetlistError):
    pass


class UnknownPhase(NetlistError):
    pass


class NonPositiveValue(NetlistError):
    pass


class MissingGround(NetlistError):
    pass


class PlanError(ScNoiseError):
    pass


class UnresolvedName(PlanError):
    pass


class PhaseOutOfRange(PlanError):
    pass


class EmptyContributions(PlanError):
    pass


# -- analysis -------------------------------------------------------------

class SingularNetwork(ScNoiseError):
    pass


class SenseNodeIsolated(ScNoiseError):
    pass


class NoFeedbackPath(ScNoiseError):
    pass


class MultipleOtas(ScNoiseError):
    pass


class OtaPresent(ScNoiseError):
    pass


class NegativeVariance(ScNoiseError):
    pass


class IndeterminateSolve(ScNoiseError):
    pass


class SingularAtFrequency(ScNoiseError):
    def __init__(self, f: float):
        super().__init__(f"G + j2πfC is singular at f = {f:g} Hz")
        self.f = f


class NotConverged(ScNoiseError):
    pass


class TimestepTooCoarse(ScNoiseError):
    pass


class UnstableIntegration(ScNoiseError):
    pass


class SweepEmpty(ScNoiseError):
    pass
