"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented categories without inspecting messages.
"""

from __future__ import annotations


class UnfreezeError(Exception):
    exit_code = 1


class ValidationError(UnfreezeError, ValueError):
    """One or more invariants of a spec or config were violated.

    All violations are collected and reported together.
    """

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(UnfreezeError):
    exit_code = 2

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SolverError(UnfreezeError):
    exit_code = 3


class LineSearchStall(SolverError):
    pass


class NonFiniteEnergy(SolverError):
    pass


class MaxItersExceeded(SolverError):
    pass


class NoConvergence(UnfreezeError):
    exit_code = 4

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class TrappingExit(NoConvergence):
    pass


class BracketError(UnfreezeError):
    exit_code = 5


class SingularDomain(BracketError, ValueError):
    """A singular reaction was asked for a value at a non-positive argument."""


class NotASubsolution(BracketError):
    def __init__(self, message, node=None, margin=None):
        self.node = node
        self.margin = margin
        super().__init__(message)


class NotASupersolution(BracketError):
    def __init__(self, message, node=None, margin=None):
        self.node = node
        self.margin = margin
        super().__init__(message)


class BracketViolation(BracketError):
    pass


class BracketLadderFailed(BracketError):
    pass
