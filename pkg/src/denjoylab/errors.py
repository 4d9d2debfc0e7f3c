"""Exception hierarchy shared by every module."""


class DenjoyLabError(Exception):
    """Base class for all library errors."""


class SingularMatrix(DenjoyLabError, ValueError):
    pass


class DimensionMismatch(DenjoyLabError, ValueError):
    pass


class NonSPDInput(DenjoyLabError, ValueError):
    pass


class OrientationReversing(DenjoyLabError, ValueError):
    pass


class NonFinite(DenjoyLabError, ArithmeticError):
    pass


class BudgetExceeded(DenjoyLabError, ValueError):
    pass


class TailTooLarge(DenjoyLabError, ValueError):
    pass


class InfeasibleWindow(DenjoyLabError, ValueError):
    pass


class RationalOrbit(DenjoyLabError, ValueError):
    pass


class NotInSystem(DenjoyLabError, LookupError):
    pass


class WindowEdge(DenjoyLabError, IndexError):
    pass


class OutsideBall(DenjoyLabError, ValueError):
    pass


class NotDisjoint(DenjoyLabError, ValueError):
    pass


class DegenerateSamples(DenjoyLabError, ValueError):
    pass


class PerStepViolation(DenjoyLabError):
    def __init__(self, step, distance, allowed):
        self.step = step
        self.distance = distance
        self.allowed = allowed
        super().__init__(
            f"step {step}: distortion {distance!r} exceeds M*vol = {allowed!r}"
        )


class UndefinedAtSample(DenjoyLabError):
    pass


class NotFound(DenjoyLabError):
    """No trap time inside the search horizon; carries the closest near-miss."""

    def __init__(self, message, near_miss=None):
        self.near_miss = near_miss
        super().__init__(message)


class NoConvergence(DenjoyLabError):
    def __init__(self, message, best_point=None, best_residual=None):
        self.best_point = best_point
        self.best_residual = best_residual
        super().__init__(message)


class IncompleteEvidence(DenjoyLabError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("incomplete evidence: " + ", ".join(self.missing))


class ConfigError(DenjoyLabError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
