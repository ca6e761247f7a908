"""Exception hierarchy shared by all poissonkit modules."""


class PoissonkitError(Exception):
    """Base class for all toolkit errors."""


class ExprSyntaxError(PoissonkitError):
    """Raised on malformed expression text.

    Carries the 0-based character ``position`` and the token kinds that
    would have been accepted there.
    """

    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(expected)
        detail = f"{message} at position {position}"
        if self.expected:
            detail += " (expected " + " or ".join(self.expected) + ")"
        super().__init__(detail)


class UndeclaredVariableError(PoissonkitError):
    """An identifier was used that is not in the declared variable list."""

    def __init__(self, name, position=None):
        self.name = name
        self.position = position
        where = "" if position is None else f" at position {position}"
        super().__init__(f"undeclared variable {name!r}{where}")


class EvalDomainError(PoissonkitError):
    """Evaluation left the real domain (log of nonpositive, division by
    zero, sqrt of negative, 0 to a negative power, overflow)."""

    def __init__(self, message, subexpr=None):
        self.subexpr = subexpr
        if subexpr is not None:
            message = f"{message} in {subexpr!r}"
        super().__init__(message)


class EmptySampleSetError(PoissonkitError):
    """The exclusion predicate rejected every drawn sample.

    A vacuous verification pass is never reported silently; callers must
    widen the domain or fix the predicate.
    """


class ModelFileError(PoissonkitError):
    """Model document failed to load or violates the schema."""


class ChartError(PoissonkitError):
    """A Darboux chart hypothesis failed; ``condition`` names which one."""

    def __init__(self, condition, message):
        self.condition = condition
        super().__init__(f"[{condition}] {message}")


class IntegrationError(PoissonkitError):
    """Numerical integration failed; carries the time and state reached."""

    def __init__(self, message, t=None, state=None):
        self.t = t
        self.state = state
        if t is not None:
            message = f"{message} (t={t!r})"
        super().__init__(message)


class InternalConsistencyError(PoissonkitError):
    """Two redundant computations of the same quantity disagreed.

    This indicates a bug in the toolkit, not bad user input, and is always
    surfaced loudly instead of being folded into a pass/fail verdict.
    """
