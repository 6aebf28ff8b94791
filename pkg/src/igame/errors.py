"""Exception hierarchy.

Every error carries a stable ``code`` string; the CLI maps error classes to
exit codes (see :mod:`igame.cli`).
"""

from __future__ import annotations


class IGameError(Exception):
    code = "ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


# -- configuration / validation (exit 2) -----------------------------------

class ConfigError(IGameError):
    code = "CONFIG"


class ExprSyntaxError(ConfigError):
    code = "SYNTAX"

    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset(),
                 code: str | None = None):
        self.offset = offset
        self.expected = frozenset(expected)
        exp = ", ".join(sorted(self.expected))
        full = f"{message} at offset {offset}" + (f" (expected one of: {exp})" if exp else "")
        super().__init__(full, code)


class GameValidationError(ConfigError):
    code = "VALIDATION"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{d.code} at {d.path}: {d.message}" for d in self.diagnostics)
        super().__init__(f"invalid game: {lines}")
        if self.diagnostics:
            self.code = self.diagnostics[0].code


class DepthCapError(ConfigError):
    code = "DEPTH_CAP"


# -- numeric failures (exit 3) ---------------------------------------------

class NumericError(IGameError):
    code = "NUMERIC"


class UnboundVariableError(NumericError):
    code = "UNBOUND_VARIABLE"

    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unbound variable(s): " + ", ".join(self.names))


class EvalDomainError(NumericError):
    code = "DOMAIN"

    def __init__(self, message: str, node: str | None = None):
        self.node = node
        super().__init__(message if node is None else f"{message} in {node}")


class SolverError(NumericError):
    """NO_CONVERGENCE or SINGULAR_JACOBIAN from a Newton solve."""


class SubstitutionError(NumericError):
    code = "SINGULAR_SUBSTITUTION"


class SimulationError(NumericError):
    """Raised by ``simulate``; ``partial`` holds the samples computed so far."""

    def __init__(self, message: str, partial=None, cause: IGameError | None = None,
                 code: str | None = None):
        self.partial = partial
        self.cause = cause
        super().__init__(message, code or (cause.code if cause is not None else None))


# -- insufficient data (exit 4) --------------------------------------------

class InsufficientDataError(IGameError):
    code = "INSUFFICIENT_DATA"
