from typing import Dict, Type


class DomainError(Exception):
    """Root of every error raised by the laboratory."""

    exit_code = 1


# ---------- Input errors (exit 1) ----------

class InputError(DomainError):
    exit_code = 1

class ValidationError(InputError): ...
class ConfigError(InputError): ...
class InvalidRangeError(InputError): ...
class InvalidAnnulusError(InputError): ...
class TableRangeError(InputError): ...
class UnsupportedDimensionError(InputError): ...
class InvalidCondenserError(InputError): ...
class InvalidCompactumError(InputError): ...


# ---------- Invariant failures (exit 2) ----------

class InvariantError(DomainError):
    """A numerical invariant did not hold. `invariant` names it for reports."""

    exit_code = 2
    invariant = "invariant"

    def __init__(self, detail: str, invariant: str | None = None):
        super().__init__(detail)
        if invariant is not None:
            self.invariant = invariant
        self.detail = detail

    def __str__(self) -> str:
        return f"{self.invariant}: {self.detail}"


class AssertionFailure(InvariantError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(detail, invariant=invariant)


class DivergedIntegrandError(InvariantError):
    invariant = "diverged-integrand"

class EvansUndefinedError(InvariantError):
    invariant = "evans-undefined"

class DegenerateLevelsError(InvariantError):
    invariant = "degenerate-levels"

class InvalidWitnessError(InvariantError):
    invariant = "invalid-witness"

class CannotConstructError(InvariantError):
    invariant = "cannot-construct"

class GridTooSmallError(InvariantError):
    invariant = "grid-too-small"

class InfeasibleObstacleError(InvariantError):
    invariant = "infeasible-obstacle"

class OutOfTrustedRangeError(InvariantError):
    invariant = "out-of-trusted-range"


def register_error_handlers() -> Dict[Type[DomainError], int]:
    """Exception class -> process exit code, most specific first."""
    return {
        InvariantError: InvariantError.exit_code,
        InputError: InputError.exit_code,
        DomainError: DomainError.exit_code,
    }


def exit_code_for(exc: BaseException) -> int:
    for cls, code in register_error_handlers().items():
        if isinstance(exc, cls):
            return code
    return 1
