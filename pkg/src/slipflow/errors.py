"""Exception hierarchy. Each error knows its CLI exit code and how to render
itself as a machine-readable failure record."""

from __future__ import annotations

from typing import Any

EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_SMALLNESS = 4


class SlipFlowError(Exception):
    exit_code = EXIT_NONCONVERGENCE

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details

    def record(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
            "details": _jsonable(self.details),
        }


class ConfigurationError(SlipFlowError, ValueError):
    exit_code = EXIT_CONFIG


class ConfigParseError(ConfigurationError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message, key=key, line=line)
        self.key = key
        self.line = line


class NumericError(SlipFlowError, ArithmeticError):
    """Non-finite values or a stagnating numerical kernel."""


class ContractViolation(SlipFlowError, ValueError):
    exit_code = EXIT_CONFIG


class PreconditionError(SlipFlowError, ValueError):
    pass


class GaugeError(SlipFlowError):
    pass


class SmallnessViolation(SlipFlowError):
    exit_code = EXIT_SMALLNESS


class DensityFloor(SmallnessViolation):
    pass


class BallEscape(SmallnessViolation):
    pass


class SolverDiverged(SlipFlowError):
    pass


class InnerNoConvergence(SlipFlowError):
    pass


class OuterNoConvergence(SlipFlowError):
    pass


class ContinuationStalled(SlipFlowError):
    pass


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)
