"""Exception hierarchy shared by all quantcert modules."""

from __future__ import annotations

from dataclasses import dataclass


class QuantcertError(Exception):
    """Base class for every error raised by this package."""


@dataclass(frozen=True)
class Issue:
    """One violated network invariant.

    ``kind`` is one of ``dimension-mismatch``, ``non-finite-entry``,
    ``empty-network`` or ``bias-length``. ``layer`` is 1-based.
    """

    kind: str
    layer: int | None = None
    index: tuple[int, ...] | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = "" if self.layer is None else f"({self.layer})"
        idx = "" if self.index is None else f" at {self.index}"
        tail = f": {self.detail}" if self.detail else ""
        return f"{self.kind}{where}{idx}{tail}"


class NetworkError(QuantcertError, ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class InputError(QuantcertError, ValueError):
    """Bad input vector: wrong length or non-finite entries."""


class ModelFormatError(QuantcertError, ValueError):
    """Malformed model document.

    ``kind`` is ``parse-error``, ``schema-violation`` or
    ``dimension-mismatch``; ``position`` is ``(line, column)`` for parse
    errors and ``field`` names the offending path for schema errors.
    """

    def __init__(self, kind: str, message: str, *, position=None, field=None):
        self.kind = kind
        self.position = position
        self.field = field
        loc = ""
        if position is not None:
            loc = f" at line {position[0]} column {position[1]}"
        elif field is not None:
            loc = f" in field {field!r}"
        super().__init__(f"{kind}{loc}: {message}")


class SchemeError(QuantcertError, ValueError):
    """Invalid quantization scheme or non-finite value to quantize."""


class MergeError(QuantcertError, ValueError):
    """Architectures of the two networks do not match."""


class IntervalError(QuantcertError, ValueError):
    pass


class SolverError(QuantcertError):
    pass


class MethodPreconditionError(SolverError, ValueError):
    """The requested method cannot run on this problem (e.g. exact-1d on tanh)."""


class BudgetExceededError(SolverError):
    pass


class SampleOutsideBoxError(SolverError, ValueError):
    pass
