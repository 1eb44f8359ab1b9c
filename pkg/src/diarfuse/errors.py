"""Exception types shared across the toolkit."""

from __future__ import annotations


class DiarizationError(Exception):
    """Base class for all errors raised by diarfuse."""


class InvalidTurn(DiarizationError, ValueError):
    """A speaker turn with a non-positive duration or a malformed label."""


class ParseError(DiarizationError, ValueError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class SchemaError(DiarizationError, ValueError):
    """Structurally valid input whose shapes or values are inconsistent."""


class MissingLabel(DiarizationError, KeyError):
    """A selected stream has no cluster label."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing label"


class Infeasible(DiarizationError):
    """COP-Kmeans could not place an item without breaking a cannot-link."""

    def __init__(self, item: int, message: str | None = None):
        self.item = item
        super().__init__(message or f"no feasible cluster for item {item}")


class EmptyReference(DiarizationError):
    """The reference contains no scored speech, so DER is undefined."""


class ConfigError(DiarizationError, ValueError):
    """Invalid configuration values or unknown configuration keys."""


class AllChannelsFailed(DiarizationError):
    """Every channel of a session failed, so nothing can be fused."""

    def __init__(self, session_id: str, failures: dict[str, str]):
        self.session_id = session_id
        self.failures = dict(failures)
        detail = "; ".join(f"{ch}: {msg}" for ch, msg in sorted(failures.items()))
        super().__init__(f"all channels failed for session {session_id!r}: {detail}")
