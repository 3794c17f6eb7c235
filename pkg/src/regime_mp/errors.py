"""Exception types shared across modules."""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed scenario or command-line configuration.

    ``field`` names the offending key path and ``line`` the source line when
    known.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class NumericalAbort(RuntimeError):
    """A simulation or regression step produced unusable numbers."""

    def __init__(self, message: str, step: int | None = None, stage: str = ""):
        self.step = step
        self.stage = stage
        prefix = f"[{stage}] " if stage else ""
        suffix = f" at step {step}" if step is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")
