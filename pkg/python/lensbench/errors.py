"""Exception hierarchy. Every error maps onto one CLI exit code."""

from __future__ import annotations


class LensbenchError(RuntimeError):
    exit_code = 1

    def __init__(self, module: str, message: str) -> None:
        self.module = module
        self.message = message
        super().__init__(f"{module}: {message}")


class ConfigError(LensbenchError):
    exit_code = 2


class DataFormatError(LensbenchError):
    exit_code = 3


class FormatError(DataFormatError):
    """Unreadable file or unexpected header."""


class ParseError(DataFormatError):
    def __init__(self, module: str, message: str, *, line: int) -> None:
        self.line = line
        super().__init__(module, f"line {line}: {message}")


class StructureError(DataFormatError):
    def __init__(self, module: str, message: str, *, group: tuple[str, str]) -> None:
        self.group = group
        super().__init__(module, f"group {group!r} {message}")


class InvariantViolation(LensbenchError):
    exit_code = 4
