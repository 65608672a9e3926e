"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line runner maps it to.
"""

from __future__ import annotations


class ParisiLabError(Exception):
    exit_code = 1


class ConfigError(ParisiLabError, ValueError):
    """Schema or parameter violation."""

    exit_code = 2


class DomainError(ConfigError):
    """Argument outside the mathematical domain of an operation."""


class OrderParameterError(ConfigError):
    """Invalid functional order parameter; ``index`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None, index: int | None = None):
        super().__init__(message)
        self.field = field
        self.index = index


class NumericError(ParisiLabError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, module: str = "", level: int | None = None, params=None):
        prefix = f"[{module}] " if module else ""
        super().__init__(prefix + message)
        self.module = module
        self.level = level
        self.params = params


class CapacityError(ParisiLabError):
    """Requested enumeration exceeds the configured budget."""

    exit_code = 4
