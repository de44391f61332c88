"""Typed errors shared across the package.

Every contract violation maps to one of these; callers (and the CLI exit-code
mapping) can rely on the distinction between shape problems, numeric problems,
malformed files, and misuse of an API.
"""


class IlmFuseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IlmFuseError):
    """Shapes or sizes of inputs do not agree."""


class NumericError(IlmFuseError):
    """A numeric contract was violated (NaN/Inf where finite values are required)."""


class FormatError(IlmFuseError):
    """A container or manifest file is malformed (bad magic, version, checksum)."""


class ValidationError(IlmFuseError):
    """A structurally well-formed input fails semantic validation."""


class ContractError(IlmFuseError):
    """A documented precondition of an operation was violated by the caller."""


class ConfigError(IlmFuseError):
    """A decode/fusion configuration is invalid or incomplete."""
