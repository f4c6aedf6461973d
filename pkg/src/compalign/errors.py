"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CompalignError(Exception):
    """Base class for every error raised by compalign."""


class InputError(CompalignError, ValueError):
    """Caller supplied an invalid value (empty text, bad box, undecodable image...)."""


class DegenerateInputError(InputError):
    pass


class ParseError(CompalignError):
    """No JSON object could be located in a generator response."""


class SchemaError(CompalignError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "schema violation")


class DecompositionError(CompalignError):
    """All generation attempts failed; ``last_raw`` holds the final backend output."""

    def __init__(self, message: str, last_raw: str | None = None, attempts: int = 0):
        super().__init__(message)
        self.last_raw = last_raw
        self.attempts = attempts


class BackendError(CompalignError):
    """A model backend failed (transport, missing weights, bad response).

    Retryable by convention: the harness records it per sample and moves on.
    """

    retryable = True


class CacheCorruptionError(CompalignError):
    """A second write under an existing key carried different bytes."""


class ConfigError(CompalignError):
    pass


class SpecError(CompalignError, ValueError):
    """Invalid synthetic scene specification."""


class UnsupportedPromptError(CompalignError, ValueError):
    pass
