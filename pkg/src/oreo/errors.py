"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError / DataError / ProtocolError
are caller mistakes (exit 2), everything else is an internal failure (exit 1).
"""


class OreoError(Exception):
    pass


class ConfigError(OreoError):
    """Invalid or inconsistent configuration (bad JSON, unknown keys, toggle conflicts)."""


class DataError(OreoError):
    """Dataset-level problem: missing files, malformed manifests, empty eligibility sets."""


class ProtocolError(OreoError):
    """Evaluation protocol violation (probe identity missing from gallery, no impostors, ...)."""


class DivergenceError(OreoError):
    """Non-finite training loss; carries the offending step."""

    def __init__(self, step, value):
        super().__init__(f"non-finite loss at step {step}: {value}")
        self.step = step
        self.value = value
