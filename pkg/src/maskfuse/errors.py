"""Exception hierarchy.

EngineError and its subclasses signal bad input (data, config, requests) and map
to HTTP 400 / CLI exit 1. InternalError signals a broken invariant inside the
engine itself and maps to HTTP 500 / CLI exit 2.
"""


class EngineError(Exception):
    """Base for user-correctable errors."""


class FormatError(EngineError):
    """Malformed or truncated interchange file."""


class SceneError(EngineError):
    """Inconsistent scene: bad manifest, mismatched shapes, missing files."""


class ConfigError(EngineError):
    """Invalid configuration value."""


class EvalError(EngineError):
    """Evaluation cannot proceed (missing ground truth, empty inputs)."""


class InternalError(Exception):
    """An internal invariant was violated; indicates a bug, not bad input."""
