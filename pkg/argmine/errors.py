"""Error hierarchy shared by every argmine module.

Each error carries a stable ``code`` string so callers (and the CLI exit-code
mapping) can branch on it without parsing messages.
"""

from typing import Any, Dict, Optional


class ArgMineError(Exception):
    """Base class for all argmine failures."""

    exit_code = 3

    def __init__(self, code: str, message: str = "", details: Optional[Dict[str, Any]] = None):
        self.code = code
        self.details = details or {}
        super().__init__(f"{code}: {message}" if message else code)


class ConfigError(ArgMineError):
    exit_code = 1


class GraphError(ArgMineError):
    exit_code = 2


class CorpusError(ArgMineError):
    exit_code = 2


class MappingError(ArgMineError):
    exit_code = 2


class DatasetError(ArgMineError):
    exit_code = 2


class EvaluationError(ArgMineError):
    exit_code = 2


class AugmentationError(ArgMineError):
    exit_code = 3


class ModelError(ArgMineError):
    exit_code = 3
