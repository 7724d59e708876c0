"""Exception hierarchy shared across the pipeline.

The CLI maps ``ConfigError`` to exit code 1 and ``DataError`` to exit code 2.
"""

from __future__ import annotations


class MinibertError(Exception):
    pass


class ConfigError(MinibertError, ValueError):
    """Bad settings: unknown config keys, impossible sizes, degenerate label sets."""


class DataError(MinibertError, ValueError):
    """Input data that violates a format or structural contract."""


class CorpusDecodeError(DataError):
    def __init__(self, path: str, offset: int, reason: str) -> None:
        super().__init__(f"{path}: invalid UTF-8 at byte offset {offset} ({reason})")
        self.path = path
        self.offset = offset


class SplitSizeError(DataError):
    pass


class DetokenizeError(DataError):
    pass


class GenerationError(DataError):
    pass


class StructureError(DataError):
    pass


class ConllParseError(DataError):
    def __init__(self, path: str, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class AlignmentError(DataError):
    pass


class DimensionError(MinibertError, ValueError):
    pass


class LossError(MinibertError, ValueError):
    pass


class NumericError(MinibertError, ArithmeticError):
    def __init__(self, tensor: str, message: str = "non-finite values") -> None:
        super().__init__(f"{message} in {tensor}")
        self.tensor = tensor
