"""Exception types shared across the engine.

The CLI maps these onto exit codes: NumericError aborts with 3, everything
else derived from EngineError (plus OSError/IndexError) exits 2.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(EngineError):
    """An operation was called outside its stated preconditions."""


class ConfigError(EngineError):
    """Invalid configuration value or combination."""


class ParseError(EngineError):
    """A text input file is malformed."""


class FormatError(EngineError):
    """A binary or structured file does not match its format."""


class DatasetError(EngineError):
    """Dataset-level inconsistency (missing features, mixed dims, ...)."""


class CheckpointError(EngineError):
    """A checkpoint file is unreadable or belongs to another architecture."""


class NumericError(EngineError):
    """Training produced a non-finite value and must abort."""


class EmptyCaptionError(EngineError):
    """A caption normalized to the empty string."""
