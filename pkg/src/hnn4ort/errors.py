"""Exception hierarchy shared by every hnn4ort module."""


class HNN4ORTError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HNN4ORTError, ValueError):
    """Operand shapes do not conform to an op's rules."""


class ConfigError(HNN4ORTError, ValueError):
    """A configuration value is out of range or unknown."""


class ContractError(HNN4ORTError, ValueError):
    """A caller broke a documented precondition (e.g. non-scalar loss)."""


class InputError(HNN4ORTError, ValueError):
    """Malformed domain input: bad indices, overlapping spans, empty sequences."""


class FormatError(HNN4ORTError, ValueError):
    """A text file does not follow its line format."""


class CheckpointError(HNN4ORTError, ValueError):
    """A checkpoint is truncated, corrupt, or from an incompatible version."""


class TrainingDiverged(HNN4ORTError, RuntimeError):
    """Training produced a non-finite loss."""
