"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite or out-of-domain values where finite ones are required."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but degenerate (e.g. a zero vector)."""


class GraphError(RuntimeError):
    """Misuse of the differentiation tape."""


class ManifestError(ValueError):
    """Malformed or inconsistent dataset manifest."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ImageFormatError(ValueError):
    """Unsupported or corrupt image file."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint payload ends early."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload fails CRC verification."""


class CheckpointShapeError(CheckpointError):
    """Stored tensor shapes disagree with the expected configuration."""
