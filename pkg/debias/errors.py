"""
Error types
Every failure the library raises derives from DebiasError
"""


class DebiasError(Exception):
    """Base class for all library errors"""


class ShapeError(DebiasError, ValueError):
    """Operands have incompatible shapes"""

    def __init__(self, op, left, right=None):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right) if right is not None else None
        if self.right is None:
            message = f"{op}: invalid shape {self.left}"
        else:
            message = f"{op}: incompatible shapes {self.left} and {self.right}"
        super().__init__(message)


class NonFiniteError(DebiasError, FloatingPointError):
    """A tensor holds NaN or Inf"""


class LabelError(DebiasError, ValueError):
    """A class label is outside {0, 1, 2} or cannot be parsed"""


class EmptySequenceError(DebiasError, ValueError):
    """An utterance has no tokens"""


class VocabularyError(DebiasError, ValueError):
    """Token ids out of range, or two vocabularies that should match do not"""


class CorpusFormatError(DebiasError, ValueError):
    """A corpus or embedding file is malformed"""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}"
            if line_number is not None:
                location += f":{line_number}"
            location += ": "
        super().__init__(f"{location}{message}")


class SyntheticSpecError(DebiasError, ValueError):
    """Synthetic corpus constraints cannot be satisfied"""


class ConfigError(DebiasError, ValueError):
    """Training, probing or experiment configuration is invalid"""


class ObjectiveError(DebiasError, ValueError):
    """The minimax objective is ill-posed for the given arguments"""


class DivergenceError(DebiasError, FloatingPointError):
    """Training produced a non-finite loss"""

    def __init__(self, epoch, detail=""):
        self.epoch = epoch
        message = f"training diverged in epoch {epoch}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class CheckpointError(DebiasError, IOError):
    """Checkpoint file is corrupt, truncated or of an unknown version"""


class StatisticsError(DebiasError, ValueError):
    """Invalid input to a significance test"""
