class CoreApplicationException(Exception):
    """Base class for mixbt's custom exceptions."""
    def __init__(self, message: str, details: dict = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

# --- Differentiation core ---
class DiffcoreError(CoreApplicationException):
    """Base class for tensor arithmetic and gradient-tape failures."""
    pass

class DimensionError(DiffcoreError):
    """Raised when operand shapes are incompatible for an operation."""
    def __init__(self, op: str, message: str, details: dict = None):
        self.op = op
        super().__init__(f"Dimension error in '{op}': {message}", details=details)

class NumericDomainError(DiffcoreError):
    """Raised on division by zero, log of non-positive values, or non-finite results."""
    def __init__(self, op: str, message: str, details: dict = None):
        self.op = op
        super().__init__(f"Numeric domain error in '{op}': {message}", details=details)

class DegenerateBatchError(DiffcoreError):
    """Raised when batch statistics are requested for fewer than two rows."""
    def __init__(self, rows: int, details: dict = None):
        self.rows = rows
        super().__init__(f"Batch statistics need at least 2 rows, got {rows}", details=details)

class ContractError(DiffcoreError):
    """Raised when a caller violates an operation's precondition."""
    pass

# --- Data-Related Exceptions ---
class DataError(CoreApplicationException):
    """Base class for exceptions related to datasets, batches and augmentation inputs."""
    pass

class InputRangeError(DataError):
    """Raised when pixel values fall outside [0, 1]."""
    pass

class PermutationError(DataError):
    """Raised when an index array is not a permutation of 0..N-1."""
    def __init__(self, message: str = None, details: dict = None):
        super().__init__(message or "Index array is not a valid permutation.", details=details)

class DatasetFormatError(DataError):
    """Raised when a binary dataset file does not match the expected record layout."""
    def __init__(self, path: str, message: str, details: dict = None):
        self.path = path
        super().__init__(f"Malformed dataset file '{path}': {message}", details=details)

class DatasetNotFoundError(DataError):
    """Raised when the expected dataset files are missing."""
    pass

class CurveInputError(DataError):
    """Raised when a run directory lacks readable metrics.csv/eval.csv files."""
    pass

# --- Configuration and Execution Exceptions ---
class ParameterError(CoreApplicationException):
    """Raised for invalid distribution or hyperparameter arguments."""
    pass

class ConfigurationError(CoreApplicationException):
    """Raised for configuration-related problems. `details['key']` names the offending key."""
    def __init__(self, message: str, key: str = None, details: dict = None):
        details = dict(details or {})
        if key is not None:
            details["key"] = key
        self.key = key
        super().__init__(message, details=details)

class CheckpointFormatError(CoreApplicationException):
    """Raised when a checkpoint file is truncated or carries the wrong magic/version."""
    def __init__(self, path: str, message: str, details: dict = None):
        self.path = path
        super().__init__(f"Invalid checkpoint '{path}': {message}", details=details)

class CheckpointMismatchError(CheckpointFormatError):
    """Raised when a checkpoint's architecture does not match the requesting run."""
    pass

class TrainingError(CoreApplicationException):
    """Raised for errors during the pre-training loop."""
    pass

class NonFiniteLossError(TrainingError):
    """Raised when a training step produces a non-finite loss or gradient."""
    def __init__(self, step: int, epoch: int, batch_index: int, message: str,
                 dump_path: str = None, details: dict = None):
        self.step = step
        self.epoch = epoch
        self.batch_index = batch_index
        self.dump_path = dump_path
        super().__init__(
            f"Non-finite value at step {step} (epoch {epoch}, batch {batch_index}): {message}",
            details=details,
        )

class EvaluationError(CoreApplicationException):
    """Raised when an evaluation protocol receives inconsistent inputs."""
    pass
