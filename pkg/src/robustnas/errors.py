"""Exception types shared across the package."""


class RobustNasError(Exception):
    """Base class for all package errors."""


class RecordParseError(RobustNasError, ValueError):
    """Malformed or out-of-range architecture/config record.

    `location` is a dotted path into the record (e.g. "block.nodes[2].layer_param")
    or a character offset for raw JSON syntax errors.
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class SpaceError(RobustNasError):
    """Misconfigured or degenerate search space."""


class EvolutionError(RobustNasError):
    """Evolution could not produce a valid in-space architecture."""


class IncomparableError(RobustNasError):
    """Distance requested between architectures with different node counts."""


class EvaluationFailed(RobustNasError):
    """An evaluator could not score an architecture."""


class CheckpointError(RobustNasError):
    """Checkpoint missing, corrupt, or from a mismatched configuration."""


class DispatchError(RobustNasError):
    """Worker-protocol or job-tracking failure."""


class PoolEmptyError(DispatchError):
    """No registered evaluation workers remain."""


class ConfigError(RobustNasError):
    """Invalid engine configuration file or flag combination."""
