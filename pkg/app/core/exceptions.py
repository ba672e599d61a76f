from typing import Optional


class SimMstError(Exception):
    """Base error carrying a one-line detail and the process exit code the CLI should return."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class DimensionError(SimMstError):
    """Operand shapes do not agree."""


class ContractError(SimMstError):
    """A precondition of an operation was violated (non-scalar loss, missing features, ...)."""


class ConfigurationError(SimMstError):
    """Invalid configuration values or combinations."""

    exit_code = 2


class DatasetLoadError(SimMstError):
    """A dataset directory is missing files or holds inconsistent values."""


class CheckpointLoadError(SimMstError):
    """A checkpoint archive is missing, unreadable or of another format version."""


class NonFiniteError(SimMstError):
    """A loss or gradient became NaN/inf."""


class TrainingAborted(SimMstError):
    """Training stopped early; the last good checkpoint is kept on disk."""

    def __init__(self, detail: str, checkpoint_path: Optional[str] = None):
        super().__init__(detail)
        self.checkpoint_path = checkpoint_path
