"""Exception types shared across the package."""


class NairsError(Exception):
    """Base class for all package errors."""


class ParseError(NairsError):
    """A data file line failed to parse."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptyDatasetError(NairsError):
    """The input produced zero interactions."""


class NoNegativesError(NairsError):
    """A user has interacted with every item; nothing left to sample."""


class EmptyProfileError(NairsError):
    """An operation requiring a non-empty history received an empty one."""


class SnapshotError(NairsError):
    """A model snapshot file is missing, corrupt, or truncated."""


class UnsupportedVersionError(SnapshotError):
    """The snapshot was written by a newer, unknown format version."""


class TrainingDivergedError(NairsError):
    """The training loss became non-finite."""

    def __init__(self, epoch, batch_index, message=""):
        self.epoch = epoch
        self.batch_index = batch_index
        detail = f"loss diverged at epoch {epoch}, batch {batch_index}"
        if message:
            detail += f": {message}"
        super().__init__(detail)


class NotFoundError(NairsError):
    """An entity id (user or item) is unknown."""


class StaleCacheError(NairsError):
    """A similarity cache was built against a different model snapshot."""
