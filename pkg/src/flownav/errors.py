"""Exception types shared across the package."""


class FlowNavError(Exception):
    """Base class for all flownav errors."""


class InvalidPositionError(FlowNavError, ValueError):
    """Position has non-finite components."""


class DimensionMismatchError(FlowNavError, ValueError):
    """Input dimensionality does not match the flow/environment."""


class InvalidActionError(FlowNavError, ValueError):
    """Action is not a unit vector within tolerance."""


class EpisodeFinishedError(FlowNavError, RuntimeError):
    """step() called on an environment whose episode already ended."""


class BatchShapeError(FlowNavError, ValueError):
    """Batched inputs have inconsistent lengths or shapes."""


class TimeRangeError(FlowNavError, ValueError):
    """Requested time lies outside the dataset's valid interval."""


class MissingDatasetError(FlowNavError, ValueError):
    """TURB environment constructed without a snapshot dataset."""


class NumericalBlowupError(FlowNavError, RuntimeError):
    """Solver field became non-finite; carries diagnostic stats in args."""


class MatrixMagnitudeError(FlowNavError, ValueError):
    """Matrix norm too large for the exponential's accuracy contract."""


class DegenerateObservableError(FlowNavError, ValueError):
    """An observation component has (near-)zero variance; cannot bin it."""


class CheckpointError(FlowNavError, ValueError):
    """Checkpoint file is malformed or from an incompatible version."""
