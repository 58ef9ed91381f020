"""Exception types shared across the package."""


class MalformedFileError(ValueError):
    """Raster payload does not match what its header promises."""


class UnsupportedFormatError(ValueError):
    """File uses a data type or layout we do not read."""


class HeaderParseError(ValueError):
    """Header text is missing required keys or is not parseable."""


class SpectralRangeError(ValueError):
    """Requested wavelength falls outside the source spectrum (no extrapolation)."""


class InsufficientSamplesError(ValueError):
    """A class does not have enough labeled pixels for the requested split."""


class DimensionError(ValueError):
    """Array shapes or feature dimensions do not line up."""


class EmptyInputError(ValueError):
    """Operation received no data to work on."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


class NoViableModelError(RuntimeError):
    """Every candidate in a model-selection grid diverged."""


class InvalidLabelingError(ValueError):
    """Labeling contains unlabeled pixels where a full labeling is required."""


class InvalidScopeError(ValueError):
    """Scoring scope includes pixels without ground truth."""


class GraphConstructionError(RuntimeError):
    """Internal consistency check failed while building a flow graph."""


class StageError(RuntimeError):
    """Pipeline stage failure, tagged with the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
