"""Zero-mean/unit-variance scaling of per-pixel feature channels."""

from dataclasses import dataclass

import numpy as np

from ..datacube import FeatureCube
from ..errors import DimensionError, EmptyInputError, InsufficientSamplesError


def _as_values(features):
    values = getattr(features, "values", features)
    return np.asarray(values)


@dataclass
class Standardizer:
    """Per-channel means/stds; channels with std below epsilon map to 0."""

    means: np.ndarray
    stds: np.ndarray
    epsilon: float = 1e-8

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise ValueError("means and stds must be equal-length vectors")
        if np.any(self.stds < 0):
            raise ValueError("stds must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def dim(self):
        return self.means.size


def fit_standardizer(features, epsilon=1e-8):
    """Channel means and population stds over all pixels/rows of the input."""
    values = _as_values(features)
    matrix = values.reshape(-1, values.shape[-1]).astype(np.float64)
    if matrix.shape[0] == 0:
        raise EmptyInputError("cannot standardize an empty sample set")
    if matrix.shape[0] < 2:
        raise InsufficientSamplesError("standardization needs at least 2 samples")
    return Standardizer(matrix.mean(axis=0), matrix.std(axis=0), epsilon)


def apply_standardizer(standardizer, features):
    """Scale each channel to zero mean and unit variance.

    3-D input (a cube of pixel features) comes back as a FeatureCube;
    a 2-D sample matrix comes back as a plain matrix.
    """
    values = _as_values(features)
    if values.shape[-1] != standardizer.dim:
        raise DimensionError(
            f"feature dim {values.shape[-1]} != standardizer dim {standardizer.dim}"
        )
    stds = np.asarray(standardizer.stds, dtype=np.float64)
    scale = np.divide(
        1.0, stds, out=np.zeros_like(stds), where=stds >= standardizer.epsilon
    )
    out = (values.astype(np.float64) - standardizer.means) * scale
    if values.ndim == 3:
        return FeatureCube(out)
    return out
