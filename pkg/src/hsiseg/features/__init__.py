"""Per-pixel feature extraction from spectral cubes.

Three extractors share the FeatureCube output container: raw standardized
spectra, ICA filter-bank responses, and encoder activations of a stacked
multi-loss convolutional autoencoder.  All of them preserve the spatial
dimensions of the input cube.
"""

from ..datacube import FeatureCube
from .ica import (
    FilterBank,
    extract_mica,
    fastica_unmixing,
    learn_ica_filters,
    pca_whiten,
    sample_patches,
)
from .smcae import SmcaeModel, SmcaeSpec, encode_smcae, train_smcae
from .standardize import Standardizer, apply_standardizer, fit_standardizer

__all__ = [
    "FeatureCube",
    "FilterBank",
    "SmcaeModel",
    "SmcaeSpec",
    "Standardizer",
    "apply_standardizer",
    "encode_smcae",
    "extract_mica",
    "fastica_unmixing",
    "fit_standardizer",
    "learn_ica_filters",
    "pca_whiten",
    "sample_patches",
    "train_smcae",
]
