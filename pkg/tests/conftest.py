"""Shared fixtures: a small synthetic labeled scene on disk."""

import os

import numpy as np
import pytest

from hsiseg.datacube import LabelMap, SpectralCube, save_envi, save_labels_envi

SCENE_CONFIG = """\
[data]
cube_header = scene.hdr
cube_data = scene.raw
labels_header = scene_gt.hdr
labels_data = scene_gt.raw
name = scene

[extractor]
kind = raw

[classifier]
hidden_layers = 2
units = 64
weight_decay = 0
max_epochs = 40

[ugm]
kind = dense_meanfield
iterations = 8
lattice_points = 3

[protocol]
n_train = 5
n_val = 8
n_trials = 3
seed = 11

[output]
dir = runs
"""


def build_scene(height=30, width=30, n_classes=3, bands=8, noise=0.08,
                seed=0):
    """Striped scene: distinct smooth spectra per class, unlabeled frame."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, bands)
    signatures = []
    for _ in range(n_classes):
        curve = np.zeros(bands)
        for _ in range(3):
            center, width_ = rng.uniform(0, 1), rng.uniform(0.08, 0.3)
            curve += rng.uniform(0.3, 1.0) * np.exp(
                -((x - center) ** 2) / (2 * width_**2)
            )
        curve = 0.1 + 0.9 * (curve - curve.min()) / (curve.max() - curve.min())
        signatures.append(curve)
    signatures = np.stack(signatures)

    labels = np.zeros((height, width), dtype=np.int32)
    strip = (width - 4) // n_classes
    for c in range(n_classes):
        c0 = 2 + c * strip
        c1 = 2 + (c + 1) * strip if c < n_classes - 1 else width - 2
        labels[2 : height - 2, c0:c1] = c + 1

    values = np.empty((height, width, bands))
    values[:] = signatures[0]
    for c in range(n_classes):
        values[labels == c + 1] = signatures[c]
    values += rng.normal(0.0, noise, values.shape)
    values = np.clip(values, 1e-3, None)

    cube = SpectralCube(values=values,
                        wavelengths=np.linspace(400.0, 2400.0, bands))
    truth = LabelMap.from_array(labels, num_classes=n_classes)
    return cube, truth


def write_scene(directory, config_text=SCENE_CONFIG, **scene_kwargs):
    cube, truth = build_scene(**scene_kwargs)
    base = os.path.join(str(directory), "scene")
    save_envi(cube, base + ".hdr", base + ".raw", interleave="bsq",
              dtype=np.float32)
    save_labels_envi(truth, base + "_gt.hdr", base + "_gt.raw")
    config_path = base + ".ini"
    with open(config_path, "w") as fh:
        fh.write(config_text)
    return config_path, cube, truth


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Session-wide scene directory; config at <dir>/scene.ini."""
    directory = tmp_path_factory.mktemp("scene")
    write_scene(directory)
    return directory
