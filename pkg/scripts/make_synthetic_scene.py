#!/usr/bin/env python3
"""Generate a small synthetic labeled scene for smoke runs.

Classes occupy rectangular regions with smooth per-class spectral
signatures plus white noise; a border of unlabeled pixels exercises the
label-0 handling.  Writes an ENVI-style cube + ground truth and a ready
to run pipeline config sized for minutes, not hours.

    python3 scripts/make_synthetic_scene.py --out /tmp/scene
    hsiseg experiment --config /tmp/scene/scene.ini --trials 3
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hsiseg.datacube import LabelMap, SpectralCube, save_envi, save_labels_envi


def class_signature(cls, bands, rng):
    """Smooth bumpy curve in [0.1, 1]; distinct per class."""
    x = np.linspace(0.0, 1.0, bands)
    curve = np.zeros(bands)
    for _ in range(3):
        center = rng.uniform(0.0, 1.0)
        width = rng.uniform(0.08, 0.3)
        curve += rng.uniform(0.3, 1.0) * np.exp(
            -((x - center) ** 2) / (2 * width**2)
        )
    curve = 0.1 + 0.9 * (curve - curve.min()) / (curve.max() - curve.min())
    return curve


def make_scene(height, width, n_classes, bands, noise, seed):
    rng = np.random.default_rng(seed)
    signatures = np.stack(
        [class_signature(c, bands, rng) for c in range(n_classes)]
    )

    labels = np.zeros((height, width), dtype=np.int32)
    # Tile the interior into vertical strips, one class per strip, and
    # leave a 2-pixel unlabeled frame.
    strip = (width - 4) // n_classes
    for c in range(n_classes):
        c0 = 2 + c * strip
        c1 = 2 + (c + 1) * strip if c < n_classes - 1 else width - 2
        labels[2 : height - 2, c0:c1] = c + 1

    values = np.empty((height, width, bands))
    values[:] = signatures[0]  # unlabeled pixels borrow class 1 statistics
    for c in range(n_classes):
        values[labels == c + 1] = signatures[c]
    values += rng.normal(0.0, noise, values.shape)
    values = np.clip(values, 1e-3, None)

    cube = SpectralCube(values=values,
                        wavelengths=np.linspace(400.0, 2400.0, bands))
    truth = LabelMap.from_array(labels, num_classes=n_classes)
    return cube, truth


CONFIG_TEMPLATE = """\
[data]
cube_header = {name}.hdr
cube_data = {name}.raw
labels_header = {name}_gt.hdr
labels_data = {name}_gt.raw
name = {name}

[extractor]
kind = raw

[classifier]
hidden_layers = 2
units = 64
weight_decay = 0, 1e-3
max_epochs = 60

[ugm]
kind = dense_meanfield
iterations = 10
lattice_points = 4

[protocol]
n_train = 5
n_val = 10
n_trials = 3
seed = 7

[output]
dir = runs
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--name", default="scene")
    parser.add_argument("--height", type=int, default=40)
    parser.add_argument("--width", type=int, default=40)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--bands", type=int, default=12)
    parser.add_argument("--noise", type=float, default=0.08)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cube, truth = make_scene(args.height, args.width, args.classes,
                             args.bands, args.noise, args.seed)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, args.name)
    save_envi(cube, base + ".hdr", base + ".raw", interleave="bsq",
              dtype=np.float32)
    save_labels_envi(truth, base + "_gt.hdr", base + "_gt.raw")
    with open(base + ".ini", "w") as fh:
        fh.write(CONFIG_TEMPLATE.format(name=args.name))
    per_class = [int((truth.labels == c + 1).sum()) for c in range(args.classes)]
    print(f"wrote {base}.hdr/.raw + ground truth; class sizes {per_class}")
    print(f"config: {base}.ini")


if __name__ == "__main__":
    main()
