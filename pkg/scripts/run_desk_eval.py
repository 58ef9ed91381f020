"""Run the low-shot benchmark protocol on a standard hyperspectral scene.

Expects the usual MATLAB-format rasters (cube + ground truth) in a data
directory, converts them to the package's ENVI-style layout, and runs the
multi-trial experiment with the reference protocol (15 train / 35 val per
class).  Prints the aggregate table and paired t-tests; CSV tables land
in the output directory.

    python3 scripts/run_desk_eval.py --data ~/datasets --dataset pavia_university
    python3 scripts/run_desk_eval.py --data ~/datasets --dataset indian_pines \
        --extractor smcae --trials 5
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hsiseg.config import load_config
from hsiseg.datacube import LabelMap, SpectralCube, save_envi, save_labels_envi
from hsiseg.pipeline import run_experiment

DATASETS = {
    "pavia_university": {
        "cube": ("PaviaU.mat", "paviaU"),
        "labels": ("PaviaU_gt.mat", "paviaU_gt"),
    },
    "indian_pines": {
        "cube": ("Indian_pines_corrected.mat", "indian_pines_corrected"),
        "labels": ("Indian_pines_gt.mat", "indian_pines_gt"),
    },
}

CONFIG_TEMPLATE = """\
[data]
cube_header = {name}.hdr
cube_data = {name}.raw
labels_header = {name}_gt.hdr
labels_data = {name}_gt.raw
name = {name}

[extractor]
kind = {extractor}

[ugm]
kind = dense_meanfield

[protocol]
n_train = 15
n_val = 35
n_trials = {trials}
seed = {seed}

[output]
dir = tables
"""


def prepare(data_dir, dataset, work_dir):
    from scipy.io import loadmat

    info = DATASETS[dataset]
    cube_file, cube_key = info["cube"]
    gt_file, gt_key = info["labels"]
    for fname in (cube_file, gt_file):
        path = os.path.join(data_dir, fname)
        if not os.path.exists(path):
            sys.exit(f"missing {path}; download the standard .mat files first")

    values = np.asarray(loadmat(os.path.join(data_dir, cube_file))[cube_key],
                        dtype=np.float64)
    gt = np.asarray(loadmat(os.path.join(data_dir, gt_file))[gt_key])
    cube = SpectralCube(values=values,
                        wavelengths=np.arange(1.0, values.shape[2] + 1.0))
    truth = LabelMap.from_array(gt.astype(np.int32))
    os.makedirs(work_dir, exist_ok=True)
    base = os.path.join(work_dir, dataset)
    save_envi(cube, base + ".hdr", base + ".raw", interleave="bsq",
              dtype=np.float32)
    save_labels_envi(truth, base + "_gt.hdr", base + "_gt.raw")
    print(f"{dataset}: {cube.height}x{cube.width}x{cube.bands}, "
          f"{truth.num_classes} classes")
    return base


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True,
                        help="directory holding the .mat rasters")
    parser.add_argument("--dataset", required=True, choices=sorted(DATASETS))
    parser.add_argument("--extractor", default="raw",
                        choices=("raw", "mica", "smcae"))
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None,
                        help="work directory (default: ./desk_eval/<dataset>)")
    args = parser.parse_args()

    work_dir = args.out or os.path.join("desk_eval", args.dataset)
    base = prepare(args.data, args.dataset, work_dir)

    config_path = base + f"_{args.extractor}.ini"
    with open(config_path, "w") as fh:
        fh.write(CONFIG_TEMPLATE.format(name=args.dataset,
                                        extractor=args.extractor,
                                        trials=args.trials, seed=args.seed))
    config = load_config(config_path)

    start = time.monotonic()
    reports, table, tests = run_experiment(
        config, out_dir=os.path.join(work_dir, "tables")
    )
    minutes = (time.monotonic() - start) / 60.0

    print(f"\n{len(reports)} trials in {minutes:.1f} min")
    for variant in sorted(table):
        stats = table[variant]
        print(f"  {variant}: OA {100 * stats['oa'][0]:.1f}+-"
              f"{100 * stats['oa'][1]:.1f}  AA {100 * stats['aa'][0]:.1f}"
              f"+-{100 * stats['aa'][1]:.1f}  kappa {stats['kappa'][0]:.3f}"
              f"+-{stats['kappa'][1]:.3f}")
    for (a, b, metric), (n, t, p) in sorted(tests.items()):
        if metric == "oa":
            print(f"  {a} vs {b} (OA, n={n}): t={t:.3f} p={p:.4g}")
    print(f"tables in {os.path.join(work_dir, 'tables')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
