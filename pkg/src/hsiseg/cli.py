"""Command-line front end for the segmentation pipeline.

Subcommands mirror the pipeline stages so any intermediate artifact can
be produced, cached, and reused:

    convert      dataset fixture (.mat/.npy) -> ENVI-style raster pair
    extract      per-trial feature raster -> container file
    train        cross-validated classifier -> container file
    infer        per-pixel probabilities + argmax map
    crf          tuned post-processing -> labeled map
    evaluate     score a prediction raster against ground truth
    trial        one full trial (all stages, cached) + metrics
    experiment   the multi-trial protocol + CSV tables
    render       label raster -> color PNG

Stage commands key their artifacts by an explicit --seed (default: the
first derived trial seed), so `extract; train; infer; crf` resumes work
instead of recomputing.  Exit code 0 on success; failures print a
stage-tagged message and exit 1.
"""

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .datacube import (
    LabelMap,
    SpectralCube,
    load_envi,
    load_labels_envi,
    load_labels_text,
    sample_split,
    save_envi,
    save_labels_envi,
)
from .errors import StageError
from .metrics import confusion, oa_aa_kappa
from .pipeline import (
    classifier_stage,
    crf_stage,
    extract_stage,
    hash64,
    load_dataset,
    proba_stage,
    render_map,
    run_experiment,
    run_trial,
    write_trials_csv,
)
from .ugm import map_from_marginals


def _trial_seed(config, args):
    return args.seed if args.seed is not None else hash64(config.seed, 0)


def _out_dir(config, args):
    out = args.out if args.out is not None else config.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _print_metrics(report, variant_filter=None):
    for variant in sorted(report.variants):
        if variant_filter is not None and variant != variant_filter:
            continue
        m = report.variants[variant]
        secs = report.seconds.get(variant, float("nan"))
        print(
            f"{variant}: oa={m.oa:.4f} aa={m.aa:.4f} kappa={m.kappa:.4f} "
            f"({secs:.1f}s)"
        )


def _pick_array(container, key, path):
    if key is not None:
        if key not in container:
            raise StageError("convert", f"key {key!r} not found in {path}")
        return np.asarray(container[key])
    candidates = {
        k: np.asarray(v)
        for k, v in container.items()
        if not k.startswith("_") and np.asarray(v).ndim >= 2
    }
    if not candidates:
        raise StageError("convert", f"no array payload found in {path}")
    return candidates[max(candidates, key=lambda k: candidates[k].size)]


def _load_fixture(path, key):
    if path.endswith(".npy"):
        return np.load(path)
    if path.endswith(".mat"):
        from scipy.io import loadmat

        return _pick_array(loadmat(path), key, path)
    raise StageError("convert", f"unsupported fixture format: {path}")


def cmd_convert(args):
    cube_values = np.asarray(_load_fixture(args.input, args.input_key),
                             dtype=np.float64)
    if cube_values.ndim != 3:
        raise StageError("convert", f"cube array must be 3-D, got {cube_values.shape}"
        )
    if args.wavelengths is not None:
        wavelengths = np.loadtxt(args.wavelengths, dtype=float).reshape(-1)
    else:
        wavelengths = np.arange(1.0, cube_values.shape[2] + 1.0)
    cube = SpectralCube(values=cube_values, wavelengths=wavelengths)

    os.makedirs(args.out, exist_ok=True)
    name = args.name
    cube_header = os.path.join(args.out, f"{name}.hdr")
    cube_data = os.path.join(args.out, f"{name}.raw")
    save_envi(cube, cube_header, cube_data, interleave="bsq",
              dtype=np.float32)
    print(f"wrote {cube_header} ({cube.height}x{cube.width}x{cube.bands})")

    config_lines = [
        "[data]",
        f"cube_header = {name}.hdr",
        f"cube_data = {name}.raw",
    ]
    if args.labels is not None:
        label_values = np.asarray(
            _load_fixture(args.labels, args.labels_key)
        ).astype(np.int32)
        truth = LabelMap.from_array(label_values)
        labels_header = os.path.join(args.out, f"{name}_gt.hdr")
        labels_data = os.path.join(args.out, f"{name}_gt.raw")
        save_labels_envi(truth, labels_header, labels_data)
        print(
            f"wrote {labels_header} ({truth.num_classes} classes, "
            f"{int((truth.labels > 0).sum())} labeled pixels)"
        )
        config_lines += [
            f"labels_header = {name}_gt.hdr",
            f"labels_data = {name}_gt.raw",
        ]
    config_lines += [f"name = {name}", ""]
    config_path = os.path.join(args.out, f"{name}.ini")
    if not os.path.exists(config_path):
        with open(config_path, "w") as fh:
            fh.write("\n".join(config_lines))
        print(f"wrote starter config {config_path}")
    return 0


def cmd_extract(args):
    config = load_config(args.config)
    seed = _trial_seed(config, args)
    out = _out_dir(config, args)
    cube, _ = load_dataset(config)
    features = extract_stage(config, cube, seed, cache_dir=out)
    print(
        f"features: {features.height}x{features.width}x{features.dim} "
        f"({config.extractor}) cached in {out}"
    )
    return 0


def cmd_train(args):
    config = load_config(args.config)
    seed = _trial_seed(config, args)
    out = _out_dir(config, args)
    cube, truth = load_dataset(config)
    split = sample_split(truth, config.n_train, config.n_val, seed)
    features = extract_stage(config, cube, seed, cache_dir=out)
    model, _ = classifier_stage(config, features, truth, split, seed,
                                cache_dir=out)
    spec = model.spec
    print(
        f"classifier: {spec.hidden_layers} layers x {spec.units} units, "
        f"decay {spec.weight_decay:g}, best val loss "
        f"{model.best_val_loss:.4f} at epoch {model.best_epoch} "
        f"({model.stop_reason})"
    )
    return 0


def _ensure_proba(config, seed, out):
    cube, truth = load_dataset(config)
    split = sample_split(truth, config.n_train, config.n_val, seed)
    features = extract_stage(config, cube, seed, cache_dir=out)
    model, standardized = classifier_stage(
        config, features, truth, split, seed, cache_dir=out
    )
    proba = proba_stage(model, standardized, seed, cache_dir=out)
    return proba, truth, split


def cmd_infer(args):
    config = load_config(args.config)
    seed = _trial_seed(config, args)
    out = _out_dir(config, args)
    proba, truth, _ = _ensure_proba(config, seed, out)
    labels = map_from_marginals(np.asarray(proba, dtype=np.float64))
    base = os.path.join(out, f"pred_mlp_{seed:016x}")
    save_labels_envi(labels, base + ".hdr", base + ".raw")
    render_map(labels, base + ".png")
    print(f"wrote {base}.hdr/.raw/.png")
    return 0


def cmd_crf(args):
    config = load_config(args.config)
    if config.ugm == "none":
        raise StageError("crf", "config has no undirected model (ugm kind = none)")
    seed = _trial_seed(config, args)
    out = _out_dir(config, args)
    proba, truth, split = _ensure_proba(config, seed, out)
    labels, params = crf_stage(config, proba, truth, split, truth.num_classes)
    base = os.path.join(out, f"pred_crf_{seed:016x}")
    save_labels_envi(labels, base + ".hdr", base + ".raw")
    render_map(labels, base + ".png")
    with open(base + "_params.txt", "w") as fh:
        fh.write(f"w1 = {params.w1:.10g}\ntheta_gamma = {params.theta_gamma:.10g}\n")
    print(
        f"wrote {base}.hdr/.raw/.png (w1={params.w1:.4g}, "
        f"theta_gamma={params.theta_gamma:.4g})"
    )
    return 0


def cmd_evaluate(args):
    config = load_config(args.config)
    _, truth = load_dataset(config)
    pred = load_labels_envi(args.pred_header, args.pred_data)
    if args.scope == "test":
        seed = _trial_seed(config, args)
        split = sample_split(truth, config.n_train, config.n_val, seed)
        scope = split.test
    else:
        scope = np.argwhere(truth.labels > 0)
    m = oa_aa_kappa(confusion(pred, truth, scope))
    print(f"oa={m.oa:.4f} aa={m.aa:.4f} kappa={m.kappa:.4f} (scope={args.scope})")
    return 0


def cmd_trial(args):
    config = load_config(args.config)
    seed = _trial_seed(config, args)
    out = _out_dir(config, args)
    report = run_trial(config, seed, cache_dir=out)
    _print_metrics(report, args.variant)
    write_trials_csv(
        os.path.join(out, f"trial_{seed:016x}.csv"), [report]
    )
    return 0


def cmd_experiment(args):
    config = load_config(args.config)
    out = args.out if args.out is not None else config.out_dir
    reports, table, tests = run_experiment(
        config, n_trials=args.trials, out_dir=out, cache=args.cache
    )
    print(f"\n{len(reports)} trials aggregated:")
    for variant in sorted(table):
        stats = table[variant]
        print(
            f"  {variant}: oa {stats['oa'][0]:.4f}+-{stats['oa'][1]:.4f} "
            f"aa {stats['aa'][0]:.4f}+-{stats['aa'][1]:.4f} "
            f"kappa {stats['kappa'][0]:.4f}+-{stats['kappa'][1]:.4f}"
        )
    for (a, b, metric), (n, t, p) in sorted(tests.items()):
        if metric == "oa":
            print(f"  paired t ({a} vs {b}, oa, n={n}): t={t:.3f} p={p:.4g}")
    return 0


def cmd_render(args):
    if args.labels_text is not None:
        labels = load_labels_text(args.labels_text)
    else:
        labels = load_labels_envi(args.labels_header, args.labels_data)
    render_map(labels, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hsiseg",
        description="Spatial-spectral segmentation pipeline for "
        "hyperspectral rasters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="fixture (.mat/.npy) to ENVI-style pair")
    p.add_argument("--input", required=True, help="cube fixture path")
    p.add_argument("--input-key", default=None, help="array key for .mat input")
    p.add_argument("--labels", default=None, help="label fixture path")
    p.add_argument("--labels-key", default=None)
    p.add_argument("--wavelengths", default=None,
                   help="text file, one wavelength per line")
    p.add_argument("--name", default="scene")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_convert)

    def stage_parser(name, help_text):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", required=True)
        q.add_argument("--seed", type=int, default=None,
                       help="trial seed (default: first derived seed)")
        q.add_argument("--out", default=None, help="artifact directory")
        return q

    stage_parser("extract", "fit extractor, cache feature raster").set_defaults(
        func=cmd_extract
    )
    stage_parser("train", "cross-validate and cache the classifier").set_defaults(
        func=cmd_train
    )
    stage_parser("infer", "cache probabilities, write argmax map").set_defaults(
        func=cmd_infer
    )
    stage_parser("crf", "tune and run post-processing, write map").set_defaults(
        func=cmd_crf
    )

    p = stage_parser("evaluate", "score a prediction raster")
    p.add_argument("--pred-header", required=True)
    p.add_argument("--pred-data", required=True)
    p.add_argument("--scope", choices=("labeled", "test"), default="labeled")
    p.set_defaults(func=cmd_evaluate)

    p = stage_parser("trial", "run one full trial and report metrics")
    p.add_argument("--variant", default=None, help="print only this variant")
    p.set_defaults(func=cmd_trial)

    p = sub.add_parser("experiment", help="run the multi-trial protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--cache", action="store_true",
                   help="cache per-trial artifacts in the output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("render", help="label raster to color PNG")
    p.add_argument("--labels-header", default=None)
    p.add_argument("--labels-data", default=None)
    p.add_argument("--labels-text", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
