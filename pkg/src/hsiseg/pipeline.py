"""End-to-end orchestration: split, extract, classify, post-process, score.

A trial is the unit of work: one random split at a fixed derived seed,
feature extraction fit on the full image (unsupervised, so no label
leakage), a cross-validated MLP, per-pixel probabilities, and optional
undirected-model post-processing whose (w1, theta_gamma) are tuned on
the trial's validation pixels.  Metrics for the with- and without-CRF
variants come out of the same trial so ablations are paired.

Every artifact a trial produces (features, extractor model, classifier,
probabilities) can be cached in a directory keyed by the trial seed; a
rerun picks up the cached bytes and reproduces identical metrics.  All
cached payloads are float32, and everything downstream consumes the
float32 values, so resumed and fresh runs agree bit for bit.
"""

import math
import os
import time

import numpy as np
from PIL import Image

from .datacube import (
    FeatureCube,
    LabelMap,
    load_envi,
    load_labels_envi,
    load_labels_text,
    sample_split,
)
from .errors import InvalidLabelingError, StageError
from .features import (
    apply_standardizer,
    encode_smcae,
    extract_mica,
    fit_standardizer,
    learn_ica_filters,
    train_smcae,
)
from .features.smcae import SmcaeSpec
from .metrics import (
    MetricsReport,
    TrialReport,
    aggregate,
    confusion,
    oa_aa_kappa,
    paired_t_test,
)
from .mlp import cross_validate, predict_proba
from .serialize import (
    history_to_csv,
    load_arrays,
    load_filter_bank,
    load_mlp,
    load_smcae,
    save_arrays,
    save_filter_bank,
    save_mlp,
    save_smcae,
)
from .ugm import (
    EnergyModel,
    PairwiseParams,
    alpha_expansion,
    default_param_lattice,
    icm,
    map_from_marginals,
    meanfield_marginals,
    tune_crf,
    unary_from_proba,
)

_MASK64 = (1 << 64) - 1

# 16 distinct class colors + black background, indexable by label.
DEFAULT_PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
        (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    ],
    dtype=np.uint8,
)


def hash64(seed, index):
    """Deterministic 64-bit mix of (seed, index); used for per-trial seeds."""
    z = (int(seed) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def trial_seeds(master_seed, n_trials):
    return [hash64(master_seed, t) for t in range(n_trials)]


def render_map(labels, path, palette=None):
    """Write a LabelMap as an 8-bit RGB PNG, class 0 black."""
    palette = DEFAULT_PALETTE if palette is None else np.asarray(palette, np.uint8)
    arr = labels.labels
    if arr.max(initial=0) >= palette.shape[0]:
        raise InvalidLabelingError(
            f"label {int(arr.max())} exceeds palette size {palette.shape[0]}"
        )
    rgb = palette[arr]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def load_dataset(config):
    """Cube and ground truth named by the config's [data] section."""
    cube = load_envi(config.cube_header, config.cube_data)
    if config.labels_text is not None:
        truth = load_labels_text(config.labels_text)
    else:
        truth = load_labels_envi(config.labels_header, config.labels_data)
    if (truth.height, truth.width) != (cube.height, cube.width):
        raise StageError("data", f"cube {cube.height}x{cube.width} vs labels "
            f"{truth.height}x{truth.width}"
        )
    return cube, truth


def _cache_path(cache_dir, name, seed):
    return None if cache_dir is None else os.path.join(
        cache_dir, f"{name}_{seed:016x}.bin"
    )


def extract_stage(config, cube, trial_seed, cache_dir=None):
    """Per-trial features: fit the configured extractor on the full image.

    Returns a float32 FeatureCube.  When caching, the feature raster and
    the extractor model land in cache_dir keyed by the trial seed.
    """
    feat_path = _cache_path(cache_dir, "features", trial_seed)
    model_path = _cache_path(cache_dir, "extractor", trial_seed)
    if feat_path is not None and os.path.exists(feat_path):
        return FeatureCube(load_arrays(feat_path)["features"])

    seed = hash64(trial_seed, 1)
    try:
        if config.extractor == "raw":
            features = FeatureCube(cube.values.astype(np.float32))
            model = None
        elif config.extractor == "mica":
            model = learn_ica_filters(
                cube,
                k=config.mica_components,
                f=config.mica_window,
                n_patches=config.mica_patches,
                seed=seed,
            )
            features = extract_mica(cube, model,
                                    activation=config.mica_activation)
        else:
            spec = SmcaeSpec(
                channels=config.smcae_channels,
                kernel_size=config.smcae_kernel,
                loss_weights=config.smcae_loss_weights,
                patch_size=config.smcae_patch,
                n_patches=config.smcae_patches,
                batch_size=config.smcae_batch,
                epochs=config.smcae_epochs,
                learning_rate=config.smcae_learning_rate,
                feature_mode=config.smcae_mode,
            )
            model = train_smcae(cube, spec, seed=seed)
            features = encode_smcae(cube, model)
    except Exception as exc:
        raise StageError("extract", f"{exc}") from exc

    if feat_path is not None:
        save_arrays(feat_path, {"features": features.values})
        if config.extractor == "mica":
            save_filter_bank(model_path, model)
        elif config.extractor == "smcae":
            save_smcae(model_path, model)
    return features


def classifier_stage(config, features, truth, split, trial_seed,
                     cache_dir=None):
    """Standardize, cross-validate the MLP lattice, return the best model.

    The standardizer is fit on the full image's extracted features; the
    classifier sees only the split's train/val pixels.
    """
    mlp_path = _cache_path(cache_dir, "mlp", trial_seed)
    standardizer = fit_standardizer(features)
    standardized = apply_standardizer(standardizer, features)
    if mlp_path is not None and os.path.exists(mlp_path):
        return load_mlp(mlp_path), standardized

    train_x = standardized.pixel_matrix(split.train)
    train_y = truth.labels[split.train[:, 0], split.train[:, 1]]
    val_x = standardized.pixel_matrix(split.val)
    val_y = truth.labels[split.val[:, 0], split.val[:, 1]]
    grid = config.classifier_grid(features.dim, truth.num_classes)
    try:
        _, model = cross_validate(
            grid, train_x, train_y, val_x, val_y,
            seed=hash64(trial_seed, 2),
            max_epochs=config.max_epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
        )
    except Exception as exc:
        raise StageError("train", f"{exc}") from exc

    if mlp_path is not None:
        save_mlp(mlp_path, model)
        history_to_csv(
            os.path.join(cache_dir, f"mlp_history_{trial_seed:016x}.csv"),
            model.history,
        )
    return model, standardized


def proba_stage(model, standardized, trial_seed, cache_dir=None):
    """Float32 per-pixel class probabilities for the whole image."""
    proba_path = _cache_path(cache_dir, "proba", trial_seed)
    if proba_path is not None and os.path.exists(proba_path):
        return load_arrays(proba_path)["proba"]
    try:
        proba = predict_proba(model, standardized).astype(np.float32)
    except Exception as exc:
        raise StageError("infer", f"{exc}") from exc
    if proba_path is not None:
        save_arrays(proba_path, {"proba": proba})
    return proba


def crf_stage(config, proba, truth, split, num_classes):
    """Tune pairwise parameters on val pixels, then run the configured
    inference.  Returns (LabelMap, PairwiseParams)."""
    unary = unary_from_proba(proba)
    try:
        if config.fixed_w1 is not None:
            params = PairwiseParams(w1=config.fixed_w1,
                                    theta_gamma=config.fixed_theta)
        else:
            grid = default_param_lattice(
                points_per_axis=config.lattice_points,
                low=config.lattice_low,
                high=config.lattice_high,
            )
            params = tune_crf(unary, truth, split.val, grid=grid,
                              iterations=config.ugm_iterations)
        if config.ugm == "dense_meanfield":
            labels = map_from_marginals(
                meanfield_marginals(proba, params,
                                    iterations=config.ugm_iterations)
            )
        else:
            model = EnergyModel(unary=unary, pairwise=params,
                                structure="grid4")
            init = map_from_marginals(np.asarray(proba, dtype=np.float64))
            if config.ugm == "grid_icm":
                labels = icm(model, init)
            else:
                labels = alpha_expansion(model, init)
    except Exception as exc:
        raise StageError("crf", f"{exc}") from exc
    return labels, params


def _score(pred_labels, truth, scope):
    cm = confusion(pred_labels, truth, scope)
    return oa_aa_kappa(cm)


def run_trial(config, trial_seed, data=None, cache_dir=None):
    """One full trial; returns a TrialReport keyed by pipeline variant.

    Variants are named '<extractor>-mlp' and, when an undirected model is
    configured, '<extractor>-mlp+crf'.  The same probabilities feed both,
    so the pair is a controlled ablation.
    """
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
    cube, truth = load_dataset(config) if data is None else data
    try:
        split = sample_split(truth, config.n_train, config.n_val, trial_seed)
    except Exception as exc:
        raise StageError("split", f"{exc}") from exc

    started = time.perf_counter()
    features = extract_stage(config, cube, trial_seed, cache_dir)
    model, standardized = classifier_stage(
        config, features, truth, split, trial_seed, cache_dir
    )
    proba = proba_stage(model, standardized, trial_seed, cache_dir)

    base_name = f"{config.extractor}-mlp"
    mlp_labels = map_from_marginals(np.asarray(proba, dtype=np.float64))
    try:
        variants = {base_name: _score(mlp_labels, truth, split.test)}
    except Exception as exc:
        raise StageError("evaluate", f"{exc}") from exc
    seconds = {base_name: time.perf_counter() - started}

    if config.ugm != "none":
        crf_labels, params = crf_stage(
            config, proba, truth, split, truth.num_classes
        )
        try:
            variants[base_name + "+crf"] = _score(crf_labels, truth, split.test)
        except Exception as exc:
            raise StageError("evaluate", f"{exc}") from exc
        seconds[base_name + "+crf"] = time.perf_counter() - started
        if cache_dir is not None:
            render_map(crf_labels,
                       os.path.join(cache_dir, f"map_crf_{trial_seed:016x}.png"))
    if cache_dir is not None:
        render_map(mlp_labels,
                   os.path.join(cache_dir, f"map_mlp_{trial_seed:016x}.png"))

    return TrialReport(seed=trial_seed, variants=variants, seconds=seconds)


def write_trials_csv(path, reports):
    """Schema: variant,seed,oa,aa,kappa,seconds; one row per variant-trial."""
    with open(path, "w") as fh:
        fh.write("variant,seed,oa,aa,kappa,seconds\n")
        for report in reports:
            for variant in sorted(report.variants):
                m = report.variants[variant]
                secs = report.seconds.get(variant, float("nan"))
                fh.write(
                    f"{variant},{report.seed},{m.oa:.6f},{m.aa:.6f},"
                    f"{m.kappa:.6f},{secs:.3f}\n"
                )


def write_aggregate_csv(path, table):
    """Schema: variant,n,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std."""
    with open(path, "w") as fh:
        fh.write("variant,n,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std\n")
        for variant in sorted(table):
            stats = table[variant]
            fh.write(
                f"{variant},{stats['n']},"
                f"{stats['oa'][0]:.6f},{stats['oa'][1]:.6f},"
                f"{stats['aa'][0]:.6f},{stats['aa'][1]:.6f},"
                f"{stats['kappa'][0]:.6f},{stats['kappa'][1]:.6f}\n"
            )


def write_significance_csv(path, tests):
    """Schema: variant_a,variant_b,metric,n,t,p for each paired test."""
    with open(path, "w") as fh:
        fh.write("variant_a,variant_b,metric,n,t,p\n")
        for (a, b, metric), (n, t, p) in sorted(tests.items()):
            fh.write(f"{a},{b},{metric},{n},{t:.6f},{p:.6g}\n")


def significance_tests(reports):
    """Paired t-tests between each '<x>' and '<x>+crf' variant pair."""
    if not reports:
        return {}
    names = sorted(reports[0].variants)
    tests = {}
    for name in names:
        partner = name + "+crf"
        if partner not in names:
            continue
        for metric in ("oa", "aa", "kappa"):
            a = [getattr(r.variants[partner], metric) for r in reports]
            b = [getattr(r.variants[name], metric) for r in reports]
            if len(a) >= 2:
                t, p = paired_t_test(a, b)
                tests[(partner, name, metric)] = (len(a), t, p)
    return tests


def run_experiment(config, n_trials=None, out_dir=None, cache=False,
                   log=print):
    """Multi-trial protocol: derived seeds, aggregation, significance.

    A failing trial is logged and skipped; the aggregate reports the
    reduced n.  Returns (reports, aggregate table, significance tests).
    """
    n_trials = config.n_trials if n_trials is None else n_trials
    if n_trials < 2:
        raise ValueError("need at least 2 trials")
    out_dir = config.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = out_dir if cache else None

    data = load_dataset(config)
    reports = []
    failures = []
    for index, seed in enumerate(trial_seeds(config.seed, n_trials)):
        try:
            started = time.perf_counter()
            report = run_trial(config, seed, data=data, cache_dir=cache_dir)
            reports.append(report)
            log(
                f"trial {index} seed {seed:016x}: "
                + ", ".join(
                    f"{k} oa={report.variants[k].oa:.4f}"
                    for k in sorted(report.variants)
                )
                + f" ({time.perf_counter() - started:.1f}s)"
            )
        except Exception as exc:  # keep going, record the stage message
            failures.append((index, seed, str(exc)))
            log(f"trial {index} seed {seed:016x} FAILED: {exc}")

    if len(reports) < 2:
        raise StageError("experiment", f"only {len(reports)}/{n_trials} trials succeeded"
        )

    table = aggregate(reports)
    tests = significance_tests(reports)
    write_trials_csv(os.path.join(out_dir, "trials.csv"), reports)
    write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), table)
    write_significance_csv(os.path.join(out_dir, "significance.csv"), tests)
    if failures:
        with open(os.path.join(out_dir, "failures.csv"), "w") as fh:
            fh.write("trial,seed,error\n")
            for index, seed, message in failures:
                clean = message.replace("\n", " ").replace(",", ";")
                fh.write(f"{index},{seed},{clean}\n")
    return reports, table, tests
