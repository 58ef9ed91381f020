"""Scoring and statistics: confusion matrices, OA/AA/kappa, paired t-tests,
multi-trial aggregation.

Only pixels with nonzero ground truth are ever scored.  Classes with no
test pixels are excluded from the average-accuracy denominator (their
per-class recall is reported as NaN).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyInputError, InvalidScopeError


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class_recall: list  # NaN for classes absent from the scope


@dataclass
class TrialReport:
    seed: int
    variants: dict  # variant name -> MetricsReport
    seconds: dict = field(default_factory=dict)  # variant name -> wall-clock


def confusion(pred, truth, scope):
    """C x C count matrix over the scope pixels; rows = true, cols = predicted."""
    if pred.labels.shape != truth.labels.shape:
        raise DimensionError(
            f"prediction {pred.labels.shape} vs truth {truth.labels.shape}"
        )
    scope = np.asarray(scope, dtype=np.int64).reshape(-1, 2)
    if scope.shape[0] == 0:
        raise EmptyInputError("empty scoring scope")
    t = truth.labels[scope[:, 0], scope[:, 1]]
    p = pred.labels[scope[:, 0], scope[:, 1]]
    if np.any(t == 0):
        raise InvalidScopeError("scope contains pixels without ground truth")
    if np.any(p == 0):
        raise InvalidScopeError("scope contains unclassified predictions")
    c = truth.num_classes
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def oa_aa_kappa(cm):
    """Overall accuracy, average (per-class) accuracy, and Cohen's kappa.

    kappa = (p_o - p_e) / (1 - p_e) with p_e from the row/column marginals;
    the degenerate p_e = 1 case is reported as kappa = 0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n <= 0:
        raise EmptyInputError("confusion matrix is empty")
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    diag = np.diag(cm)

    oa = diag.sum() / n
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(row > 0, diag / np.maximum(row, 1e-300), np.nan)
    aa = float(np.nanmean(recall))
    p_e = float((row * col).sum() / (n * n))
    kappa = 0.0 if p_e >= 1.0 else float((oa - p_e) / (1.0 - p_e))
    return MetricsReport(
        oa=float(oa), aa=aa, kappa=kappa, per_class_recall=recall.tolist()
    )


# ---------------------------------------------------------------------------
# Paired t-test (p-value via continued-fraction regularized incomplete beta)
# ---------------------------------------------------------------------------

_BETACF_EPS = 1e-14
_BETACF_MAX_ITER = 300


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, df):
    """Two-sided tail probability of Student's t with df degrees of freedom."""
    if not math.isfinite(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_regularized(df / 2.0, 0.5, x)


def paired_t_test(a, b):
    """Paired t statistic and two-sided p-value for samples a and b.

    t = mean(d) / (sd(d) / sqrt(n)) on differences d = a - b, sd with the
    n-1 denominator.  All-zero differences report (0.0, 1.0); zero spread
    with a nonzero mean reports t = +/-inf, p = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("samples must be 1-D and equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 paired samples")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    return float(t), t_sf_two_sided(t, n - 1)


def aggregate(trials):
    """Per-variant mean and sample std (n-1) of OA, AA, kappa across trials.

    Returns {variant: {"n": int, "oa": (mean, std), "aa": ..., "kappa": ...}}.
    """
    if len(trials) < 2:
        raise ValueError("need at least 2 trials to aggregate")
    keys = set(trials[0].variants)
    for tr in trials[1:]:
        if set(tr.variants) != keys:
            raise ValueError(
                f"trial {tr.seed} variants {sorted(tr.variants)} != {sorted(keys)}"
            )
    out = {}
    for variant in sorted(keys):
        stats = {}
        for metric in ("oa", "aa", "kappa"):
            vals = np.array(
                [getattr(tr.variants[variant], metric) for tr in trials]
            )
            stats[metric] = (float(vals.mean()), float(vals.std(ddof=1)))
        stats["n"] = len(trials)
        out[variant] = stats
    return out
