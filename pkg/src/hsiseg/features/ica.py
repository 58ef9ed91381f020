"""ICA filter-bank learning and multispectral filter-response extraction.

A bank of K filters is learned from randomly sampled f x f x B patches:
patches are centered, PCA-whitened down to K dimensions, and unmixed with
symmetric fixed-point ICA (logcosh contrast).  The final filters are the
unmixing directions composed with the whitening transform, so a single
correlation of the (centered) cube with each filter yields the component
activations.  Responses pass through an absolute-value nonlinearity by
default; borders are mirror padded so spatial dims are preserved.
"""

from dataclasses import dataclass

import numpy as np

from ..datacube import FeatureCube
from ..errors import DimensionError, InsufficientSamplesError

# Floor for eigenvalues/singular values when inverting scale factors, so
# degenerate directions (e.g. constant input) stay finite.
_EIG_FLOOR = 1e-12


@dataclass
class FilterBank:
    """Learned patch-space filters plus the whitening affine that built them."""

    filters: np.ndarray  # (K, f, f, B) float32
    whitening: np.ndarray  # (K, f*f*B) float32
    mean: np.ndarray  # (f*f*B,) float32
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float32)
        self.whitening = np.asarray(self.whitening, dtype=np.float32)
        self.mean = np.asarray(self.mean, dtype=np.float32)
        if self.filters.ndim != 4:
            raise ValueError("filters must be (K, f, f, B)")
        k, f, f2, b = self.filters.shape
        if k < 1:
            raise ValueError("need at least one filter")
        if f != f2 or f % 2 == 0:
            raise ValueError("filters must be square with odd side")
        if self.whitening.shape != (k, f * f * b):
            raise ValueError("whitening shape must be (K, f*f*B)")
        if self.mean.shape != (f * f * b,):
            raise ValueError("mean shape must be (f*f*B,)")
        for arr in (self.filters, self.whitening, self.mean):
            if not np.all(np.isfinite(arr)):
                raise ValueError("filter bank contains non-finite values")

    @property
    def k(self):
        return self.filters.shape[0]

    @property
    def f(self):
        return self.filters.shape[1]

    @property
    def bands(self):
        return self.filters.shape[3]


def sample_patches(cube, f, n_patches, rng):
    """n_patches random f x f x B patches as an (n, f*f*B) matrix."""
    h, w, b = cube.values.shape
    if h < f or w < f:
        raise InsufficientSamplesError(
            f"cube {h}x{w} too small for {f}x{f} patches"
        )
    rows = rng.integers(0, h - f + 1, size=n_patches)
    cols = rng.integers(0, w - f + 1, size=n_patches)
    out = np.empty((n_patches, f * f * b), dtype=np.float64)
    for i, (r, c) in enumerate(zip(rows, cols)):
        out[i] = cube.values[r : r + f, c : c + f, :].ravel()
    return out


def pca_whiten(x, k):
    """Center and whiten rows of x down to k principal dimensions.

    Returns (z, matrix, mean) with z = (x - mean) @ matrix.T; the
    population covariance of z is the identity for non-degenerate data.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > d:
        raise DimensionError(f"cannot whiten to {k} dims from {d}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = np.arange(d - 1, d - 1 - k, -1)
    scales = np.sqrt(np.maximum(eigvals[top], _EIG_FLOOR))
    matrix = eigvecs[:, top].T / scales[:, None]
    return centered @ matrix.T, matrix, mean


def _sym_decorrelate(w):
    s, u = np.linalg.eigh(w @ w.T)
    inv_root = u @ np.diag(1.0 / np.sqrt(np.maximum(s, _EIG_FLOOR))) @ u.T
    return inv_root @ w


def fastica_unmixing(z, seed, tol=1e-4, max_iter=500):
    """Symmetric fixed-point ICA with logcosh contrast on whitened rows.

    Returns (w, converged, n_iter); w is the k x k unmixing matrix such
    that z @ w.T has maximally non-Gaussian, decorrelated columns.
    Non-convergence is reported, not raised.
    """
    z = np.asarray(z, dtype=np.float64)
    n, k = z.shape
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.normal(size=(k, k)))
    converged = False
    n_iter = max_iter
    for it in range(1, max_iter + 1):
        u = w @ z.T
        g = np.tanh(u)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ z / n - g_prime.mean(axis=1)[:, None] * w)
        shift = np.max(np.abs(np.abs(np.diag(w_new @ w.T)) - 1.0))
        w = w_new
        if shift < tol:
            converged = True
            n_iter = it
            break
    return w, converged, n_iter


def learn_ica_filters(cube, k=32, f=5, n_patches=8000, seed=0,
                      tol=1e-4, max_iter=500):
    """Learn a K-filter ICA bank from random patches of the cube."""
    if f % 2 == 0 or f < 1:
        raise ValueError("receptive field f must be odd and positive")
    if k < 1:
        raise ValueError("need at least one filter")
    d = f * f * cube.bands
    if k > d:
        raise DimensionError(f"k={k} exceeds patch dimension {d}")
    rng = np.random.default_rng(seed)
    patches = sample_patches(cube, f, n_patches, rng)
    z, whitening, mean = pca_whiten(patches, k)
    w, converged, n_iter = fastica_unmixing(z, seed=seed, tol=tol,
                                            max_iter=max_iter)
    filters = (w @ whitening).reshape(k, f, f, cube.bands)
    return FilterBank(
        filters=filters.astype(np.float32),
        whitening=whitening.astype(np.float32),
        mean=mean.astype(np.float32),
        converged=converged,
        n_iter=n_iter,
    )


def extract_mica(cube, bank, activation="abs"):
    """Per-pixel filter responses of the bank over the whole cube.

    Each output channel correlates one patch-space filter with the
    mirror-padded cube, centered by the bank's training mean.  activation
    "abs" (default) rectifies the responses; "linear" leaves them raw.
    """
    if activation not in ("abs", "linear"):
        raise ValueError("activation must be 'abs' or 'linear'")
    if cube.bands != bank.bands:
        raise DimensionError(
            f"cube has {cube.bands} bands, filter bank expects {bank.bands}"
        )
    k, f = bank.k, bank.f
    radius = f // 2
    filters = bank.filters.astype(np.float64)
    offsets = filters.reshape(k, -1) @ bank.mean.astype(np.float64)

    h, w, _ = cube.values.shape
    padded = np.pad(cube.values, ((radius, radius), (radius, radius), (0, 0)),
                    mode="reflect")
    response = np.zeros((h, w, k))
    for dr in range(f):
        for dc in range(f):
            response += padded[dr : dr + h, dc : dc + w, :] @ filters[:, dr, dc, :].T
    response -= offsets
    if activation == "abs":
        response = np.abs(response)
    return FeatureCube(response.astype(np.float32))
