"""Hyperspectral raster ingestion, spectral resampling, and low-shot splits.

Raster format
-------------
Cubes are stored as an ENVI-style text header next to a raw binary payload.
The header is ``key = value`` text (one key per line, ``{...}`` lists may
span lines).  Required keys: ``samples``, ``lines``, ``bands``,
``interleave`` (bsq/bil/bip), ``data type`` (2=int16, 4=float32,
5=float64, 12=uint16), ``byte order`` (0=little, 1=big).  ``wavelength``
is optional; band indices are used when it is absent.

Ground truth is either a single-band ENVI raster of integer labels or a
plain text grid in PGM (P2) layout: ``P2``, then ``width height``, then
``maxval``, then whitespace-separated labels in row-major order.
0 means unlabeled everywhere.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInputError,
    HeaderParseError,
    InsufficientSamplesError,
    MalformedFileError,
    SpectralRangeError,
    UnsupportedFormatError,
)

# ENVI numeric codes for the data types we read/write.
_DTYPE_CODES = {
    2: np.dtype(np.int16),
    4: np.dtype(np.float32),
    5: np.dtype(np.float64),
    12: np.dtype(np.uint16),
}
_CODE_FOR_DTYPE = {v: k for k, v in _DTYPE_CODES.items()}

_REQUIRED_KEYS = ("samples", "lines", "bands", "interleave", "data type", "byte order")


@dataclass
class SpectralCube:
    """H x W x B raster with per-band wavelength centers (nanometers)."""

    values: np.ndarray  # (height, width, bands) float64
    wavelengths: np.ndarray  # (bands,) strictly increasing

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("cube values must be (height, width, bands)")
        h, w, b = self.values.shape
        if h < 1 or w < 1 or b < 1:
            raise ValueError("cube dimensions must all be >= 1")
        if self.wavelengths.shape != (b,):
            raise ValueError("wavelength count must equal band count")
        if b > 1 and not np.all(np.diff(self.wavelengths) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cube contains non-finite values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]


@dataclass
class LabelMap:
    """Integer label raster; 0 = unlabeled, 1..num_classes = classes."""

    labels: np.ndarray  # (height, width) int32
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-D raster")
        if self.num_classes < 0:
            raise ValueError("num_classes must be >= 0")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() > self.num_classes
        ):
            raise ValueError("labels must lie in [0, num_classes]")

    @classmethod
    def from_array(cls, arr, num_classes=None):
        arr = np.asarray(arr, dtype=np.int32)
        if num_classes is None:
            num_classes = int(arr.max()) if arr.size else 0
        return cls(arr, num_classes)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass
class FeatureCube:
    """H x W x D raster of per-pixel feature vectors."""

    values: np.ndarray  # (height, width, dim) float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError("feature values must be (height, width, dim)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature cube contains non-finite values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def dim(self):
        return self.values.shape[2]

    def pixel_matrix(self, coords):
        """Feature vectors at (row, col) coordinate pairs as an (n, dim) matrix."""
        coords = np.asarray(coords)
        return self.values[coords[:, 0], coords[:, 1], :]


@dataclass
class Split:
    """Disjoint train/val/test pixel coordinate sets drawn from ground truth."""

    train: np.ndarray  # (n, 2) int32 (row, col)
    val: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int32).reshape(-1, 2)
            setattr(self, name, arr)


# ---------------------------------------------------------------------------
# ENVI-style IO
# ---------------------------------------------------------------------------


def parse_envi_header(text):
    """Parse ENVI-style header text into a {key: string} dict.

    Keys are lowercased; ``{...}`` list values are returned as the inner
    text with braces stripped.  Raises HeaderParseError when a required
    key is missing.
    """
    fields = {}
    # Join brace groups onto one logical line before splitting on '='.
    text = re.sub(r"\{[^}]*\}", lambda m: m.group(0).replace("\n", " "), text)
    for line in text.splitlines():
        line = line.strip()
        if not line or line.upper() == "ENVI" or line.startswith(";"):
            continue
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        fields[key.strip().lower()] = value.strip()
    missing = [k for k in _REQUIRED_KEYS if k not in fields]
    if missing:
        raise HeaderParseError(f"header missing required keys: {missing}")
    return fields


def _parse_int(fields, key):
    try:
        return int(fields[key])
    except ValueError as exc:
        raise HeaderParseError(f"header key {key!r} is not an integer: {fields[key]!r}") from exc


def _parse_float_list(raw):
    inner = raw.strip()
    if inner.startswith("{"):
        inner = inner[1:]
    if inner.endswith("}"):
        inner = inner[:-1]
    parts = [p for p in re.split(r"[,\s]+", inner) if p]
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise HeaderParseError(f"unparseable wavelength list: {raw!r}") from exc


def load_envi(header_path, data_path):
    """Read an ENVI raster pair into a SpectralCube.

    Values are reordered to (row, col, band) regardless of interleave and
    converted to float64.
    """
    text = Path(header_path).read_text()
    fields = parse_envi_header(text)

    samples = _parse_int(fields, "samples")
    lines = _parse_int(fields, "lines")
    bands = _parse_int(fields, "bands")
    interleave = fields["interleave"].lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise HeaderParseError(f"unknown interleave {interleave!r}")
    code = _parse_int(fields, "data type")
    if code not in _DTYPE_CODES:
        raise UnsupportedFormatError(f"unsupported data type code {code}")
    byte_order = _parse_int(fields, "byte order")
    if byte_order not in (0, 1):
        raise HeaderParseError(f"byte order must be 0 or 1, got {byte_order}")

    dtype = _DTYPE_CODES[code].newbyteorder("<" if byte_order == 0 else ">")
    expected = samples * lines * bands * dtype.itemsize
    actual = Path(data_path).stat().st_size
    if actual != expected:
        raise MalformedFileError(
            f"data file is {actual} bytes, header implies {expected}"
        )

    raw = np.fromfile(data_path, dtype=dtype)
    if interleave == "bsq":
        cube = raw.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        cube = raw.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:  # bip
        cube = raw.reshape(lines, samples, bands)

    if "wavelength" in fields:
        wavelengths = _parse_float_list(fields["wavelength"])
        if wavelengths.shape != (bands,):
            raise HeaderParseError(
                f"wavelength list has {wavelengths.size} entries for {bands} bands"
            )
    else:
        wavelengths = np.arange(bands, dtype=np.float64)

    return SpectralCube(np.ascontiguousarray(cube, dtype=np.float64), wavelengths)


def save_envi(cube, header_path, data_path, interleave="bsq", dtype=np.float32,
              byte_order=0):
    """Write a SpectralCube as an ENVI header/raw pair.

    Native storage is little-endian float32 unless overridden.
    """
    dtype = np.dtype(dtype)
    if dtype not in _CODE_FOR_DTYPE:
        raise UnsupportedFormatError(f"unsupported dtype {dtype}")
    interleave = interleave.lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise ValueError(f"unknown interleave {interleave!r}")

    values = cube.values
    if interleave == "bsq":
        out = values.transpose(2, 0, 1)
    elif interleave == "bil":
        out = values.transpose(0, 2, 1)
    else:
        out = values
    ordered = dtype.newbyteorder("<" if byte_order == 0 else ">")
    out.astype(ordered).tofile(data_path)

    wl = ", ".join(f"{w:.6f}" for w in cube.wavelengths)
    Path(header_path).write_text(
        "ENVI\n"
        f"samples = {cube.width}\n"
        f"lines = {cube.height}\n"
        f"bands = {cube.bands}\n"
        f"interleave = {interleave}\n"
        f"data type = {_CODE_FOR_DTYPE[dtype]}\n"
        f"byte order = {byte_order}\n"
        f"wavelength = {{ {wl} }}\n"
    )


def load_labels_envi(header_path, data_path):
    """Read a single-band integer ENVI raster as a LabelMap."""
    cube = load_envi(header_path, data_path)
    if cube.bands != 1:
        raise UnsupportedFormatError(
            f"ground truth must be single-band, got {cube.bands} bands"
        )
    arr = cube.values[:, :, 0]
    rounded = np.rint(arr)
    if not np.array_equal(arr, rounded):
        raise MalformedFileError("ground truth raster holds non-integer values")
    return LabelMap.from_array(rounded.astype(np.int32))


def save_labels_envi(label_map, header_path, data_path):
    cube = SpectralCube(
        label_map.labels[:, :, None].astype(np.float64), np.zeros(1)
    )
    save_envi(cube, header_path, data_path, interleave="bsq", dtype=np.uint16)


def load_labels_text(path):
    """Read a P2-style text label grid as a LabelMap."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise HeaderParseError("label text grid must start with 'P2'")
    if len(tokens) < 4:
        raise HeaderParseError("label text grid is truncated")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = tokens[4:]
    if len(data) != width * height:
        raise MalformedFileError(
            f"label grid has {len(data)} values, expected {width * height}"
        )
    arr = np.array([int(t) for t in data], dtype=np.int32).reshape(height, width)
    if arr.size and arr.max() > maxval:
        raise MalformedFileError("label value exceeds declared maximum")
    return LabelMap.from_array(arr, num_classes=maxval)


def save_labels_text(label_map, path):
    lines = [
        "P2",
        f"{label_map.width} {label_map.height}",
        str(label_map.num_classes),
    ]
    for row in label_map.labels:
        lines.append(" ".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Spectral resampling
# ---------------------------------------------------------------------------


def resample_spectra(cube, target_wavelengths):
    """Piecewise-linear resampling of every pixel spectrum onto new band centers.

    Target wavelengths must be strictly increasing and lie within the source
    range; no extrapolation is performed.
    """
    target = np.asarray(target_wavelengths, dtype=np.float64)
    if target.ndim != 1 or target.size < 1:
        raise ValueError("target wavelengths must be a non-empty 1-D list")
    if target.size > 1 and not np.all(np.diff(target) > 0):
        raise ValueError("target wavelengths must be strictly increasing")
    src = cube.wavelengths
    if target[0] < src[0] or target[-1] > src[-1]:
        raise SpectralRangeError(
            f"target range [{target[0]}, {target[-1]}] outside source "
            f"[{src[0]}, {src[-1]}]"
        )

    # Bracketing indices and linear weights, shared by every pixel.
    hi = np.searchsorted(src, target, side="left")
    hi = np.clip(hi, 0, src.size - 1)
    lo = np.clip(hi - 1, 0, src.size - 1)
    on_knot = src[hi] == target
    lo = np.where(on_knot, hi, lo)
    denom = np.where(hi == lo, 1.0, src[hi] - src[lo])
    w = np.where(hi == lo, 0.0, (target - src[lo]) / denom)

    values = cube.values
    out = values[:, :, lo] * (1.0 - w) + values[:, :, hi] * w
    return SpectralCube(out, target)


# ---------------------------------------------------------------------------
# Low-shot splits
# ---------------------------------------------------------------------------


def sample_split(truth, n_train, n_val, seed):
    """Per-class low-shot split: n_train + n_val labeled pixels drawn uniformly
    without replacement, everything else labeled becomes test.

    A class with at least n_train + 1 but fewer than n_train + n_val pixels
    fills train first and puts the remainder in val (its test set is empty);
    a class with fewer than n_train + 1 pixels raises
    InsufficientSamplesError.  Deterministic for a fixed seed.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    if n_val < 0:
        raise ValueError("n_val must be >= 0")
    labels = truth.labels
    if truth.num_classes < 1 or not np.any(labels > 0):
        raise EmptyInputError("ground truth has no labeled pixels")

    rng = np.random.Generator(np.random.PCG64(seed))
    train_parts, val_parts, test_parts = [], [], []
    for cls in range(1, truth.num_classes + 1):
        coords = np.argwhere(labels == cls).astype(np.int32)  # row-major order
        count = coords.shape[0]
        if count == 0:
            continue
        if count < n_train + 1:
            raise InsufficientSamplesError(
                f"class {cls} has {count} labeled pixels, needs >= {n_train + 1}"
            )
        perm = rng.permutation(count)
        coords = coords[perm]
        take_val = min(n_val, count - n_train)
        train_parts.append(coords[:n_train])
        val_parts.append(coords[n_train:n_train + take_val])
        test_parts.append(coords[n_train + take_val:])

    empty = np.empty((0, 2), dtype=np.int32)
    return Split(
        train=np.concatenate(train_parts) if train_parts else empty,
        val=np.concatenate(val_parts) if val_parts else empty,
        test=np.concatenate(test_parts) if test_parts else empty,
        seed=seed,
    )
