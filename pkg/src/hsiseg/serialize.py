"""Flat binary container for trained model weights.

Layout (all integers little-endian):

    bytes 0-3   magic b"HSIM"
    u32         format version (currently 1)
    u32         number of entries
    per entry:
        u16     name length in bytes
        bytes   utf-8 name
        u8      rank
        u32[r]  dimensions
        f32[*]  payload, C order, little-endian

Every payload is stored as float32, which is also the in-memory dtype of
trained weights, so a model written to disk and read back is bit-identical
to the one that was trained.  Adapters below pack FilterBank, SmcaeModel
and TrainedMlp into named entries (configuration scalars ride along as
0-d or small 1-d arrays; they are exact in float32 for the ranges used).
"""

import struct

import numpy as np

from .errors import MalformedFileError, UnsupportedFormatError
from .features.ica import FilterBank
from .features.smcae import SmcaeModel, SmcaeSpec
from .mlp import MlpSpec, TrainedMlp

MAGIC = b"HSIM"
VERSION = 1
_MAX_RANK = 8

_STOP_CODES = {"max_epochs": 0.0, "early_stop": 1.0, "untrained": 2.0}
_STOP_NAMES = {v: k for k, v in _STOP_CODES.items()}


def save_arrays(path, arrays):
    """Write an ordered {name: array} mapping to `path`."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(arrays))
    for name, array in arrays.items():
        data = np.asarray(array, dtype="<f4")
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        if data.ndim > _MAX_RANK:
            raise ValueError(f"entry {name!r} has rank {data.ndim} > {_MAX_RANK}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"entry name too long: {name!r}")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", data.ndim)
        for dim in data.shape:
            blob += struct.pack("<I", dim)
        blob += data.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise MalformedFileError(f"container truncated while reading {what}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_arrays(path):
    """Read a container back as an ordered {name: float32 array} dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    reader = _Reader(raw)
    if reader.take(4, "magic") != MAGIC:
        raise MalformedFileError(f"{path}: bad magic, not a model container")
    version = reader.u32("version")
    if version != VERSION:
        raise UnsupportedFormatError(
            f"{path}: container version {version}, expected {VERSION}"
        )
    n_entries = reader.u32("entry count")
    out = {}
    for _ in range(n_entries):
        name_len = reader.u16("name length")
        name = reader.take(name_len, "name").decode("utf-8")
        rank = reader.u8("rank")
        if rank > _MAX_RANK:
            raise MalformedFileError(f"{path}: entry {name!r} rank {rank}")
        shape = tuple(reader.u32("dimension") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = reader.take(4 * count, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if reader.pos != len(raw):
        raise MalformedFileError(f"{path}: {len(raw) - reader.pos} trailing bytes")
    return out


def _require(entries, name, path):
    if name not in entries:
        raise MalformedFileError(f"{path}: missing entry {name!r}")
    return entries[name]


def save_filter_bank(path, bank):
    save_arrays(path, {
        "filters": bank.filters,
        "whitening": bank.whitening,
        "mean": bank.mean,
        "converged": np.array([1.0 if bank.converged else 0.0]),
        "n_iter": np.array([float(bank.n_iter)]),
    })


def load_filter_bank(path):
    entries = load_arrays(path)
    return FilterBank(
        filters=_require(entries, "filters", path),
        whitening=_require(entries, "whitening", path),
        mean=_require(entries, "mean", path),
        converged=bool(_require(entries, "converged", path)[0]),
        n_iter=int(_require(entries, "n_iter", path)[0]),
    )


def save_smcae(path, model):
    spec = model.spec
    entries = {
        "spec/channels": np.array(spec.channels, dtype=float),
        "spec/kernel_size": np.array([float(spec.kernel_size)]),
        "spec/loss_weights": np.array(spec.loss_weights, dtype=float),
        "spec/patch_size": np.array([float(spec.patch_size)]),
        "spec/n_patches": np.array([float(spec.n_patches)]),
        "spec/batch_size": np.array([float(spec.batch_size)]),
        "spec/epochs": np.array([float(spec.epochs)]),
        "spec/learning_rate": np.array([spec.learning_rate]),
        "spec/feature_mode": np.array(
            [0.0 if spec.feature_mode == "concat" else 1.0]
        ),
        "n_bands": np.array([float(model.n_bands)]),
        "loss_history": np.array(model.loss_history, dtype=float),
    }
    for i, (w, b) in enumerate(zip(model.enc_weights, model.enc_biases)):
        entries[f"enc_w/{i}"] = w
        entries[f"enc_b/{i}"] = b
    for i, (w, b) in enumerate(zip(model.dec_weights, model.dec_biases)):
        entries[f"dec_w/{i}"] = w
        entries[f"dec_b/{i}"] = b
    save_arrays(path, entries)


def load_smcae(path):
    entries = load_arrays(path)
    channels = tuple(
        int(c) for c in _require(entries, "spec/channels", path)
    )
    spec = SmcaeSpec(
        channels=channels,
        kernel_size=int(_require(entries, "spec/kernel_size", path)[0]),
        loss_weights=tuple(
            float(w) for w in _require(entries, "spec/loss_weights", path)
        ),
        patch_size=int(_require(entries, "spec/patch_size", path)[0]),
        n_patches=int(_require(entries, "spec/n_patches", path)[0]),
        batch_size=int(_require(entries, "spec/batch_size", path)[0]),
        epochs=int(_require(entries, "spec/epochs", path)[0]),
        learning_rate=float(_require(entries, "spec/learning_rate", path)[0]),
        feature_mode=(
            "concat"
            if _require(entries, "spec/feature_mode", path)[0] == 0.0
            else "final"
        ),
    )
    depth = len(channels)
    def seq(prefix):
        return [_require(entries, f"{prefix}/{i}", path) for i in range(depth)]
    return SmcaeModel(
        spec=spec,
        n_bands=int(_require(entries, "n_bands", path)[0]),
        enc_weights=seq("enc_w"),
        enc_biases=seq("enc_b"),
        dec_weights=seq("dec_w"),
        dec_biases=seq("dec_b"),
        loss_history=[float(x) for x in entries.get("loss_history", [])],
    )


def save_mlp(path, model):
    spec = model.spec
    entries = {
        "spec/input_dim": np.array([float(spec.input_dim)]),
        "spec/num_classes": np.array([float(spec.num_classes)]),
        "spec/hidden_layers": np.array([float(spec.hidden_layers)]),
        "spec/units": np.array([float(spec.units)]),
        "spec/weight_decay": np.array([spec.weight_decay]),
        "spec/aux_weight": np.array([spec.aux_weight]),
        "best_epoch": np.array([float(model.best_epoch)]),
        "best_val_loss": np.array([model.best_val_loss]),
        "stop_reason": np.array([_STOP_CODES.get(model.stop_reason, 2.0)]),
        "history": np.array(model.history, dtype=float).reshape(-1, 4),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        entries[f"w/{i}"] = w
        entries[f"b/{i}"] = b
    if model.aux_weights is not None:
        entries["aux_w"] = model.aux_weights
        entries["aux_b"] = model.aux_biases
    save_arrays(path, entries)


def load_mlp(path):
    entries = load_arrays(path)
    spec = MlpSpec(
        input_dim=int(_require(entries, "spec/input_dim", path)[0]),
        num_classes=int(_require(entries, "spec/num_classes", path)[0]),
        hidden_layers=int(_require(entries, "spec/hidden_layers", path)[0]),
        units=int(_require(entries, "spec/units", path)[0]),
        weight_decay=float(_require(entries, "spec/weight_decay", path)[0]),
        aux_weight=float(_require(entries, "spec/aux_weight", path)[0]),
    )
    n_layers = spec.hidden_layers + 1
    weights = [_require(entries, f"w/{i}", path) for i in range(n_layers)]
    biases = [_require(entries, f"b/{i}", path) for i in range(n_layers)]
    history = [
        (int(row[0]), float(row[1]), float(row[2]), float(row[3]))
        for row in entries.get("history", np.zeros((0, 4)))
    ]
    return TrainedMlp(
        spec=spec,
        weights=weights,
        biases=biases,
        aux_weights=entries.get("aux_w"),
        aux_biases=entries.get("aux_b"),
        history=history,
        best_epoch=int(_require(entries, "best_epoch", path)[0]),
        best_val_loss=float(_require(entries, "best_val_loss", path)[0]),
        stop_reason=_STOP_NAMES.get(
            float(_require(entries, "stop_reason", path)[0]), "untrained"
        ),
    )


def history_to_csv(path, history):
    """Training curve as CSV with columns epoch,train_loss,val_loss,lr."""
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for epoch, train_loss, val_loss, lr in history:
            fh.write(f"{epoch},{train_loss:.10g},{val_loss:.10g},{lr:.10g}\n")
