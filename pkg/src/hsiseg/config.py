"""Flat key=value pipeline configuration.

The on-disk format is INI-style sections of plain scalars (no nesting),
so configs diff cleanly and can be produced by any tool.  Sections:

    [data]       cube_header, cube_data, labels_header+labels_data or
                 labels_text, name
    [extractor]  kind = raw | mica | smcae, plus kind-specific knobs
    [classifier] hyperparameter lattice plus training constants
    [ugm]        kind = none | grid_icm | grid_alpha_expansion |
                 dense_meanfield, lattice bounds, optional fixed w1/theta
    [protocol]   n_train, n_val, n_trials, seed
    [output]     dir

Everything has a default except the [data] paths; referenced files must
exist when the config is loaded.
"""

import configparser
import os
from dataclasses import dataclass, field

from .errors import MalformedFileError
from .mlp import MlpSpec

EXTRACTOR_KINDS = ("raw", "mica", "smcae")
UGM_KINDS = ("none", "grid_icm", "grid_alpha_expansion", "dense_meanfield")


@dataclass
class PipelineConfig:
    cube_header: str
    cube_data: str
    labels_header: str = None
    labels_data: str = None
    labels_text: str = None
    name: str = "scene"

    extractor: str = "raw"
    mica_components: int = 32
    mica_window: int = 5
    mica_patches: int = 8000
    mica_activation: str = "abs"
    smcae_channels: tuple = (32, 64, 128)
    smcae_kernel: int = 3
    smcae_loss_weights: tuple = (1.0, 1.0, 1.0)
    smcae_patch: int = 16
    smcae_patches: int = 120
    smcae_batch: int = 8
    smcae_epochs: int = 30
    smcae_learning_rate: float = 1e-3
    smcae_mode: str = "concat"

    hidden_layers: tuple = (2, 3)
    units: tuple = (64, 256, 1024)
    weight_decay: tuple = (0.0, 1e-4, 1e-3)
    batch_size: int = 8
    max_epochs: int = 500
    learning_rate: float = 0.002
    aux_weight: float = 0.0

    ugm: str = "dense_meanfield"
    ugm_iterations: int = 30
    lattice_points: int = 7
    lattice_low: float = 1e-3
    lattice_high: float = 1e3
    fixed_w1: float = None
    fixed_theta: float = None

    n_train: int = 15
    n_val: int = 35
    n_trials: int = 30
    seed: int = 0

    out_dir: str = "runs"

    def __post_init__(self):
        if self.extractor not in EXTRACTOR_KINDS:
            raise ValueError(
                f"extractor {self.extractor!r} not one of {EXTRACTOR_KINDS}"
            )
        if self.ugm not in UGM_KINDS:
            raise ValueError(f"ugm {self.ugm!r} not one of {UGM_KINDS}")
        if len(self.smcae_loss_weights) != len(self.smcae_channels):
            raise ValueError(
                "need one smcae_loss_weights entry per smcae_channels entry"
            )
        if self.labels_text is None and (
            self.labels_header is None or self.labels_data is None
        ):
            raise ValueError(
                "config needs labels_text or labels_header + labels_data"
            )
        if (self.fixed_w1 is None) != (self.fixed_theta is None):
            raise ValueError("fixed_w1 and fixed_theta must be set together")
        if self.n_train < 1 or self.n_val < 0 or self.n_trials < 1:
            raise ValueError("protocol counts out of range")

    def classifier_grid(self, input_dim, num_classes):
        """MlpSpec lattice in fixed nested order (ties prefer earlier cells)."""
        return [
            MlpSpec(input_dim=input_dim, num_classes=num_classes,
                    hidden_layers=h, units=u, weight_decay=w,
                    aux_weight=self.aux_weight)
            for h in self.hidden_layers
            for u in self.units
            for w in self.weight_decay
        ]


def _ints(raw):
    return tuple(int(x) for x in raw.replace(",", " ").split())


def _floats(raw):
    return tuple(float(x) for x in raw.replace(",", " ").split())


def load_config(path, check_files=True):
    """Parse an INI config file into a PipelineConfig."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise MalformedFileError(f"cannot read config file {path}")
    if "data" not in parser:
        raise MalformedFileError(f"{path}: missing [data] section")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(raw):
        if raw is None:
            return None
        return raw if os.path.isabs(raw) else os.path.join(base, raw)

    data = parser["data"]
    ext = parser["extractor"] if "extractor" in parser else {}
    clf = parser["classifier"] if "classifier" in parser else {}
    ugm = parser["ugm"] if "ugm" in parser else {}
    proto = parser["protocol"] if "protocol" in parser else {}
    output = parser["output"] if "output" in parser else {}

    def get(section, key, default, convert=str):
        if key in section:
            return convert(section[key])
        return default

    # The loss-weight default must track however many encoder layers the
    # config picked, not the default channel count.
    smcae_channels = get(ext, "smcae_channels", (32, 64, 128), _ints)

    try:
        config = PipelineConfig(
            cube_header=resolve(data.get("cube_header")),
            cube_data=resolve(data.get("cube_data")),
            labels_header=resolve(data.get("labels_header")),
            labels_data=resolve(data.get("labels_data")),
            labels_text=resolve(data.get("labels_text")),
            name=data.get("name", "scene"),
            extractor=get(ext, "kind", "raw"),
            mica_components=get(ext, "mica_components", 32, int),
            mica_window=get(ext, "mica_window", 5, int),
            mica_patches=get(ext, "mica_patches", 8000, int),
            mica_activation=get(ext, "mica_activation", "abs"),
            smcae_channels=smcae_channels,
            smcae_kernel=get(ext, "smcae_kernel", 3, int),
            smcae_loss_weights=get(
                ext, "smcae_loss_weights", (1.0,) * len(smcae_channels),
                _floats
            ),
            smcae_patch=get(ext, "smcae_patch", 16, int),
            smcae_patches=get(ext, "smcae_patches", 120, int),
            smcae_batch=get(ext, "smcae_batch", 8, int),
            smcae_epochs=get(ext, "smcae_epochs", 30, int),
            smcae_learning_rate=get(ext, "smcae_learning_rate", 1e-3, float),
            smcae_mode=get(ext, "smcae_mode", "concat"),
            hidden_layers=get(clf, "hidden_layers", (2, 3), _ints),
            units=get(clf, "units", (64, 256, 1024), _ints),
            weight_decay=get(clf, "weight_decay", (0.0, 1e-4, 1e-3), _floats),
            batch_size=get(clf, "batch_size", 8, int),
            max_epochs=get(clf, "max_epochs", 500, int),
            learning_rate=get(clf, "learning_rate", 0.002, float),
            aux_weight=get(clf, "aux_weight", 0.0, float),
            ugm=get(ugm, "kind", "dense_meanfield"),
            ugm_iterations=get(ugm, "iterations", 30, int),
            lattice_points=get(ugm, "lattice_points", 7, int),
            lattice_low=get(ugm, "lattice_low", 1e-3, float),
            lattice_high=get(ugm, "lattice_high", 1e3, float),
            fixed_w1=get(ugm, "w1", None, float),
            fixed_theta=get(ugm, "theta_gamma", None, float),
            n_train=get(proto, "n_train", 15, int),
            n_val=get(proto, "n_val", 35, int),
            n_trials=get(proto, "n_trials", 30, int),
            seed=get(proto, "seed", 0, int),
            out_dir=get(output, "dir", os.path.join(base, "runs"), resolve),
        )
    except (ValueError, KeyError) as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc

    if config.cube_header is None or config.cube_data is None:
        raise MalformedFileError(f"{path}: [data] needs cube_header and cube_data")
    if check_files:
        referenced = [config.cube_header, config.cube_data]
        if config.labels_text is not None:
            referenced.append(config.labels_text)
        else:
            referenced += [config.labels_header, config.labels_data]
        for ref in referenced:
            if not os.path.exists(ref):
                raise MalformedFileError(
                    f"{path}: referenced file does not exist: {ref}"
                )
    return config
