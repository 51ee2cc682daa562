"""Run configuration shared by the pipeline and the command line.

A run is described by one JSON file. Every field has a default, so a config
can be as small as ``{"raster": "scene.hdr", "out": "run"}``. Relative paths
are resolved against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .nn.optim import TrainConfig

__all__ = ["RunConfig", "ConfigError", "default_epochs", "DATA_KINDS", "LABEL_METHODS", "MODELS"]

DATA_KINDS = ("landsat8", "landsat9", "aster")
LABEL_METHODS = ("manual", "pca")
MODELS = ("knn", "svm", "mlp", "cnn")

# (data family, label method) -> epochs for the MLP and CNN.
EPOCHS = {
    ("landsat", "pca"): 50,
    ("landsat", "manual"): 100,
    ("aster", "pca"): 20,
    ("aster", "manual"): 40,
}


class ConfigError(ValueError):
    pass


def default_epochs(data_kind: str, label_method: str) -> int:
    family = "aster" if data_kind == "aster" else "landsat"
    return EPOCHS[(family, label_method)]


@dataclass
class RunConfig:
    """Everything one pipeline run needs.

    ``train.epochs`` left as ``None`` picks the per (data kind, label method)
    default. ``signatures`` maps class id to a per-band +1/-1/0 list, either
    inline or as a path to a JSON file with that mapping.
    """

    raster: Optional[str] = None
    swir_raster: Optional[str] = None
    swir_factor: int = 2
    polygons: Optional[str] = None
    signatures: object = None
    gt_samples: Optional[str] = None
    out: str = "out"
    data_kind: str = "landsat8"
    label_method: str = "manual"
    model: str = "cnn"
    bands: Optional[list] = None
    scaling: str = "minmax01"
    seed: int = 0
    split_ratio: float = 0.7
    threads: int = 1
    tile: int = 256
    n_classes: int = 3
    priority: Optional[list] = None
    palette: Optional[dict] = None
    knn: dict = field(default_factory=lambda: {"k": 5})
    svm: dict = field(default_factory=lambda: {"C": 1.0, "gamma": None, "tol": 1e-3,
                                               "max_iter": None, "max_samples": 20000})
    train: dict = field(default_factory=lambda: {"learning_rate": 0.01, "beta1": 0.9, "beta2": 0.999,
                                                 "epsilon": 1e-8, "epochs": None, "batch_size": 32})
    cnn: dict = field(default_factory=lambda: {"patch_size": None})
    pca: dict = field(default_factory=lambda: {"band_subset": None, "k_sigma": 2.0})
    background: dict = field(default_factory=lambda: {"per_class": None, "guard": 2})
    synth: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False, repr=False)

    def __post_init__(self):
        defaults = RunConfig.__dataclass_fields__
        for name in ("knn", "svm", "train", "cnn", "pca", "background"):
            merged = dict(defaults[name].default_factory())
            given = getattr(self, name) or {}
            unknown = set(given) - set(merged)
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
            merged.update(given)
            setattr(self, name, merged)
        self.validate()

    def validate(self) -> None:
        if self.data_kind not in DATA_KINDS:
            raise ConfigError(f"data_kind must be one of {DATA_KINDS}, got {self.data_kind!r}")
        if self.label_method not in LABEL_METHODS:
            raise ConfigError(f"label_method must be one of {LABEL_METHODS}, got {self.label_method!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.scaling not in ("minmax01", "zscore"):
            raise ConfigError(f"scaling must be minmax01 or zscore, got {self.scaling!r}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.swir_factor < 1 or self.threads < 1 or self.tile < 1:
            raise ConfigError("swir_factor, threads and tile must be positive")
        if self.knn["k"] < 1:
            raise ConfigError("knn.k must be positive")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- loading ---------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d, path.resolve().parent)

    def override(self, **changes) -> "RunConfig":
        """Copy with the non-None ``changes`` applied (CLI flags)."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    # -- derived values --------------------------------------------------

    def path(self, value) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)

    def epochs(self) -> int:
        e = self.train.get("epochs")
        return default_epochs(self.data_kind, self.label_method) if e is None else int(e)

    def train_config(self) -> TrainConfig:
        t = {k: v for k, v in self.train.items() if k != "epochs"}
        return TrainConfig(epochs=self.epochs(), seed=int(self.seed), **t)

    def svm_options(self) -> dict:
        return {k: v for k, v in self.svm.items() if v is not None}

    def signature_table(self) -> dict:
        sig = self.signatures
        if sig is None:
            raise ConfigError("the pca label method needs 'signatures'")
        if isinstance(sig, str):
            sig = json.loads(self.path(sig).read_text())
        return {int(k): list(v) for k, v in sig.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        """SHA-256 over the canonical JSON form (sorted keys, compact separators)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()
