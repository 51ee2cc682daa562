"""MLP and CNN architectures for the Landsat (7-band) and ASTER (9-band) variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..nn.layers import SELU, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Rescale, Sequential

__all__ = ["MlpSpec", "CnnSpec", "mlp_for", "cnn_for", "build_network", "spec_from_dict"]

N_OUTPUTS = 3


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected SELU network ending in a softmax over ``n_outputs`` classes."""

    n_inputs: int
    hidden: tuple = (5,)
    n_outputs: int = N_OUTPUTS
    kind: str = field(default="mlp", init=False)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_inputs < 1 or any(h < 1 for h in self.hidden) or self.n_outputs < 2:
            raise ValueError("layer widths must be positive and output width at least 2")


@dataclass(frozen=True)
class CnnSpec:
    """conv(32) -> dropout -> conv(48) -> dropout -> flatten -> dense 64 -> dropout -> dense out.

    Both convolutions are valid (unpadded) with ReLU, so a patch must be at
    least ``2 * (kernel - 1) + 1`` pixels wide.
    """

    n_bands: int
    kernel: int = 7
    patch_size: int = 15
    filters: tuple = (32, 48)
    conv_dropout: float = 0.25
    dense_units: int = 64
    dense_dropout: float = 0.5
    n_outputs: int = N_OUTPUTS
    pool: bool = False
    init: str = "he_normal"  # for the ReLU layers
    center_input: bool = True
    kind: str = field(default="cnn", init=False)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if self.kernel % 2 == 0 or self.patch_size % 2 == 0:
            raise ValueError("kernel and patch sizes must be odd")
        if self.patch_size < 2 * (self.kernel - 1) + 1:
            raise ValueError(
                f"patch size {self.patch_size} too small for two valid {self.kernel}x{self.kernel} convolutions"
            )
        if len(self.filters) != 2:
            raise ValueError("the CNN has exactly two convolutional layers")

    def feature_side(self) -> int:
        side = self.patch_size - (self.kernel - 1)
        if self.pool:
            side //= 2
        side -= self.kernel - 1
        if side < 1:
            raise ValueError("patch too small for this architecture")
        return side


def mlp_for(data_kind: str, n_inputs: int | None = None) -> MlpSpec:
    """Landsat: one hidden layer of 5; ASTER: hidden layers of 8 and 6."""
    if data_kind == "aster":
        return MlpSpec(9 if n_inputs is None else n_inputs, (8, 6))
    return MlpSpec(7 if n_inputs is None else n_inputs, (5,))


def cnn_for(data_kind: str, n_bands: int | None = None, patch_size: int | None = None) -> CnnSpec:
    """Kernel 7 with 15-pixel patches for Landsat, kernel 5 with 11-pixel patches for ASTER."""
    if data_kind == "aster":
        return CnnSpec(9 if n_bands is None else n_bands, 5, 11 if patch_size is None else patch_size)
    return CnnSpec(7 if n_bands is None else n_bands, 7, 15 if patch_size is None else patch_size)


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "mlp":
        return MlpSpec(**d)
    if kind == "cnn":
        return CnnSpec(**d)
    raise ValueError(f"unknown network kind {kind!r}")


def spec_to_dict(spec) -> dict:
    d = asdict(spec)
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
    return d


def build_network(spec, seed: int = 0) -> Sequential:
    """Instantiate layers with LeCun-normal (SELU), ``spec.init`` (He-normal by default, ReLU)
    and Glorot-uniform (softmax) weights."""
    rng = np.random.default_rng(seed)
    layers = []
    if isinstance(spec, MlpSpec):
        width = spec.n_inputs
        for h in spec.hidden:
            layers += [Dense(width, h, "lecun_normal", rng), SELU()]
            width = h
        layers.append(Dense(width, spec.n_outputs, "glorot_uniform", rng))
        return Sequential(layers)
    if isinstance(spec, CnnSpec):
        f1, f2 = spec.filters
        if spec.center_input:
            # [0, 1] inputs -> [-1, 1]; all-positive inputs let early Adam steps
            # at lr 0.01 push every conv1 filter negative and kill its ReLU
            layers.append(Rescale(2.0, -1.0))
        layers += [Conv2D(spec.n_bands, f1, spec.kernel, spec.init, rng), ReLU(), Dropout(spec.conv_dropout)]
        if spec.pool:
            layers.append(MaxPool2D(2))
        layers += [Conv2D(f1, f2, spec.kernel, spec.init, rng), ReLU(), Dropout(spec.conv_dropout)]
        side = spec.feature_side()
        layers += [
            Flatten(),
            Dense(side * side * f2, spec.dense_units, spec.init, rng),
            ReLU(),
            Dropout(spec.dense_dropout),
            Dense(spec.dense_units, spec.n_outputs, "glorot_uniform", rng),
        ]
        return Sequential(layers)
    raise TypeError(f"unsupported spec {type(spec).__name__}")
