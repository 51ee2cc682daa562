"""Band selection, rescaling, resolution alignment and patch extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster_io import RasterStack

__all__ = [
    "ScalingParams",
    "Patch",
    "PatchSource",
    "select_bands",
    "concat_bands",
    "fit_scaling",
    "apply_scaling",
    "resample_nearest",
    "extract_patch",
]

SCALING_MODES = ("minmax01", "zscore")


def select_bands(stack: RasterStack, indices: Sequence[int]) -> RasterStack:
    """Return a new stack holding ``indices`` (0-based) in the requested order."""
    indices = [int(i) for i in indices]
    if not indices:
        raise ValueError("no bands selected")
    if len(set(indices)) != len(indices):
        raise ValueError(f"duplicate band index in {indices}")
    bad = [i for i in indices if not 0 <= i < stack.bands]
    if bad:
        raise IndexError(f"band indices {bad} out of range for {stack.bands} bands")
    return stack.with_data(stack.data[indices])


def concat_bands(*stacks: RasterStack) -> RasterStack:
    """Stack aligned rasters along the band axis (e.g. VNIR + resampled SWIR)."""
    first = stacks[0]
    for other in stacks[1:]:
        if (other.width, other.height) != (first.width, first.height):
            raise ValueError("stacks must share a grid to be combined")
        if not np.allclose(other.transform, first.transform):
            raise ValueError("stacks must share a geotransform to be combined")
    data = np.concatenate([s.data for s in stacks], axis=0)
    return first.with_data(data)


@dataclass(frozen=True)
class ScalingParams:
    """Per-band statistics fitted on training imagery.

    For ``minmax01`` ``a`` and ``b`` are the band minimum and maximum; for
    ``zscore`` they are the mean and population standard deviation.
    """

    mode: str
    a: tuple
    b: tuple

    def __post_init__(self):
        if self.mode not in SCALING_MODES:
            raise ValueError(f"unknown scaling mode {self.mode!r}")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.a) != len(self.b):
            raise ValueError("scaling statistics have different lengths")
        if self.mode == "minmax01" and any(hi < lo for lo, hi in zip(self.a, self.b)):
            raise ValueError("band max below band min")
        if self.mode == "zscore" and any(sd < 0 for sd in self.b):
            raise ValueError("negative standard deviation")

    @property
    def bands(self) -> int:
        return len(self.a)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "a": list(self.a), "b": list(self.b)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(d["mode"], d["a"], d["b"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ScalingParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Scale a ``(..., bands)`` float array; works on sample features and pixels alike."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.bands:
            raise ValueError(f"expected {self.bands} bands, got {values.shape[-1]}")
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        if self.mode == "minmax01":
            span = b - a
            safe = np.where(span > 0, span, 1.0)
            out = np.clip((values - a) / safe, 0.0, 1.0)
            return np.where(span > 0, out, 0.0)
        safe = np.where(b > 0, b, 1.0)
        return np.where(b > 0, (values - a) / safe, 0.0)


def fit_scaling(stack: RasterStack, mode: str = "minmax01") -> ScalingParams:
    """Fit per-band statistics over the non-nodata pixels of ``stack``."""
    if mode not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {mode!r}")
    valid = stack.valid_mask()
    if not valid.any():
        raise ValueError("every pixel is nodata; cannot fit scaling")
    values = stack.data[:, valid].astype(np.float64)
    if mode == "minmax01":
        return ScalingParams(mode, values.min(axis=1), values.max(axis=1))
    return ScalingParams(mode, values.mean(axis=1), values.std(axis=1))


def apply_scaling(stack: RasterStack, params: ScalingParams) -> RasterStack:
    """Rescale ``stack`` with previously fitted ``params``; nodata pixels pass through."""
    if stack.bands != params.bands:
        raise ValueError(f"stack has {stack.bands} bands, scaling expects {params.bands}")
    pixels = np.moveaxis(stack.data, 0, -1)
    scaled = np.moveaxis(params.transform(pixels), -1, 0).astype(np.float32)
    valid = stack.valid_mask()
    scaled = np.where(valid[None], scaled, stack.data)
    return stack.with_data(scaled)


def resample_nearest(stack: RasterStack, factor: int) -> RasterStack:
    """Upsample by an integer ``factor`` with nearest-neighbour copying."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    data = np.repeat(np.repeat(stack.data, factor, axis=1), factor, axis=2)
    ox, pw, rx, oy, ry, ph = stack.transform
    return stack.with_data(data, (ox, pw / factor, rx, oy, ry, ph / factor))


@dataclass(frozen=True)
class Patch:
    center: tuple
    size: int
    values: np.ndarray  # (size, size, bands)


def _check_size(size: int) -> int:
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"patch size must be a positive odd number, got {size}")
    return size


class PatchSource:
    """Cut square patches out of a raster with reflect-101 padding at the edges.

    Pads the image once so that batches of patches can be gathered cheaply.
    Nodata pixels are filled with ``fill`` before padding.
    """

    def __init__(self, stack: RasterStack, size: int, fill: float = 0.0):
        self.size = _check_size(size)
        self.radius = self.size // 2
        self.width, self.height = stack.width, stack.height
        image = np.moveaxis(stack.data, 0, -1).astype(np.float64)
        valid = stack.valid_mask()
        if not valid.all():
            image = np.where(valid[..., None], image, fill)
        r = self.radius
        self.padded = np.pad(image, ((r, r), (r, r), (0, 0)), mode="reflect") if r else image
        # (height, width, bands, size, size) view
        self._windows = np.lib.stride_tricks.sliding_window_view(
            self.padded, (self.size, self.size), axis=(0, 1)
        )

    def gather(self, cols, rows) -> np.ndarray:
        """Patches centred on ``(cols[i], rows[i])`` as an ``(n, size, size, bands)`` array."""
        cols = np.asarray(cols, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.int64)
        if len(cols) and (
            cols.min() < 0 or rows.min() < 0 or cols.max() >= self.width or rows.max() >= self.height
        ):
            raise IndexError("patch centre outside the raster")
        return np.ascontiguousarray(self._windows[rows, cols].transpose(0, 2, 3, 1))


def extract_patch(stack: RasterStack, col: int, row: int, size: int) -> Patch:
    source = PatchSource(stack, size)
    values = source.gather([col], [row])[0]
    return Patch((int(col), int(row)), source.size, values)
