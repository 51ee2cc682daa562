"""Whole-raster prediction, monolithic or tile by tile."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..preprocess import PatchSource, apply_scaling
from ..raster_io import ClassMap, RasterStack
from .model import TrainedModel

__all__ = ["Prediction", "predict_map", "predict_map_tiled"]


@dataclass
class Prediction:
    class_map: ClassMap
    probabilities: RasterStack  # one band per class; zeros at nodata pixels


def predict_map(model: TrainedModel, stack: RasterStack, scale: bool = True, chunk: int = 4096) -> Prediction:
    """Classify every valid pixel of ``stack``.

    The model's stored scaling parameters are applied first unless ``scale`` is
    false (pass ``scale=False`` for a stack that is already scaled). Nodata
    pixels get class 0 and all-zero probabilities.
    """
    if stack.bands != model.n_bands:
        raise ValueError(f"stack has {stack.bands} bands, model expects {model.n_bands}")
    scaled = apply_scaling(stack, model.scaling) if (scale and model.scaling is not None) else stack
    valid = stack.valid_mask()
    rows, cols = np.nonzero(valid)
    labels = np.zeros((stack.height, stack.width), dtype=np.uint8)
    probs = np.zeros((model.n_classes, stack.height, stack.width), dtype=np.float32)
    source = PatchSource(scaled, model.patch_size) if model.kind == "cnn" else None
    for start in range(0, len(rows), chunk):
        r = rows[start : start + chunk]
        c = cols[start : start + chunk]
        if source is not None:
            inputs = source.gather(c, r)
        else:
            inputs = scaled.data[:, r, c].T.astype(np.float64)
        pred, p = model.predict_inputs(inputs)
        labels[r, c] = pred
        probs[:, r, c] = p.T
    return Prediction(ClassMap.like(stack, labels), RasterStack(probs, stack.transform, stack.crs))


def _window(stack: RasterStack, r0, r1, c0, c1) -> RasterStack:
    ox, pw, rx, oy, ry, ph = stack.transform
    transform = (ox + c0 * pw, pw, rx, oy + r0 * ph, ry, ph)
    return RasterStack(stack.data[:, r0:r1, c0:c1], transform, stack.crs, stack.nodata)


def predict_map_tiled(
    model: TrainedModel,
    stack: RasterStack,
    tile: int = 64,
    threads: int = 1,
    scale: bool = True,
) -> Prediction:
    """Same result as :func:`predict_map`, computed over ``tile``-sized blocks.

    Each block is extended by a halo of the patch radius so CNN patches see
    the same neighbourhood they would in a monolithic run.
    """
    halo = model.patch_size // 2
    labels = np.zeros((stack.height, stack.width), dtype=np.uint8)
    probs = np.zeros((model.n_classes, stack.height, stack.width), dtype=np.float32)
    jobs = [
        (r0, min(r0 + tile, stack.height), c0, min(c0 + tile, stack.width))
        for r0 in range(0, stack.height, tile)
        for c0 in range(0, stack.width, tile)
    ]

    def run(job):
        r0, r1, c0, c1 = job
        hr0, hr1 = max(r0 - halo, 0), min(r1 + halo, stack.height)
        hc0, hc1 = max(c0 - halo, 0), min(c1 + halo, stack.width)
        pred = predict_map(model, _window(stack, hr0, hr1, hc0, hc1), scale=scale)
        return job, pred, (r0 - hr0, c0 - hc0)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for (r0, r1, c0, c1), pred, (dr, dc) in pool.map(run, jobs):
            labels[r0:r1, c0:c1] = pred.class_map.labels[dr : dr + r1 - r0, dc : dc + c1 - c0]
            probs[:, r0:r1, c0:c1] = pred.probabilities.data[:, dr : dr + r1 - r0, dc : dc + c1 - c0]
    return Prediction(ClassMap.like(stack, labels), RasterStack(probs, stack.transform, stack.crs))
