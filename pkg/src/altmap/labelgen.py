"""Training-label construction: polygon rasterization and selective PCA.

Two routes produce class masks over a scaled stack:

* manual: analyst polygons are burned into a class map (pixel-centre,
  even-odd rule);
* pca: a principal component whose loadings match a mineral's
  reflection/absorption pattern is thresholded into a mask.

Masks become a :class:`SampleTable` via :func:`build_dataset`, which is then
split into stratified train/test tables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .raster_io import ClassMap, PolygonSet, RasterStack, SampleTable

__all__ = [
    "PcaResult",
    "SpectralSignature",
    "DatasetSplit",
    "points_in_rings",
    "rasterize_polygons",
    "pca",
    "pca_matrix",
    "select_component",
    "component_scores",
    "threshold_component",
    "dilate",
    "build_dataset",
    "split_dataset",
]

log = logging.getLogger(__name__)


def points_in_rings(x: np.ndarray, y: np.ndarray, rings) -> np.ndarray:
    """Even-odd membership of points ``(x, y)`` in the union of ``rings``.

    Each edge is evaluated with its endpoints in a canonical order so the
    result does not depend on ring orientation, even for points lying on
    an edge.
    """
    inside = np.zeros(np.shape(x), dtype=bool)
    for ring in rings:
        ring = np.asarray(ring, dtype=np.float64)
        for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
            if y0 == y1:
                continue
            if (y0, x0) > (y1, x1):
                x0, y0, x1, y1 = x1, y1, x0, y0
            crosses = (y0 <= y) & (y < y1)
            if not crosses.any():
                continue
            x_cross = x0 + (y - y0) * ((x1 - x0) / (y1 - y0))
            inside ^= crosses & (x < x_cross)
    return inside


def rasterize_polygons(
    polys: PolygonSet,
    grid: RasterStack,
    priority: Optional[Sequence[int]] = None,
) -> ClassMap:
    """Label each pixel whose centre falls inside a polygon.

    Args:
        polys: polygons in the grid's map units.
        grid: supplies the georeference and dimensions.
        priority: class order from highest to lowest priority, used where
            polygons of different classes overlap. Defaults to the order in
            which classes first appear in ``polys``.
    """
    x, y = grid.pixel_centers()
    labels = np.zeros((grid.height, grid.width), dtype=np.uint8)
    order = list(priority) if priority is not None else polys.labels()
    order += [c for c in polys.labels() if c not in order]
    rank = {c: i for i, c in enumerate(order)}
    best = np.full(labels.shape, len(order), dtype=np.int64)
    for poly in polys:
        inside = points_in_rings(x, y, poly.rings)
        if not inside.any():
            log.warning("polygon of class %d covers no pixel centre of the grid", poly.label)
            continue
        better = inside & (rank[poly.label] < best)
        labels[better] = poly.label
        best[better] = rank[poly.label]
    return ClassMap.like(grid, labels)


@dataclass(frozen=True)
class PcaResult:
    """Principal components of a band subset.

    ``loadings[k]`` is the unit eigenvector for ``eigenvalues[k]`` (descending).
    ``scores`` has shape ``(components, height, width)`` with NaN at nodata.
    """

    band_subset: tuple
    eigenvalues: np.ndarray
    loadings: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    scores: Optional[np.ndarray] = None

    @property
    def n_components(self) -> int:
        return len(self.eigenvalues)


def _orient(vectors: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each row positive; first one wins ties
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_matrix(samples: np.ndarray):
    """Eigendecomposition of the covariance of ``samples`` (n, bands).

    Returns ``(eigenvalues, loadings, mean, covariance)`` with eigenvalues
    descending and one eigenvector per row of ``loadings``. The covariance is
    the population (1/n) estimate.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape
    if d < 2:
        raise ValueError("PCA needs at least 2 bands")
    if n < d + 1:
        raise ValueError(f"PCA on {d} bands needs at least {d + 1} valid pixels, got {n}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    if not np.any(np.diag(cov) > 0):
        raise ValueError("all bands have zero variance")
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    loadings = _orient(vectors[:, order].T)
    return values, loadings, mean, cov


def pca(stack: RasterStack, band_subset: Optional[Sequence[int]] = None) -> PcaResult:
    """Covariance PCA over the non-nodata pixels of a band subset."""
    subset = tuple(range(stack.bands)) if band_subset is None else tuple(int(b) for b in band_subset)
    if len(subset) < 2:
        raise ValueError("PCA needs at least 2 bands")
    valid = stack.valid_mask()
    pixels = stack.data[list(subset)][:, valid].T
    values, loadings, mean, cov = pca_matrix(pixels)
    scores = np.full((len(subset), stack.height, stack.width), np.nan)
    scores[:, valid] = (loadings @ (pixels.astype(np.float64) - mean).T)
    return PcaResult(subset, values, loadings, mean, cov, scores)


@dataclass(frozen=True)
class SpectralSignature:
    """Expected behaviour per band: +1 reflection, -1 absorption, 0 ignored."""

    expectation: tuple

    def __post_init__(self):
        values = tuple(int(v) for v in self.expectation)
        if any(v not in (-1, 0, 1) for v in values):
            raise ValueError("signature entries must be -1, 0 or +1")
        if not any(values):
            raise ValueError("signature is all zero")
        if 1 not in values or -1 not in values:
            raise ValueError("signature needs at least one reflection (+1) and one absorption (-1) band")
        object.__setattr__(self, "expectation", values)

    def __len__(self):
        return len(self.expectation)


def select_component(result: PcaResult, sig: SpectralSignature) -> tuple[int, int, float]:
    """Pick the component and polarity whose loadings best match ``sig``.

    The score of component ``k`` at polarity ``s`` is ``s * sum(sig * loadings[k])``.

    Returns:
        ``(component, polarity, score)``; ties go to the lower component, then
        to polarity +1.
    """
    expectation = np.asarray(sig.expectation, dtype=np.float64)
    if len(expectation) != result.loadings.shape[1]:
        raise ValueError(
            f"signature has {len(expectation)} bands, PCA subset has {result.loadings.shape[1]}"
        )
    if not expectation.any():
        raise ValueError("signature is all zero")
    raw = result.loadings @ expectation
    best = None
    for k, value in enumerate(raw):
        for polarity in (1, -1):
            score = polarity * value
            if best is None or score > best[2]:
                best = (k, polarity, float(score))
    return best


def component_scores(result: PcaResult, index: int, polarity: int) -> np.ndarray:
    if not 0 <= index < result.n_components:
        raise IndexError(f"component {index} out of range")
    if polarity not in (1, -1):
        raise ValueError("polarity must be +1 or -1")
    return polarity * result.scores[index]


def threshold_component(result: PcaResult, index: int, polarity: int, k: float = 2.0) -> np.ndarray:
    """Mask pixels whose polarity-adjusted score exceeds ``mean + k * std``.

    Statistics are taken over valid pixels; nodata pixels are never masked.
    """
    scores = component_scores(result, index, polarity)
    valid = ~np.isnan(scores)
    values = scores[valid]
    mask = np.zeros(scores.shape, dtype=bool)
    if values.size == 0 or values.max() == values.min():
        # a flat image has no outliers; avoids rounding in the mean deciding the mask
        return mask
    cutoff = values.mean() + k * values.std()
    mask[valid] = values > cutoff
    return mask


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a ``(2r+1)`` square structuring element."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(int(radius)):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out


def build_dataset(
    stack: RasterStack,
    class_masks: Sequence[tuple[int, np.ndarray]],
    background_per_class: Optional[int] = None,
    seed: int = 0,
    guard: int = 2,
    provenance: str = "",
    exclude: Optional[np.ndarray] = None,
) -> SampleTable:
    """One sample per masked pixel plus a sampled background class 0.

    Background pixels are drawn uniformly without replacement from valid pixels
    lying outside every mask (and outside ``exclude``) dilated by ``guard``
    pixels. Their count defaults to the mean foreground class count. Rows are
    ordered by class, then row-major pixel position.

    Raises:
        ValueError: masks overlap, or there are too few background pixels.
    """
    valid = stack.valid_mask()
    shape = (stack.height, stack.width)
    union = np.zeros(shape, dtype=bool)
    per_class: dict[int, np.ndarray] = {}
    for label, mask in class_masks:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"mask for class {label} has shape {mask.shape}, expected {shape}")
        if label < 1:
            raise ValueError("class 0 is reserved for background")
        if (mask & union).any():
            raise ValueError(f"mask for class {label} overlaps another class; resolve priority first")
        union |= mask
        per_class[int(label)] = per_class.get(int(label), np.zeros(shape, dtype=bool)) | (mask & valid)

    fg_counts = [int(m.sum()) for m in per_class.values()]
    if background_per_class is None:
        background_per_class = int(round(np.mean(fg_counts))) if fg_counts else 0
    blocked = union if exclude is None else union | np.asarray(exclude, dtype=bool)
    eligible = np.flatnonzero(valid & ~dilate(blocked, guard))
    if background_per_class > len(eligible):
        raise ValueError(
            f"need {background_per_class} background pixels, only {len(eligible)} eligible"
        )
    rng = np.random.default_rng(seed)
    background = np.sort(rng.choice(eligible, size=background_per_class, replace=False))

    flat_index = [background]
    classes = [np.zeros(len(background), dtype=np.int64)]
    for label in sorted(per_class):
        idx = np.flatnonzero(per_class[label])
        flat_index.append(idx)
        classes.append(np.full(len(idx), label, dtype=np.int64))
    flat = np.concatenate(flat_index)
    rows, cols = np.divmod(flat, stack.width)
    features = stack.data[:, rows, cols].T
    table = SampleTable(cols, rows, np.concatenate(classes), features, provenance=provenance)
    table.meta["counts"] = table.class_counts()
    return table


@dataclass
class DatasetSplit:
    train: SampleTable
    test: SampleTable
    seed: int
    ratio: float


def split_dataset(table: SampleTable, ratio: float = 0.7, seed: int = 0) -> DatasetSplit:
    """Stratified, seeded train/test split.

    Each class contributes ``round(ratio * n_c)`` training samples (clamped so
    both sides keep at least one).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(table.classes):
        idx = np.flatnonzero(table.classes == label)
        if len(idx) < 2:
            raise ValueError(f"class {label} has {len(idx)} sample(s); need at least 2 to split")
        idx = rng.permutation(idx)
        n_train = int(np.floor(ratio * len(idx) + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train = table.subset(np.sort(np.concatenate(train_idx)))
    test = table.subset(np.sort(np.concatenate(test_idx)))
    return DatasetSplit(train, test, seed, ratio)
