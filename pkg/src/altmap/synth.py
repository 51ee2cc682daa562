"""Synthetic multispectral scenes with planted alteration zones.

Zones are disks or polygons given in pixel coordinates (pixel ``(c, r)`` has
its centre at ``(c + 0.5, r + 0.5)``). The truth map uses the crisp zone
geometry; pixel spectra blend linearly across ``mixing_width`` pixels
straddling each zone border, then receive Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .labelgen import points_in_rings
from .raster_io import ClassMap, PolygonSet, RasterStack, make_polygon

__all__ = [
    "Zone",
    "SceneSpec",
    "generate_scene",
    "scene_polygons",
    "default_scene_spec",
    "LANDSAT_MEANS",
    "ASTER_MEANS",
    "DEFAULT_SIGNATURES",
]

# Reflectance means: 0 background, 1 argillic, 2 iron oxide.
# Argillic: bright SWIR1 (band 6) and Al-OH absorption in SWIR2 (band 7).
# Iron oxide: strong red (band 4), blue absorption (band 2).
LANDSAT_MEANS = {
    0: [0.08, 0.10, 0.14, 0.18, 0.26, 0.30, 0.24],
    1: [0.09, 0.11, 0.15, 0.19, 0.28, 0.38, 0.18],
    2: [0.07, 0.08, 0.14, 0.26, 0.22, 0.31, 0.25],
}
# 0 background, 1 argillic (band 4 high, band 6 absorption), 2 propylitic (band 8 absorption).
ASTER_MEANS = {
    0: [0.12, 0.15, 0.22, 0.30, 0.26, 0.25, 0.24, 0.23, 0.21],
    1: [0.13, 0.16, 0.23, 0.38, 0.27, 0.18, 0.24, 0.24, 0.22],
    2: [0.11, 0.14, 0.25, 0.29, 0.25, 0.25, 0.30, 0.15, 0.22],
}
DEFAULT_SIGNATURES = {
    "landsat": {1: [0, 0, 0, 0, 0, 1, -1], 2: [0, -1, 0, 1, 0, 0, 0]},
    "aster": {1: [0, 0, 0, 1, 0, -1, 0, 0, 0], 2: [0, 0, 0, 0, 0, 0, 1, -1, 0]},
}


@dataclass(frozen=True)
class Zone:
    cls: int
    shape: str  # "disk" or "polygon"
    params: dict

    def __post_init__(self):
        if self.cls < 1:
            raise ValueError("zone class must be >= 1")
        if self.shape == "disk":
            if float(self.params["radius"]) <= 0:
                raise ValueError("disk radius must be positive")
        elif self.shape == "polygon":
            if len(self.params["vertices"]) < 3:
                raise ValueError("polygon zone needs at least 3 vertices")
        else:
            raise ValueError(f"unknown zone shape {self.shape!r}")

    def ring(self, n_vertices: int = 64) -> np.ndarray:
        """Closed outline in pixel coordinates."""
        if self.shape == "disk":
            cx, cy = self.params["center"]
            r = float(self.params["radius"])
            t = 2 * np.pi * np.arange(n_vertices) / n_vertices
            pts = np.c_[cx + r * np.cos(t), cy + r * np.sin(t)]
        else:
            pts = np.asarray(self.params["vertices"], dtype=np.float64)
        return np.vstack([pts, pts[:1]])

    def signed_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Distance to the zone border, positive inside."""
        if self.shape == "disk":
            cx, cy = self.params["center"]
            return float(self.params["radius"]) - np.hypot(x - cx, y - cy)
        ring = self.ring()
        dist = np.full(x.shape, np.inf)
        for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
            dx, dy = x1 - x0, y1 - y0
            t = np.clip(((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
            dist = np.minimum(dist, np.hypot(x - (x0 + t * dx), y - (y0 + t * dy)))
        inside = points_in_rings(x, y, [ring])
        return np.where(inside, dist, -dist)


@dataclass
class SceneSpec:
    width: int
    height: int
    class_means: dict
    zones: list
    noise_std: float = 0.01
    mixing_width: float = 0.0
    seed: int = 0
    class_noise_scale: dict = field(default_factory=dict)
    smooth_radius: int = 0
    transform: tuple = (500000.0, 30.0, 0.0, 6500000.0, 0.0, -30.0)
    crs: str = "EPSG:32754"

    def __post_init__(self):
        self.class_means = {int(k): [float(v) for v in m] for k, m in self.class_means.items()}
        self.zones = [z if isinstance(z, Zone) else Zone(int(z["cls"]), z["shape"], z["params"]) for z in self.zones]
        self.class_noise_scale = {int(k): float(v) for k, v in self.class_noise_scale.items()}
        if 0 not in self.class_means:
            raise ValueError("class_means needs a background (class 0) entry")
        lengths = {len(m) for m in self.class_means.values()}
        if len(lengths) != 1:
            raise ValueError("all class means need the same number of bands")
        means = list(self.class_means.values())
        for i in range(len(means)):
            for j in range(i + 1, len(means)):
                if np.allclose(means[i], means[j]):
                    raise ValueError("class signatures must be pairwise distinct")
        if self.noise_std < 0 or self.mixing_width < 0:
            raise ValueError("noise and mixing width must be non-negative")
        for z in self.zones:
            if z.cls not in self.class_means:
                raise ValueError(f"zone class {z.cls} has no mean spectrum")
            ring = z.ring()
            if (ring[:, 0].min() < 0 or ring[:, 1].min() < 0
                    or ring[:, 0].max() > self.width or ring[:, 1].max() > self.height):
                raise ValueError(f"zone {z} extends beyond the scene")

    @property
    def bands(self) -> int:
        return len(self.class_means[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_means"] = {str(k): v for k, v in self.class_means.items()}
        d["class_noise_scale"] = {str(k): v for k, v in self.class_noise_scale.items()}
        d["transform"] = list(self.transform)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "transform" in d:
            d["transform"] = tuple(d["transform"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _box_smooth(noise: np.ndarray, radius: int) -> np.ndarray:
    """Box-filter each band (reflect edges) and restore unit variance."""
    size = 2 * radius + 1
    padded = np.pad(noise, ((0, 0), (radius, radius), (radius, radius)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, (size, size), axis=(1, 2))
    return win.sum(axis=(-1, -2)) / size


def generate_scene(spec: SceneSpec) -> tuple[RasterStack, ClassMap]:
    """Render the scene and its truth map.

    Raises:
        ValueError: zones of different classes overlap.
    """
    cols = np.arange(spec.width) + 0.5
    rows = np.arange(spec.height) + 0.5
    x, y = np.meshgrid(cols, rows)
    truth = np.zeros((spec.height, spec.width), dtype=np.uint8)
    weight = {c: np.zeros(x.shape) for c in spec.class_means if c != 0}
    for zone in spec.zones:
        sd = zone.signed_distance(x, y)
        inside = sd > 0
        clash = inside & (truth != 0) & (truth != zone.cls)
        if clash.any():
            raise ValueError(f"zone of class {zone.cls} overlaps a zone of another class")
        truth[inside] = zone.cls
        if spec.mixing_width > 0:
            w = np.clip(0.5 + sd / spec.mixing_width, 0.0, 1.0)
        else:
            w = inside.astype(np.float64)
        weight[zone.cls] = np.maximum(weight[zone.cls], w)

    total = sum(weight.values()) if weight else np.zeros(x.shape)
    norm = np.maximum(total, 1.0)
    image = np.zeros((spec.bands,) + x.shape)
    background = np.asarray(spec.class_means[0])[:, None, None]
    image += background * (1.0 - total / norm)
    for c, w in weight.items():
        image += np.asarray(spec.class_means[c])[:, None, None] * (w / norm)

    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.standard_normal(image.shape)
        if spec.smooth_radius > 0:
            noise = _box_smooth(noise, spec.smooth_radius)
        scale = np.ones(x.shape)
        for c, s in spec.class_noise_scale.items():
            scale[truth == c] = s
        image += noise * spec.noise_std * scale
    stack = RasterStack(image.astype(np.float32), spec.transform, spec.crs)
    return stack, ClassMap(truth, spec.transform, spec.crs)


def scene_polygons(spec: SceneSpec, n_vertices: int = 64) -> PolygonSet:
    """Zone outlines as map-coordinate polygons (disks become regular polygons)."""
    ox, pw, _, oy, _, ph = spec.transform
    polys = []
    for zone in spec.zones:
        ring = zone.ring(n_vertices)
        polys.append(make_polygon(zone.cls, np.c_[ox + ring[:, 0] * pw, oy + ring[:, 1] * ph]))
    return PolygonSet(tuple(polys))


def default_scene_spec(
    data_kind: str = "landsat8",
    size: int = 256,
    noise_std: Optional[float] = None,
    mixing_width: float = 2.0,
    seed: int = 0,
    smooth_radius: int = 0,
) -> SceneSpec:
    """Two alteration classes plus background on a ``size`` x ``size`` grid.

    Zone layout is defined on a 256-pixel canvas and scaled to ``size``. The
    default noise keeps every pair of class means at least 6 noise standard
    deviations apart.
    """
    means = ASTER_MEANS if data_kind == "aster" else LANDSAT_MEANS
    if noise_std is None:
        noise_std = 0.012
    f = size / 256.0
    zones = [
        Zone(1, "disk", {"center": [70 * f, 70 * f], "radius": 28 * f}),
        Zone(1, "disk", {"center": [185 * f, 190 * f], "radius": 22 * f}),
        Zone(2, "disk", {"center": [190 * f, 70 * f], "radius": 26 * f}),
        Zone(2, "polygon", {"vertices": [[40 * f, 160 * f], [100 * f, 150 * f],
                                         [110 * f, 205 * f], [50 * f, 215 * f]]}),
    ]
    pixel = 15.0 if data_kind == "aster" else 30.0
    return SceneSpec(
        width=size,
        height=size,
        class_means=means,
        zones=zones,
        noise_std=noise_std,
        mixing_width=mixing_width,
        seed=seed,
        smooth_radius=smooth_radius,
        transform=(500000.0, pixel, 0.0, 6500000.0, 0.0, -pixel),
    )
