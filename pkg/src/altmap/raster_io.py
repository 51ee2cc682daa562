"""Readers and writers for band stacks, polygon labels, sample tables and class maps.

The native raster format is a pair of files: a ``.hdr`` text header made of
``key: value`` lines and a ``.bin`` payload holding little-endian float32
values in band-sequential order. It is trivially bit-exact, which the rest of
the pipeline relies on for reproducible runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image

__all__ = [
    "FormatError",
    "RasterStack",
    "Polygon",
    "PolygonSet",
    "ClassMap",
    "SampleTable",
    "read_stack",
    "write_stack",
    "read_polygons",
    "write_polygons",
    "read_class_map",
    "write_class_map",
    "read_samples",
    "write_samples",
    "render_class_map",
    "DEFAULT_PALETTE",
    "default_palette",
]

# 0 background, 1 argillic, 2 iron oxide (Landsat) or propylitic (ASTER).
DEFAULT_PALETTE = {0: (0, 0, 0), 1: (230, 57, 70), 2: (255, 183, 3)}
PROPYLITIC_RGB = (42, 157, 143)


def default_palette(data_kind: str = "landsat8") -> dict[int, tuple[int, int, int]]:
    """Return the default class palette for a data kind."""
    palette = dict(DEFAULT_PALETTE)
    if data_kind == "aster":
        palette[2] = PROPYLITIC_RGB
    return palette


class FormatError(ValueError):
    """Raised when a file on disk does not follow the documented layout."""


def _header_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".bin":
        path = path.with_suffix(".hdr")
    elif path.suffix != ".hdr":
        path = path.with_name(path.name + ".hdr")
    return path, path.with_suffix(".bin")


def _same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape != b.shape or a.dtype != b.dtype:
        return False
    return a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class RasterStack:
    """A georeferenced multiband float32 grid.

    ``data`` has shape ``(bands, height, width)``. ``transform`` holds the six
    affine coefficients ``(origin_x, pixel_width, 0, origin_y, 0, -pixel_height)``.
    The array is copied and frozen on construction so a stack can be shared
    between workers.
    """

    data: np.ndarray
    transform: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
    crs: str = ""
    nodata: Optional[float] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"stack data must be (bands, height, width), got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        transform = tuple(float(v) for v in self.transform)
        if len(transform) != 6:
            raise ValueError("transform needs 6 coefficients")
        if not transform[1] > 0:
            raise ValueError("pixel width must be positive")
        if transform[5] == 0:
            raise ValueError("pixel height must be non-zero")
        object.__setattr__(self, "transform", transform)
        if self.nodata is not None:
            object.__setattr__(self, "nodata", float(self.nodata))
        values = data[:, self.valid_mask()]
        if not np.isfinite(values).all():
            raise ValueError("stack holds non-finite values outside the nodata mask")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def valid_mask(self) -> np.ndarray:
        """Boolean ``(height, width)`` mask of pixels where no band holds nodata."""
        if self.nodata is None:
            return np.ones(self.data.shape[1:], dtype=bool)
        if math.isnan(self.nodata):
            return ~np.isnan(self.data).any(axis=0)
        return ~(self.data == np.float32(self.nodata)).any(axis=0)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates ``(x, y)`` of every pixel center, each ``(height, width)``."""
        ox, pw, _, oy, _, ph = self.transform
        cols = ox + (np.arange(self.width) + 0.5) * pw
        rows = oy + (np.arange(self.height) + 0.5) * ph
        return np.meshgrid(cols, rows)

    def with_data(self, data: np.ndarray, transform=None) -> "RasterStack":
        return RasterStack(
            data,
            self.transform if transform is None else transform,
            self.crs,
            self.nodata,
        )

    def __eq__(self, other):
        if not isinstance(other, RasterStack):
            return NotImplemented
        return (
            _same_bits(self.data, other.data)
            and self.transform == other.transform
            and self.crs == other.crs
            and (
                self.nodata == other.nodata
                or (
                    self.nodata is not None
                    and other.nodata is not None
                    and math.isnan(self.nodata)
                    and math.isnan(other.nodata)
                )
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class Polygon:
    label: int
    rings: tuple  # of (n, 2) float64 arrays, closed


@dataclass(frozen=True)
class PolygonSet:
    polygons: tuple = ()

    def __len__(self):
        return len(self.polygons)

    def __iter__(self):
        return iter(self.polygons)

    def labels(self) -> list[int]:
        """Class labels in order of first appearance."""
        seen: list[int] = []
        for poly in self.polygons:
            if poly.label not in seen:
                seen.append(poly.label)
        return seen


def _close_ring(vertices) -> np.ndarray:
    ring = np.asarray(vertices, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise FormatError("ring vertices must be [x, y] pairs")
    if not np.isfinite(ring).all():
        raise FormatError("ring has non-finite coordinates")
    if len(ring) and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(np.unique(ring, axis=0)) < 3:
        raise FormatError("ring needs at least 3 distinct vertices")
    return np.vstack([ring, ring[:1]])


def make_polygon(label: int, *rings) -> Polygon:
    return Polygon(int(label), tuple(_close_ring(r) for r in rings))


def read_polygons(path, n_classes: Optional[int] = None) -> PolygonSet:
    """Read the JSON polygon format.

    The document looks like ``{"polygons": [{"class": 1, "ring": [[x, y], ...]}]}``;
    ``"rings"`` (a list of rings, combined with the even-odd rule) is accepted
    in place of ``"ring"``. Rings are closed on load. Class 0 is reserved for
    background and rejected, as is any class ``>= n_classes`` when given.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("polygons"), list):
        raise FormatError(f"{path}: expected an object with a 'polygons' list")
    polygons = []
    for i, item in enumerate(doc["polygons"]):
        if not isinstance(item, dict) or "class" not in item:
            raise FormatError(f"{path}: polygon {i} has no 'class'")
        label = item["class"]
        if not isinstance(label, int) or isinstance(label, bool):
            raise FormatError(f"{path}: polygon {i} class must be an integer")
        if label < 1 or (n_classes is not None and label >= n_classes):
            raise FormatError(f"{path}: polygon {i} has invalid class {label}")
        if "ring" in item:
            rings = [item["ring"]]
        elif "rings" in item:
            rings = item["rings"]
        else:
            raise FormatError(f"{path}: polygon {i} has no ring")
        try:
            polygons.append(make_polygon(label, *rings))
        except FormatError as exc:
            raise FormatError(f"{path}: polygon {i}: {exc}") from exc
    return PolygonSet(tuple(polygons))


def write_polygons(polys: PolygonSet, path) -> None:
    items = []
    for poly in polys:
        rings = [[[float(x), float(y)] for x, y in ring] for ring in poly.rings]
        if len(rings) == 1:
            items.append({"class": poly.label, "ring": rings[0]})
        else:
            items.append({"class": poly.label, "rings": rings})
    Path(path).write_text(json.dumps({"polygons": items}, indent=1) + "\n")


def _format_float(value: float) -> str:
    return repr(float(value))


def write_stack(stack: RasterStack, path) -> None:
    """Write ``stack`` as a header + little-endian float32 payload pair."""
    hdr, payload = _header_paths(path)
    lines = [
        f"width: {stack.width}",
        f"height: {stack.height}",
        f"bands: {stack.bands}",
        "dtype: float32",
        "interleave: bsq",
        "byteorder: little",
        "transform: " + ",".join(_format_float(v) for v in stack.transform),
        f"crs: {stack.crs}",
    ]
    if stack.nodata is not None:
        lines.append(f"nodata: {_format_float(stack.nodata)}")
    hdr.parent.mkdir(parents=True, exist_ok=True)
    hdr.write_text("\n".join(lines) + "\n")
    payload.write_bytes(stack.data.astype("<f4").tobytes())


def _parse_header(hdr: Path) -> dict[str, str]:
    fields = {}
    for lineno, line in enumerate(hdr.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(f"{hdr}:{lineno}: expected 'key: value'")
        fields[key.strip()] = value.strip()
    return fields


def read_stack(path) -> RasterStack:
    """Read a stack written by :func:`write_stack`."""
    hdr, payload = _header_paths(path)
    if not hdr.exists():
        raise FileNotFoundError(hdr)
    if not payload.exists():
        raise FileNotFoundError(payload)
    fields = _parse_header(hdr)
    try:
        width, height, bands = (int(fields[k]) for k in ("width", "height", "bands"))
        transform = tuple(float(v) for v in fields["transform"].split(","))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{hdr}: bad or missing header field ({exc})") from exc
    if fields.get("dtype", "float32") != "float32":
        raise FormatError(f"{hdr}: unsupported dtype {fields['dtype']!r}")
    if fields.get("interleave", "bsq") != "bsq":
        raise FormatError(f"{hdr}: unsupported interleave {fields['interleave']!r}")
    if fields.get("byteorder", "little") != "little":
        raise FormatError(f"{hdr}: unsupported byte order {fields['byteorder']!r}")
    expected = width * height * bands * 4
    actual = payload.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{payload}: payload is {actual} bytes, header implies {expected}"
        )
    data = np.fromfile(payload, dtype="<f4").reshape(bands, height, width)
    nodata = float(fields["nodata"]) if "nodata" in fields else None
    return RasterStack(data, transform, fields.get("crs", ""), nodata)


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Per-pixel class labels (0 = background / unclassified)."""

    labels: np.ndarray
    transform: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
    crs: str = ""

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.uint8, copy=True)
        if labels.ndim != 2:
            raise ValueError("class map labels must be 2-D")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "transform", tuple(float(v) for v in self.transform))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def like(cls, stack: RasterStack, labels) -> "ClassMap":
        return cls(labels, stack.transform, stack.crs)

    def __eq__(self, other):
        if not isinstance(other, ClassMap):
            return NotImplemented
        return (
            np.array_equal(self.labels, other.labels)
            and self.transform == other.transform
            and self.crs == other.crs
        )

    __hash__ = None


def write_class_map(cmap: ClassMap, path) -> None:
    """Store a class map as a single-band native raster."""
    write_stack(RasterStack(cmap.labels[None].astype(np.float32), cmap.transform, cmap.crs), path)


def read_class_map(path) -> ClassMap:
    stack = read_stack(path)
    if stack.bands != 1:
        raise FormatError(f"{path}: class map must have one band, found {stack.bands}")
    values = stack.data[0]
    if (values < 0).any() or (values > 255).any() or (values != np.round(values)).any():
        raise FormatError(f"{path}: class labels must be integers in [0, 255]")
    return ClassMap(values.astype(np.uint8), stack.transform, stack.crs)


def render_class_map(cmap: ClassMap, path, palette: Mapping[int, Sequence[int]] | None = None) -> None:
    """Write an 8-bit paletted PNG of the class map.

    Raises:
        KeyError: a label present in the map has no palette entry.
    """
    palette = DEFAULT_PALETTE if palette is None else palette
    present = np.unique(cmap.labels)
    missing = [int(v) for v in present if int(v) not in palette]
    if missing:
        raise KeyError(f"labels {missing} have no palette entry")
    table = np.zeros((256, 3), dtype=np.uint8)
    for label, rgb in palette.items():
        if not 0 <= int(label) <= 255:
            raise ValueError(f"palette label {label} outside 0..255")
        if len(rgb) != 3 or any(not 0 <= int(c) <= 255 for c in rgb):
            raise ValueError(f"palette entry for {label} is not an RGB triple")
        table[int(label)] = [int(c) for c in rgb]
    img = Image.fromarray(np.ascontiguousarray(cmap.labels), mode="P")
    img.putpalette(table.ravel().tolist())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


@dataclass(eq=False)
class SampleTable:
    """Labeled pixels: grid position, class and band vector per row."""

    cols: np.ndarray
    rows: np.ndarray
    classes: np.ndarray
    features: np.ndarray
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        features = np.asarray(self.features, dtype=np.float32)
        if features.ndim == 1:
            features = features.reshape(len(self.cols), -1)
        self.features = features
        n = len(self.cols)
        if not (len(self.rows) == len(self.classes) == features.shape[0] == n):
            raise ValueError("sample table columns have different lengths")

    def __len__(self):
        return len(self.cols)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "SampleTable":
        index = np.asarray(index)
        return SampleTable(
            self.cols[index],
            self.rows[index],
            self.classes[index],
            self.features[index],
            self.provenance,
            dict(self.meta),
        )

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.classes, return_counts=True)
        return {int(c): int(n) for c, n in zip(labels, counts)}

    def check_bounds(self, width: int, height: int) -> None:
        if len(self) and (
            self.cols.min() < 0
            or self.rows.min() < 0
            or self.cols.max() >= width
            or self.rows.max() >= height
        ):
            raise ValueError("sample positions fall outside the raster")

    def __eq__(self, other):
        if not isinstance(other, SampleTable):
            return NotImplemented
        return (
            np.array_equal(self.cols, other.cols)
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.classes, other.classes)
            and _same_bits(self.features, other.features)
        )

    __hash__ = None


def _float32_text(value) -> str:
    # shortest decimal string that parses back to the same float32
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def write_samples(table: SampleTable, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["col", "row", "class"] + [f"b{i + 1}" for i in range(table.n_features)])
        for c, r, k, feats in zip(table.cols, table.rows, table.classes, table.features):
            writer.writerow([int(c), int(r), int(k)] + [_float32_text(v) for v in feats])


def read_samples(path) -> SampleTable:
    """Read a ``col,row,class,b1,...,bN`` CSV written by :func:`write_samples`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty sample file") from None
        if header[:3] != ["col", "row", "class"]:
            raise FormatError(f"{path}: header must start with col,row,class")
        width = len(header)
        ints, feats = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{path}:{lineno}: ragged row ({len(row)} cells, expected {width})")
            try:
                ints.append([int(v) for v in row[:3]])
                feats.append([float(v) for v in row[3:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    ints_arr = np.array(ints, dtype=np.int64).reshape(-1, 3)
    feats_arr = np.array(feats, dtype=np.float64).reshape(len(ints), width - 3)
    return SampleTable(ints_arr[:, 0], ints_arr[:, 1], ints_arr[:, 2], feats_arr.astype(np.float32))
