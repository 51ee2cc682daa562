"""Model container: a JSON manifest plus a raw little-endian float64 blob.

``<base>.json`` holds a mandatory ``version``, free-form metadata and an
``arrays`` table (name, shape, element offset, original dtype).
``<base>.bin`` holds the arrays back to back as ``<f8``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

__all__ = ["FORMAT_VERSION", "save_container", "load_container", "container_paths"]


def container_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest_path, blob_path = container_paths(path)
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind not in "fiub":
            raise TypeError(f"array {name!r} has unsupported dtype {arr.dtype}")
        as_f8 = arr.astype("<f8")
        if arr.dtype.kind in "iub" and not np.array_equal(as_f8.astype(arr.dtype), arr):
            raise ValueError(f"array {name!r} is not exactly representable as float64")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": arr.dtype.str})
        chunks.append(as_f8.tobytes())
        offset += as_f8.size
    manifest = {"version": FORMAT_VERSION, "meta": meta, "arrays": table}
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    blob_path.write_bytes(b"".join(chunks))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest_path, blob_path = container_paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"{manifest_path}: unsupported container version {manifest.get('version')!r}")
    blob = np.fromfile(blob_path, dtype="<f8")
    arrays = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > blob.size:
            raise ValueError(f"{blob_path}: truncated blob for array {entry['name']!r}")
        arr = blob[start : start + size].reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
    return manifest["meta"], arrays
