"""Pipeline stages operating on a run directory.

Each stage reads its inputs from ``cfg.out_dir`` (or from paths in the
config), writes its artifacts there, and records a ``manifest_<stage>.json``
with the config hash and SHA-256 digests of inputs and outputs. The command
line is a thin wrapper over these functions.

Run directory layout::

    stack.hdr/.bin        ingested bands (unscaled)
    scaled.hdr/.bin       scaled bands
    scaling.json          fitted ScalingParams
    labels.hdr/.bin       class masks used for training (single band)
    pca.json              PCA summary (pca label method only)
    samples.csv           full labeled table; train.csv / test.csv the split
    model_<m>.json/.bin   trained model
    history_<m>.csv       per-epoch curves (MLP and CNN)
    classmap_<m>.hdr/.bin predicted classes; proba_<m>.hdr/.bin probabilities
    report_<m>.json       evaluation on test.csv; roc_<m>_class<c>.csv
    gt_<m>.json           ground-truth accuracy (evaluate with --gt)
    classmap_<m>.png      rendered map
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .classifiers import fit_classifier, load_model, predict_map_tiled, save_model
from .config import ConfigError, RunConfig
from .evaluate import EvalReport, evaluate_model, export_history, ground_truth_accuracy, write_roc_csv
from .labelgen import (
    SpectralSignature,
    build_dataset,
    pca,
    rasterize_polygons,
    select_component,
    split_dataset,
    threshold_component,
)
from .nn.container import FORMAT_VERSION, container_paths
from .preprocess import (
    ScalingParams,
    apply_scaling,
    concat_bands,
    fit_scaling,
    resample_nearest,
    select_bands,
)
from .raster_io import (
    ClassMap,
    SampleTable,
    default_palette,
    read_class_map,
    read_polygons,
    read_samples,
    read_stack,
    render_class_map,
    write_class_map,
    write_polygons,
    write_samples,
    write_stack,
)
from .seeding import derive_seed
from .synth import DEFAULT_SIGNATURES, SceneSpec, default_scene_spec, generate_scene, scene_polygons

__all__ = [
    "run_ingest",
    "run_labels",
    "run_train",
    "run_predict",
    "run_evaluate",
    "run_render",
    "run_synth",
    "run_all",
    "file_digest",
]

log = logging.getLogger(__name__)


# -- manifests -----------------------------------------------------------


def _expand(path: Path) -> list[Path]:
    """A raster or model named by its header/manifest also owns a ``.bin`` payload."""
    path = Path(path)
    if path.suffix in (".hdr", ".json"):
        payload = path.with_suffix(".bin")
        if payload.exists():
            return [path, payload]
    return [path]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths) -> dict:
    out = {}
    for p in paths:
        for q in _expand(p):
            out[q.name] = file_digest(q)
    return dict(sorted(out.items()))


def _versions() -> dict:
    return {
        "altmap": __version__,
        "model_format": FORMAT_VERSION,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def _check_rerun(cfg: RunConfig, stage: str, inputs: dict) -> None:
    path = cfg.out_dir / f"manifest_{stage}.json"
    if not path.exists():
        return
    try:
        old = json.loads(path.read_text())
    except json.JSONDecodeError:
        return
    if old.get("config_hash") == cfg.hash() and old.get("inputs") == inputs:
        log.warning("%s: identical config and inputs to the previous run; outputs will be rewritten unchanged", stage)


def _write_manifest(cfg: RunConfig, stage: str, inputs: dict, outputs) -> Path:
    manifest = {
        "stage": stage,
        "config_hash": cfg.hash(),
        "seed": int(cfg.seed),
        "inputs": inputs,
        "outputs": _digests(outputs),
        "versions": _versions(),
    }
    path = cfg.out_dir / f"manifest_{stage}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _require(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"config does not name the {what}")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def _begin(cfg: RunConfig, stage: str, inputs) -> dict:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    digests = _digests([_require(p, n) for n, p in inputs])
    _check_rerun(cfg, stage, digests)
    return digests


def _provenance(cfg: RunConfig) -> dict:
    return {"data_kind": cfg.data_kind, "label_method": cfg.label_method, "seed": int(cfg.seed)}


# -- stages ----------------------------------------------------------------


def run_ingest(cfg: RunConfig) -> dict:
    """Read (and for ASTER merge) the input bands, select, fit and apply scaling."""
    raster = cfg.path(cfg.raster)
    named = [("raster", raster)]
    if cfg.swir_raster is not None:
        named.append(("SWIR raster", cfg.path(cfg.swir_raster)))
    inputs = _begin(cfg, "ingest", named)

    stack = read_stack(raster)
    if cfg.swir_raster is not None:
        swir = resample_nearest(read_stack(cfg.path(cfg.swir_raster)), cfg.swir_factor)
        stack = concat_bands(stack, swir)
    if cfg.bands is not None:
        stack = select_bands(stack, cfg.bands)
    expected = 9 if cfg.data_kind == "aster" else 7
    if stack.bands != expected:
        log.warning("%s data usually has %d bands, got %d", cfg.data_kind, expected, stack.bands)
    scaling = fit_scaling(stack, cfg.scaling)
    scaled = apply_scaling(stack, scaling)

    out = cfg.out_dir
    write_stack(stack, out / "stack.hdr")
    write_stack(scaled, out / "scaled.hdr")
    scaling.save(out / "scaling.json")
    outputs = [out / "stack.hdr", out / "scaled.hdr", out / "scaling.json"]
    _write_manifest(cfg, "ingest", inputs, outputs)
    return {"stack": stack, "scaled": scaled, "scaling": scaling}


def _resolve_overlaps(masks: dict, priority) -> tuple[list, np.ndarray]:
    """Settle pixels claimed by more than one class.

    With a ``priority`` list the class listed first keeps a contested pixel.
    Without one the pixel is ambiguous and dropped from every class. Returns
    the resolved ``(class, mask)`` pairs and the mask of contested pixels.
    """
    if not masks:
        return [], None
    contested = np.sum([masks[c] for c in sorted(masks)], axis=0) > 1
    if not priority:
        return [(c, masks[c] & ~contested) for c in sorted(masks)], contested
    order = list(priority) + [c for c in sorted(masks) if c not in priority]
    taken = np.zeros_like(contested)
    resolved = []
    for c in order:
        if c in masks:
            m = masks[c] & ~taken
            taken |= m
            resolved.append((c, m))
    return sorted(resolved, key=lambda cm: cm[0]), contested


def make_label_masks(cfg: RunConfig, scaled) -> tuple[list, Optional[dict], Optional[np.ndarray]]:
    """Class masks over ``scaled`` from polygons or from selective PCA.

    Returns ``(masks, pca_summary, contested)``; the last two are ``None`` for
    manual labels. Contested pixels are kept out of the background draw.
    """
    if cfg.label_method == "manual":
        polys = read_polygons(_require(cfg.path(cfg.polygons), "polygon file"), cfg.n_classes)
        cmap = rasterize_polygons(polys, scaled, cfg.priority)
        masks = [(c, cmap.labels == c) for c in range(1, cfg.n_classes) if (cmap.labels == c).any()]
        return masks, None, None

    signatures = cfg.signature_table()
    subset = cfg.pca["band_subset"]
    result = pca(scaled, subset)
    k_sigma = float(cfg.pca["k_sigma"])
    masks, summary = {}, {"eigenvalues": result.eigenvalues.tolist(),
                          "loadings": result.loadings.tolist(),
                          "band_subset": list(result.band_subset), "k_sigma": k_sigma, "classes": {}}
    for cls in sorted(signatures):
        if not 1 <= cls < cfg.n_classes:
            raise ConfigError(f"signature class {cls} outside 1..{cfg.n_classes - 1}")
        sig = SpectralSignature(signatures[cls])
        index, polarity, score = select_component(result, sig)
        masks[cls] = threshold_component(result, index, polarity, k_sigma)
        summary["classes"][str(cls)] = {"component": index, "polarity": polarity, "score": score,
                                        "pixels": int(masks[cls].sum())}
    resolved, contested = _resolve_overlaps(masks, cfg.priority)
    summary["contested_pixels"] = int(contested.sum()) if contested is not None else 0
    return resolved, summary, contested


def run_labels(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    named = [("scaled stack (run ingest first)", out / "scaled.hdr")]
    if cfg.label_method == "manual":
        named.append(("polygon file", cfg.path(cfg.polygons)))
    elif isinstance(cfg.signatures, str):
        named.append(("signature file", cfg.path(cfg.signatures)))
    inputs = _begin(cfg, "labels", named)

    scaled = read_stack(out / "scaled.hdr")
    masks, summary, contested = make_label_masks(cfg, scaled)
    bg = cfg.background
    table = build_dataset(scaled, masks, bg["per_class"], derive_seed(cfg.seed, "background"),
                          bg["guard"], provenance=f"{cfg.data_kind}/{cfg.label_method}", exclude=contested)
    split = split_dataset(table, cfg.split_ratio, derive_seed(cfg.seed, "split"))

    labels = np.zeros((scaled.height, scaled.width), dtype=np.uint8)
    for c, m in masks:
        labels[m] = c
    write_class_map(ClassMap.like(scaled, labels), out / "labels.hdr")
    write_samples(table, out / "samples.csv")
    write_samples(split.train, out / "train.csv")
    write_samples(split.test, out / "test.csv")
    outputs = [out / "labels.hdr", out / "samples.csv", out / "train.csv", out / "test.csv"]
    if summary is not None:
        (out / "pca.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        outputs.append(out / "pca.json")
    log.info("labeled samples per class: %s", table.class_counts())
    _write_manifest(cfg, "labels", inputs, outputs)
    return {"table": table, "split": split, "pca": summary}


def run_train(cfg: RunConfig, plot: bool = False) -> dict:
    from .labelgen import DatasetSplit

    out = cfg.out_dir
    m = cfg.model
    inputs = _begin(cfg, f"train_{m}", [
        ("training table (run labels first)", out / "train.csv"),
        ("test table", out / "test.csv"),
        ("scaling parameters", out / "scaling.json"),
        ("scaled stack", out / "scaled.hdr"),
    ])
    split = DatasetSplit(read_samples(out / "train.csv"), read_samples(out / "test.csv"),
                         derive_seed(cfg.seed, "split"), cfg.split_ratio)
    scaling = ScalingParams.load(out / "scaling.json")
    stack = read_stack(out / "scaled.hdr") if m == "cnn" else None
    model = fit_classifier(
        m, split,
        data_kind=cfg.data_kind, stack=stack, scaling=scaling,
        train_config=cfg.train_config(), knn_k=int(cfg.knn["k"]), svm_options=cfg.svm_options(),
        patch_size=cfg.cnn["patch_size"], n_classes=cfg.n_classes, seed=int(cfg.seed),
        provenance=_provenance(cfg),
    )
    save_model(model, out / f"model_{m}")
    outputs = list(container_paths(out / f"model_{m}"))[:1]
    if model.history:
        export_history(model.history, out / f"history_{m}.csv",
                       out / f"history_{m}.png" if plot else None)
        outputs.append(out / f"history_{m}.csv")
    _write_manifest(cfg, f"train_{m}", inputs, outputs)
    return {"model": model}


def run_predict(cfg: RunConfig, raster=None) -> dict:
    """Classify ``raster`` (default: the ingested stack) with the trained model."""
    out = cfg.out_dir
    m = cfg.model
    raster = Path(raster) if raster is not None else out / "stack.hdr"
    inputs = _begin(cfg, f"predict_{m}", [("model (run train first)", out / f"model_{m}.json"),
                                         ("raster", raster)])
    model = load_model(out / f"model_{m}")
    stack = read_stack(raster)
    pred = predict_map_tiled(model, stack, tile=cfg.tile, threads=cfg.threads)
    write_class_map(pred.class_map, out / f"classmap_{m}.hdr")
    write_stack(pred.probabilities, out / f"proba_{m}.hdr")
    _write_manifest(cfg, f"predict_{m}", inputs, [out / f"classmap_{m}.hdr", out / f"proba_{m}.hdr"])
    return {"prediction": pred}


def _gt_table(cfg: RunConfig, gt_path: Path, scaled) -> SampleTable:
    """Ground-truth samples from a polygon file or a sample CSV (features re-read from ``scaled``)."""
    if gt_path.suffix.lower() == ".csv":
        t = read_samples(gt_path)
        t.check_bounds(scaled.width, scaled.height)
        return SampleTable(t.cols, t.rows, t.classes, scaled.data[:, t.rows, t.cols].T, "ground truth")
    polys = read_polygons(gt_path, cfg.n_classes)
    cmap = rasterize_polygons(polys, scaled, cfg.priority)
    masks = [(c, cmap.labels == c) for c in range(1, cfg.n_classes) if (cmap.labels == c).any()]
    return build_dataset(scaled, masks, cfg.background["per_class"], derive_seed(cfg.seed, "gt_background"),
                         cfg.background["guard"], provenance="ground truth")


def run_evaluate(cfg: RunConfig, gt=None) -> dict:
    out = cfg.out_dir
    m = cfg.model
    named = [("model (run train first)", out / f"model_{m}.json"), ("test table", out / "test.csv"),
             ("scaled stack", out / "scaled.hdr")]
    gt_path = Path(gt) if gt is not None else cfg.path(cfg.gt_samples)
    if gt_path is not None:
        named.append(("ground-truth samples", gt_path))
    inputs = _begin(cfg, f"evaluate_{m}", named)

    model = load_model(out / f"model_{m}")
    test = read_samples(out / "test.csv")
    scaled = read_stack(out / "scaled.hdr")
    report = evaluate_model(model, test, scaled)
    report.save(out / f"report_{m}.json")
    outputs = [out / f"report_{m}.json"] + write_roc_csv(report, out, f"roc_{m}")
    result = {"report": report}
    if gt_path is not None:
        table = _gt_table(cfg, gt_path, scaled)
        acc = ground_truth_accuracy(model, table, scaled)
        doc = {"model": m, **model.provenance, "ground_truth_accuracy": acc, "n_samples": len(table),
               "counts": {str(k): v for k, v in table.class_counts().items()}}
        (out / f"gt_{m}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        outputs.append(out / f"gt_{m}.json")
        result["gt_accuracy"] = acc
    _write_manifest(cfg, f"evaluate_{m}", inputs, outputs)
    return result


def run_render(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    m = cfg.model
    inputs = _begin(cfg, f"render_{m}", [("class map (run predict first)", out / f"classmap_{m}.hdr")])
    cmap = read_class_map(out / f"classmap_{m}.hdr")
    palette = default_palette(cfg.data_kind)
    if cfg.palette:
        palette.update({int(k): tuple(v) for k, v in cfg.palette.items()})
    render_class_map(cmap, out / f"classmap_{m}.png", palette)
    _write_manifest(cfg, f"render_{m}", inputs, [out / f"classmap_{m}.png"])
    return {"png": out / f"classmap_{m}.png"}


def synth_spec(cfg: RunConfig) -> SceneSpec:
    """Scene from ``cfg.synth``: ``{"spec": <path or inline SceneSpec>}`` or preset keywords."""
    s = dict(cfg.synth)
    if "spec" in s:
        spec = s["spec"]
        if isinstance(spec, str):
            return SceneSpec.load(cfg.path(spec))
        return SceneSpec.from_dict(spec)
    allowed = {"size", "noise_std", "mixing_width", "smooth_radius"}
    unknown = set(s) - allowed
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    return default_scene_spec(cfg.data_kind, seed=derive_seed(cfg.seed, "synth"), **s)


def run_synth(cfg: RunConfig) -> dict:
    """Write a synthetic scene, its truth map, zone polygons and matching signatures."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _check_rerun(cfg, "synth", {})
    spec = synth_spec(cfg)
    stack, truth = generate_scene(spec)
    out = cfg.out_dir
    spec.save(out / "scene_spec.json")
    write_stack(stack, out / "scene.hdr")
    write_class_map(truth, out / "truth.hdr")
    write_polygons(scene_polygons(spec), out / "polygons.json")
    family = "aster" if cfg.data_kind == "aster" else "landsat"
    sigs = DEFAULT_SIGNATURES[family] if spec.bands == len(DEFAULT_SIGNATURES[family][1]) else None
    outputs = [out / "scene_spec.json", out / "scene.hdr", out / "truth.hdr", out / "polygons.json"]
    if sigs is not None:
        (out / "signatures.json").write_text(json.dumps({str(k): v for k, v in sigs.items()}) + "\n")
        outputs.append(out / "signatures.json")
    _write_manifest(cfg, "synth", {}, outputs)
    return {"stack": stack, "truth": truth, "spec": spec}


def run_all(cfg: RunConfig, gt=None) -> dict:
    """ingest -> labels -> train -> predict -> evaluate -> render."""
    run_ingest(cfg)
    run_labels(cfg)
    trained = run_train(cfg)
    run_predict(cfg)
    result = run_evaluate(cfg, gt)
    run_render(cfg)
    return {**trained, **result}
