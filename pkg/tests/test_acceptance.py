"""Acceptance criteria at their pinned tolerances.

Each test records one PASS/FAIL line, collected in the "acceptance criteria"
section at the end of the pytest run.
"""

import time

import numpy as np
import pytest

from altmap import pipeline
from altmap.classifiers import fit_classifier, knn_fit, predict_map, predict_map_tiled, smo_solve, svm_train
from altmap.classifiers.svm import rbf_kernel
from altmap.config import RunConfig
from altmap.evaluate import auc, roc_curve
from altmap.labelgen import (
    SpectralSignature,
    build_dataset,
    pca,
    pca_matrix,
    select_component,
    split_dataset,
    threshold_component,
)
from altmap.nn.optim import TrainConfig
from altmap.preprocess import apply_scaling, fit_scaling
from altmap.synth import LANDSAT_MEANS, SceneSpec, Zone, default_scene_spec, generate_scene

from .conftest import record_acceptance
from .gradcheck import LAYER_CHECKS


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {}
    for name, check in LAYER_CHECKS.items():
        worst[name] = max(check(rng) for _ in range(100))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_acceptance("gradient correctness", ok, f"100 shapes per layer, worst rel err: {detail}; {elapsed:.1f}s")
    assert max(worst.values()) <= 1e-5
    assert elapsed < 60


def test_pca_recovers_constructed_covariance():
    rng = np.random.default_rng(7)
    worst = 0.0
    for d in range(3, 7):
        for _ in range(5):
            q, r = np.linalg.qr(rng.normal(size=(d, d)))
            rot = q * np.sign(np.diag(r))
            eig = np.sort(rng.uniform(0.1, 5.0, d))[::-1]
            # +-sqrt(d * lambda) along each axis gives population covariance exactly rot diag(eig) rot'
            axes = np.diag(np.sqrt(d * eig))
            x = np.vstack([axes, -axes]) @ rot.T + rng.normal(size=d)
            vals, load, _, _ = pca_matrix(x)
            err_vals = np.abs(vals - eig).max()
            err_vecs = max(min(np.abs(load[k] - rot[:, k]).max(), np.abs(load[k] + rot[:, k]).max())
                           for k in range(d))
            err_orth = np.abs(load @ load.T - np.eye(d)).max()
            worst = max(worst, err_vals, err_vecs, err_orth)
    record_acceptance("PCA oracle", worst <= 1e-6, f"3-6 bands, worst error {worst:.1e}")
    assert worst <= 1e-6


def _knn_oracle(points, labels, queries, k, n_classes):
    out = []
    for q in queries:
        dist = np.zeros(len(points))
        for j in range(points.shape[1]):
            dist += (points[:, j] - q[j]) ** 2
        near = np.lexsort((np.arange(len(points)), dist))[:k]
        votes = np.bincount(labels[near], minlength=n_classes)
        out.append(int(np.argmax(votes)))
    return np.array(out)


def test_knn_exact_against_scan():
    rng = np.random.default_rng(11)
    agree = total = 0
    for inst in range(50):
        n, d = int(rng.integers(5, 2001)), int(rng.integers(1, 10))
        # half the instances live on a coarse grid so distance ties are common
        if inst % 2:
            pts = rng.integers(0, 3, (n, d)).astype(float)
            queries = rng.integers(0, 3, (40, d)).astype(float)
        else:
            pts, queries = rng.random((n, d)), rng.random((40, d))
        labels = rng.integers(0, 3, n)
        pred = knn_fit(pts, labels, 3, 5).predict(queries)
        agree += int((pred == _knn_oracle(pts, labels, queries, 5, 3)).sum())
        total += len(queries)
    record_acceptance("KNN exactness", agree == total, f"{agree}/{total} queries over 50 instances")
    assert agree == total


def test_svm_kkt_conditions():
    rng = np.random.default_rng(5)
    tol = 1e-3
    failures = []
    worst_margin = worst_sum = 0.0
    for i in range(20):
        separable = i < 10
        d = int(rng.integers(2, 6))
        n = int(rng.integers(20, 120))
        if separable:
            y = np.where(np.arange(n) % 2, 1.0, -1.0)
            x = rng.normal(0, 0.15, (n, d)) + np.outer(y, np.ones(d)) * 1.5
        else:
            x = rng.normal(size=(n, d))
            y = np.where(x[:, 0] + rng.normal(0, 1.0, n) > 0, 1.0, -1.0)
        gamma = 1.0 / d
        sol = smo_solve(x, y, 1.0, gamma, tol)
        a = sol.alpha
        if not ((a >= 0).all() and (a <= 1.0).all()):
            failures.append(f"set {i}: box")
        worst_sum = max(worst_sum, abs(a @ y))
        f = rbf_kernel(x, x, gamma) @ (a * y) - sol.rho
        free = (a > 0) & (a < 1.0)
        margin = float(np.abs(y[free] * f[free] - 1).max(initial=0.0))
        worst_margin = max(worst_margin, margin)
        if separable:
            model = svm_train(x, (y > 0).astype(int), C=1.0)
            if not (model.predict(x) == (y > 0)).all():
                failures.append(f"set {i}: train accuracy")
    ok = not failures and worst_sum <= 1e-6 and worst_margin <= 10 * tol
    record_acceptance("SVM KKT", ok, f"20 sets, max |sum a y| {worst_sum:.1e}, max free-SV margin error "
                                     f"{worst_margin:.1e}{'; ' + ', '.join(failures) if failures else ''}")
    assert ok


def test_auc_equals_mann_whitney():
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 501))
        truth = rng.integers(0, 2, n)
        truth[:2] = [0, 1]
        scores = rng.integers(0, [5, 50, 10**6][i % 3], n) / 10.0**6
        pos, neg = scores[truth == 1], scores[truth == 0]
        mw = ((pos[:, None] > neg[None]).sum() + 0.5 * (pos[:, None] == neg[None]).sum()) / (len(pos) * len(neg))
        fpr, tpr, _ = roc_curve(scores, truth, 1)
        worst = max(worst, abs(auc(fpr, tpr) - mw))
    fpr, tpr, _ = roc_curve(np.array([0.9, 0.8, 0.4, 0.6, 0.3, 0.1]), np.array([1, 1, 1, 0, 0, 0]), 1)
    hand = auc(fpr, tpr)
    ok = worst <= 1e-9 and abs(hand - 8 / 9) <= 1e-12
    record_acceptance("AUC equivalence", ok, f"200 sets, worst diff {worst:.1e}; hand case {hand:.6f}")
    assert ok


def _e2e_config(directory, **extra):
    return RunConfig.from_dict({
        "raster": "scene.hdr",
        "polygons": "polygons.json",
        "out": ".",
        "seed": 0,
        **extra,
    }, base_dir=directory)


@pytest.mark.slow
def test_end_to_end_synthetic_benchmark(tmp_path):
    start = time.perf_counter()
    cfg = _e2e_config(tmp_path, train={"epochs": 20}, cnn={"patch_size": 15})
    scene = pipeline.run_synth(cfg)
    spec = scene["spec"]
    means = np.array([spec.class_means[c] for c in range(3)])
    gap = min(np.linalg.norm(means[i] - means[j]) for i in range(3) for j in range(i + 1, 3))
    assert scene["stack"].data.shape == (7, 256, 256)
    assert gap >= 6 * spec.noise_std and spec.mixing_width == 2
    pipeline.run_ingest(cfg)
    labels = pipeline.run_labels(cfg)
    scores = {}
    for m in ("knn", "svm", "mlp", "cnn"):
        mcfg = cfg.override(model=m)
        pipeline.run_train(mcfg)
        rep = pipeline.run_evaluate(mcfg)["report"]
        scores[m] = (rep.accuracy, rep.macro_f1)
    elapsed = time.perf_counter() - start
    ok = all(a >= 0.95 and f >= 0.95 for a, f in scores.values()) and elapsed <= 600
    detail = ", ".join(f"{m} acc {a:.4f} F1 {f:.4f}" for m, (a, f) in scores.items())
    n_train, n_test = len(labels["split"].train), len(labels["split"].test)
    record_acceptance("end-to-end synthetic benchmark", ok,
                      f"{detail}; {n_train}/{n_test} train/test; {elapsed:.0f}s")
    for m, (a, f) in scores.items():
        assert a >= 0.95 and f >= 0.95, m
    assert elapsed <= 600


def test_selective_pca_recovers_planted_zone():
    means = {0: LANDSAT_MEANS[0], 1: LANDSAT_MEANS[1]}
    spec = SceneSpec(256, 256, means, [Zone(1, "disk", {"center": [140.0, 110.0], "radius": 34.0}),
                                       Zone(1, "polygon", {"vertices": [[30, 190], [90, 180], [80, 240], [40, 235]]})],
                     noise_std=0.012, mixing_width=2.0, seed=17)
    stack, truth = generate_scene(spec)
    scaled = apply_scaling(stack, fit_scaling(stack, "minmax01"))
    result = pca(scaled)
    sig = SpectralSignature([0, 0, 0, 0, 0, 1, -1])
    index, polarity, _ = select_component(result, sig)
    planted = truth.labels == 1

    def iou(mask):
        return (mask & planted).sum() / (mask | planted).sum()

    sweep = {(k, s): iou(threshold_component(result, k, s, 2.0))
             for k in range(result.n_components) for s in (1, -1)}
    best = max(sweep, key=sweep.get)
    chosen = sweep[(index, polarity)]
    ok = (index, polarity) == best and chosen >= 0.8
    record_acceptance("selective-PCA labeling", ok,
                      f"picked component {index} polarity {polarity:+d}, IoU {chosen:.3f}; "
                      f"sweep best {best} IoU {sweep[best]:.3f}")
    assert (index, polarity) == best
    assert chosen >= 0.8


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def _full_run(cfg):
    pipeline.run_synth(cfg)
    pipeline.run_ingest(cfg)
    pipeline.run_labels(cfg)
    for m in ("knn", "svm", "mlp", "cnn"):
        mcfg = cfg.override(model=m)
        pipeline.run_train(mcfg)
        pipeline.run_predict(mcfg)
        pipeline.run_evaluate(mcfg)
        pipeline.run_render(mcfg)


def test_pipeline_determinism(tmp_path):
    cfg = _e2e_config(tmp_path, synth={"size": 64}, train={"epochs": 3})
    _full_run(cfg)
    first = _snapshot(tmp_path)
    _full_run(cfg)
    second = _snapshot(tmp_path)
    differ = sorted(k for k in first if first[k] != second.get(k))
    expected = {f"{stem}_{m}.{ext}" for m in ("knn", "svm", "mlp", "cnn")
                for stem, ext in (("model", "bin"), ("classmap", "bin"), ("report", "json"))}
    ok = not differ and set(first) == set(second) and expected <= set(first)
    record_acceptance("determinism", ok, f"{len(first)} files byte-identical across two runs"
                      if ok else f"differing: {differ}")
    assert ok


def test_tiled_prediction_is_exact(tmp_path):
    spec = default_scene_spec(size=128, seed=4)
    stack, truth = generate_scene(spec)
    scaling = fit_scaling(stack, "minmax01")
    scaled = apply_scaling(stack, scaling)
    masks = [(c, truth.labels == c) for c in (1, 2)]
    split = split_dataset(build_dataset(scaled, masks, seed=1), 0.7, seed=2)
    results = {}
    for kind in ("knn", "svm", "mlp", "cnn"):
        model = fit_classifier(kind, split, stack=scaled, scaling=scaling,
                               train_config=TrainConfig(epochs=2, seed=0), patch_size=15)
        mono = predict_map(model, stack)
        same = True
        for tile, threads in ((32, 1), (50, 2), (17, 4)):
            tiled = predict_map_tiled(model, stack, tile=tile, threads=threads)
            same &= np.array_equal(tiled.class_map.labels, mono.class_map.labels)
            same &= tiled.probabilities.data.tobytes() == mono.probabilities.data.tobytes()
        results[kind] = same
    ok = all(results.values())
    record_acceptance("tile decomposability", ok,
                      "128x128, tiles 32/50/17: " + ", ".join(f"{k} {'exact' if v else 'MISMATCH'}"
                                                             for k, v in results.items()))
    assert ok


def test_real_data_reproduction():
    record_acceptance("real-data reproduction", None,
                      "optional; needs the published rasters converted to the native format")
    pytest.skip("optional extended check; the real rasters are not bundled (see README)")
