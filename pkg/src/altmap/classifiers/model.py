"""Trained-model wrapper, mini-batch training loop and model files."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..labelgen import DatasetSplit
from ..nn import functional as F
from ..nn.container import load_container, save_container
from ..nn.layers import Conv2D, Dense, Sequential
from ..nn.optim import TrainConfig, adam_step
from ..preprocess import PatchSource, ScalingParams
from ..raster_io import RasterStack, SampleTable
from ..seeding import derive_seed
from .knn import KnnModel
from .networks import CnnSpec, MlpSpec, build_network, spec_from_dict, spec_to_dict
from .svm import BinaryMachine, SvmModel, svm_train

__all__ = [
    "TrainingError",
    "EpochRecord",
    "TrainedModel",
    "train_model",
    "fit_classifier",
    "save_model",
    "load_model",
    "sample_inputs",
]

log = logging.getLogger(__name__)

MODEL_KINDS = ("knn", "svm", "mlp", "cnn")


class TrainingError(FloatingPointError):
    """Loss or gradient became non-finite; carries the epoch and batch where it happened."""

    def __init__(self, message, epoch, batch):
        super().__init__(message)
        self.epoch, self.batch = epoch, batch


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    train_loss: float
    test_loss: float


@dataclass
class TrainedModel:
    """Any of the four classifiers plus what is needed to apply it to a raster."""

    kind: str
    estimator: object
    n_classes: int
    n_bands: int
    spec: object = None
    scaling: Optional[ScalingParams] = None
    history: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    @property
    def patch_size(self) -> int:
        return self.spec.patch_size if self.kind == "cnn" else 1

    def predict_inputs(self, inputs: np.ndarray, batch: int = 512):
        """``(classes, probabilities)`` for feature rows or, for the CNN, patches."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if self.kind in ("mlp", "cnn"):
            probs = self.estimator.predict_proba(inputs, batch)
            return probs.argmax(axis=1), probs
        if self.kind == "svm":
            return self.estimator.predict_with_scores(inputs)
        probs = self.estimator.predict_proba(inputs)
        return probs.argmax(axis=1), probs


class _Inputs:
    """Row access to samples as feature vectors or as patches cut from a stack."""

    def __init__(self, table: SampleTable, source: Optional[PatchSource]):
        self.table, self.source = table, source
        self.features = table.features.astype(np.float64)

    def __len__(self):
        return len(self.table)

    def __getitem__(self, idx):
        if self.source is None:
            return self.features[idx]
        return self.source.gather(self.table.cols[idx], self.table.rows[idx])


def sample_inputs(model_or_spec, table: SampleTable, stack: Optional[RasterStack] = None) -> np.ndarray:
    """Materialise model inputs for ``table``; ``stack`` (already scaled) is needed for the CNN."""
    kind = getattr(model_or_spec, "kind", None)
    if kind == "cnn":
        if stack is None:
            raise ValueError("the CNN needs the scaled stack to cut patches")
        table.check_bounds(stack.width, stack.height)
        source = PatchSource(stack, model_or_spec.patch_size)
        return source.gather(table.cols, table.rows)
    return table.features.astype(np.float64)


def _evaluate(net: Sequential, inputs: _Inputs, labels: np.ndarray, batch: int = 512):
    if len(inputs) == 0:
        return float("nan"), float("nan")
    correct, loss = 0, 0.0
    for start in range(0, len(inputs), batch):
        idx = np.arange(start, min(start + batch, len(inputs)))
        probs = F.softmax(net.forward(inputs[idx]))
        y = labels[idx]
        correct += int((probs.argmax(axis=1) == y).sum())
        p_true = np.maximum(probs[np.arange(len(y)), y], F.PROB_FLOOR)
        loss -= float(np.log(p_true).sum())
    return correct / len(inputs), loss / len(inputs)


def train_model(
    spec,
    split: DatasetSplit,
    config: TrainConfig,
    stack: Optional[RasterStack] = None,
    scaling: Optional[ScalingParams] = None,
    provenance: Optional[dict] = None,
    on_batch: Optional[Callable[[int, int, float, Sequential], None]] = None,
) -> TrainedModel:
    """Mini-batch Adam on cross-entropy for an MLP or CNN.

    Training order is reshuffled every epoch from a seed derived from
    ``config.seed``. After each epoch, accuracy and loss on the train and test
    tables are measured in inference mode (dropout off) and appended to the
    history. ``on_batch(epoch, batch, loss, net)`` is called after every step.

    Raises:
        TrainingError: the loss or a gradient went non-finite.
    """
    n_classes = spec.n_outputs
    source_needed = isinstance(spec, CnnSpec)
    if source_needed:
        if stack is None:
            raise ValueError("CNN training needs the scaled stack for patch extraction")
        if stack.bands != spec.n_bands:
            raise ValueError(f"stack has {stack.bands} bands, spec expects {spec.n_bands}")
        source = PatchSource(stack, spec.patch_size)
        for t in (split.train, split.test):
            t.check_bounds(stack.width, stack.height)
    else:
        source = None
        if split.train.n_features != spec.n_inputs:
            raise ValueError(f"samples have {split.train.n_features} features, spec expects {spec.n_inputs}")
    for t in (split.train, split.test):
        if len(t) and (t.classes.min() < 0 or t.classes.max() >= n_classes):
            raise ValueError(f"class labels must lie in [0, {n_classes})")

    net = build_network(spec, derive_seed(config.seed, "init"))
    net.set_rng(np.random.default_rng(derive_seed(config.seed, "dropout")))
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    params = net.params()

    train_in, test_in = _Inputs(split.train, source), _Inputs(split.test, source)
    y_train, y_test = split.train.classes, split.test.classes
    onehot = np.eye(n_classes)
    history = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_in))
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            net.zero_grad()
            logits = net.forward(train_in[idx], train=True)
            target = onehot[y_train[idx]]
            loss = F.cross_entropy(F.softmax(logits), target)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}", epoch + 1, b + 1)
            net.backward(F.cross_entropy_softmax_grad(logits, target))
            try:
                for p in params:
                    adam_step(p, config)
            except FloatingPointError:
                raise TrainingError(
                    f"non-finite gradient at epoch {epoch + 1}, batch {b + 1}", epoch + 1, b + 1
                ) from None
            if on_batch is not None:
                on_batch(epoch, b, loss, net)
        train_acc, train_loss = _evaluate(net, train_in, y_train)
        test_acc, test_loss = _evaluate(net, test_in, y_test)
        history.append(EpochRecord(epoch + 1, train_acc, test_acc, train_loss, test_loss))
        log.info(
            "epoch %d/%d: train acc %.4f loss %.4f | test acc %.4f loss %.4f",
            epoch + 1, config.epochs, train_acc, train_loss, test_acc, test_loss,
        )
    net.set_rng(None)
    n_bands = spec.n_bands if source_needed else spec.n_inputs
    return TrainedModel(
        spec.kind, net, n_classes, n_bands, spec, scaling, history,
        dict(provenance or {}), {"train": config.to_dict()},
    )


def fit_classifier(
    kind: str,
    split: DatasetSplit,
    *,
    data_kind: str = "landsat8",
    stack: Optional[RasterStack] = None,
    scaling: Optional[ScalingParams] = None,
    train_config: Optional[TrainConfig] = None,
    knn_k: int = 5,
    svm_options: Optional[dict] = None,
    patch_size: Optional[int] = None,
    n_classes: int = 3,
    seed: int = 0,
    provenance: Optional[dict] = None,
) -> TrainedModel:
    """Train any of the four classifiers with the default hyperparameters."""
    from .networks import cnn_for, mlp_for

    n_bands = split.train.n_features
    if kind == "knn":
        est = KnnModel(split.train.features, split.train.classes, n_classes, knn_k)
        return TrainedModel("knn", est, n_classes, n_bands, None, scaling, [], dict(provenance or {}),
                            {"k": knn_k})
    if kind == "svm":
        opts = dict(svm_options or {})
        opts.setdefault("seed", derive_seed(seed, "svm_subsample"))
        est = svm_train(split.train.features, split.train.classes, n_classes=n_classes, **opts)
        hyper = {k: v for k, v in opts.items() if k != "seed"}
        hyper.update(C=est.C, gamma=est.gamma)
        return TrainedModel("svm", est, n_classes, n_bands, None, scaling, [], dict(provenance or {}), hyper)
    if kind in ("mlp", "cnn"):
        config = train_config or TrainConfig(seed=seed)
        if kind == "mlp":
            spec = mlp_for(data_kind, n_bands)
        else:
            spec = cnn_for(data_kind, n_bands, patch_size)
        return train_model(spec, split, config, stack, scaling, provenance)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _meta(model: TrainedModel) -> dict:
    meta = {
        "kind": model.kind,
        "n_classes": model.n_classes,
        "n_bands": model.n_bands,
        "scaling": model.scaling.to_dict() if model.scaling else None,
        "history": [vars(r) for r in model.history],
        "provenance": model.provenance,
        "hyper": model.hyper,
    }
    if model.kind in ("mlp", "cnn"):
        meta["spec"] = spec_to_dict(model.spec)
        meta["layers"] = model.estimator.config()
    return meta


def save_model(model: TrainedModel, path) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (float64 parameters)."""
    meta = _meta(model)
    arrays: dict[str, np.ndarray] = {}
    if model.kind == "knn":
        arrays["features"] = model.estimator.features
        arrays["labels"] = model.estimator.labels
    elif model.kind == "svm":
        svm = model.estimator
        meta["svm"] = {"gamma": svm.gamma, "C": svm.C, "classes": svm.classes.tolist(),
                       "machines": []}
        for p, m in enumerate(svm.machines):
            meta["svm"]["machines"].append(
                {"positive": m.positive, "negative": m.negative, "rho": m.rho, "info": m.info}
            )
            arrays[f"pair{p}.support"] = m.support
            arrays[f"pair{p}.coef"] = m.coef
    else:
        for i, layer in enumerate(model.estimator.layers):
            if isinstance(layer, (Conv2D, Dense)):
                arrays[f"layer{i}.weight"] = layer.weight.value
                arrays[f"layer{i}.bias"] = layer.bias.value
    save_container(path, meta, arrays)


def load_model(path) -> TrainedModel:
    meta, arrays = load_container(path)
    kind = meta["kind"]
    scaling = ScalingParams.from_dict(meta["scaling"]) if meta.get("scaling") else None
    history = [EpochRecord(**r) for r in meta.get("history", [])]
    common = dict(n_classes=meta["n_classes"], n_bands=meta["n_bands"], scaling=scaling,
                  history=history, provenance=meta.get("provenance", {}), hyper=meta.get("hyper", {}))
    if kind == "knn":
        est = KnnModel(arrays["features"], arrays["labels"], meta["n_classes"], meta["hyper"]["k"])
        return TrainedModel("knn", est, spec=None, **common)
    if kind == "svm":
        s = meta["svm"]
        machines = [
            BinaryMachine(m["positive"], m["negative"], arrays[f"pair{p}.support"],
                          arrays[f"pair{p}.coef"], m["rho"], m.get("info", {}))
            for p, m in enumerate(s["machines"])
        ]
        est = SvmModel(np.array(s["classes"]), machines, s["gamma"], s["C"], meta["n_bands"], meta["n_classes"])
        return TrainedModel("svm", est, spec=None, **common)
    spec = spec_from_dict(meta["spec"])
    net = build_network(spec, 0)
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Conv2D, Dense)):
            layer.weight.value = arrays[f"layer{i}.weight"].astype(np.float64)
            layer.bias.value = arrays[f"layer{i}.bias"].astype(np.float64)
    return TrainedModel(kind, net, spec=spec, **common)
