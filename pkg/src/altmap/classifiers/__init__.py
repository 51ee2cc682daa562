"""KNN, SVM, MLP and CNN classifiers with training and whole-raster prediction."""

from .knn import KnnModel, knn_fit, knn_predict, nearest_neighbors
from .model import (
    EpochRecord,
    TrainedModel,
    TrainingError,
    fit_classifier,
    load_model,
    sample_inputs,
    save_model,
    train_model,
)
from .networks import CnnSpec, MlpSpec, build_network, cnn_for, mlp_for
from .predict import Prediction, predict_map, predict_map_tiled
from .svm import SvmConvergenceError, SvmModel, smo_solve, svm_predict, svm_train

__all__ = [
    "KnnModel",
    "knn_fit",
    "knn_predict",
    "nearest_neighbors",
    "SvmModel",
    "SvmConvergenceError",
    "smo_solve",
    "svm_train",
    "svm_predict",
    "MlpSpec",
    "CnnSpec",
    "mlp_for",
    "cnn_for",
    "build_network",
    "EpochRecord",
    "TrainedModel",
    "TrainingError",
    "train_model",
    "fit_classifier",
    "save_model",
    "load_model",
    "sample_inputs",
    "Prediction",
    "predict_map",
    "predict_map_tiled",
]
