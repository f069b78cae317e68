"""Base learners, the 1-NN reference classifier, embeddings and model selection."""
import numpy as np

from ..errors import FitError
from .base import FOREST, LOGISTIC, FittedModel, ModelSpec, fingerprint
from .forest import ForestModel, fit_forest
from .logistic import LogisticModel, fit_logistic, loss_and_grad
from .neighbors import nearest_reference, predict_1nn


def fit(spec, X, y):
    """Fit a fresh learner described by ``spec`` on rows X with labels y."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("empty training set")
    if X.shape[0] != len(y):
        raise FitError(f"{X.shape[0]} rows but {len(y)} labels")
    if X.shape[0] < 2:
        raise FitError("need at least 2 training rows")
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise FitError("training set holds a single class")
    fp = fingerprint(X, y)
    p = spec.params
    if spec.kind == LOGISTIC:
        return fit_logistic(X, codes, classes, p["l2"], p["max_epochs"], p["learning_rate"], p["tol"], fp)
    return fit_forest(
        X, codes, classes, p["n_trees"], p["max_depth"], p["min_samples_leaf"], p["max_features"], spec.seed, fp
    )


def predict_proba(model, X):
    return model.predict_proba(X)


from .embedding import Embedding, embedding_for, leaf_embedding  # noqa: E402
from .selection import select_model  # noqa: E402

__all__ = [
    "FOREST",
    "LOGISTIC",
    "Embedding",
    "FittedModel",
    "ForestModel",
    "LogisticModel",
    "ModelSpec",
    "embedding_for",
    "fit",
    "leaf_embedding",
    "loss_and_grad",
    "nearest_reference",
    "predict_1nn",
    "predict_proba",
    "select_model",
]
