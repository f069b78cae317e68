"""Sample embeddings used by the diversity samplers."""
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .base import FOREST, LOGISTIC

logger = logging.getLogger(__name__)

MAX_LEAF_COMPONENTS = 50
RAW = "raw_features"
LEAF_PCA = "leaf_pca"


@dataclass
class Embedding:
    Z: np.ndarray
    source: str
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.Z.shape[1]


def _leaf_pca(forest, X_fit):
    A = forest.leaf_onehot(X_fit)
    mean = A.mean(axis=0)
    centered = A - mean
    _, s, Vt = np.linalg.svd(centered, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(centered.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    # fixed sign: largest-magnitude loading of each component is positive
    pivots = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(len(Vt)), pivots])
    signs[signs == 0] = 1.0
    Vt = Vt * signs[:, None]
    return mean, Vt, s, rank


def _project(forest, X, mean, components):
    leaves = forest.apply(X)
    loadings = components.T  # (n_leaves, d_e)
    Z = np.zeros((X.shape[0], loadings.shape[1]))
    for t in range(leaves.shape[1]):
        Z += loadings[leaves[:, t]]
    return Z - mean @ loadings


def _build(forest, X_fit, X_all, d_e, fitted):
    mean, Vt, s, rank = fitted
    if rank == 0:
        components = np.zeros((1, forest.n_leaves))
        components[0, 0] = 1.0
        variances = np.zeros(1)
    else:
        components = Vt[:d_e]
        denom = max(X_fit.shape[0] - 1, 1)
        variances = s[:d_e] ** 2 / denom
    Z = _project(forest, np.asarray(X_all, dtype=float), mean, components)
    params = {
        "leaf_offsets": forest.leaf_offsets,
        "mean": mean,
        "components": components,
        "explained_variance": variances,
        "rank": rank,
    }
    return Embedding(Z=Z, source=LEAF_PCA, params=params)


def leaf_embedding(forest, X_fit, X_all, d_e):
    """PCA of one-hot leaf memberships, fitted on X_fit, applied to X_all."""
    if forest.kind != FOREST:
        raise ConfigError("leaf_embedding needs a fitted forest")
    if d_e < 1:
        raise ConfigError("d_e must be >= 1")
    fitted = _leaf_pca(forest, np.asarray(X_fit, dtype=float))
    rank = fitted[3]
    if d_e > max(rank, 1):
        logger.warning("leaf embedding: d_e=%d exceeds leaf-matrix rank %d, clamping", d_e, rank)
        d_e = max(rank, 1)
    return _build(forest, X_fit, X_all, d_e, fitted)


def embedding_for(spec, model, X_fit, X_all):
    if model.kind == LOGISTIC:
        return Embedding(Z=np.asarray(X_all, dtype=float), source=RAW)
    fitted = _leaf_pca(model, np.asarray(X_fit, dtype=float))
    d_e = max(1, min(MAX_LEAF_COMPONENTS, fitted[3]))
    return _build(model, X_fit, X_all, d_e, fitted)
