"""Per-iteration evaluation metrics, supervised and unsupervised."""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import MetricError

# names as written to result files
METRIC_NAMES = {
    "accuracy": "Accuracy",
    "f_score": "F-Score",
    "agreement": "Agreement",
    "contradictions": "Contradictions",
    "hard_exploration": "Hard-Exploration",
    "top_exploration": "Top-Exploration",
    "violations": "Violation",
}
ZERO_VARIANCE_HALF_WIDTH = 1e-12


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise MetricError("empty input")
    return a, b


def accuracy(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def f_score(pred, truth):
    """Macro F1 over the classes present in ``truth``."""
    pred, truth = _pair(pred, truth)
    scores = []
    for c in np.unique(truth):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def agreement(model_pred, knn_pred):
    a, b = _pair(model_pred, knn_pred)
    return float(np.mean(a == b))


def contradictions(pred_prev, pred_curr):
    a, b = _pair(pred_prev, pred_curr)
    return float(np.mean(a != b))


def hard_exploration(knn_prev, knn_curr):
    return contradictions(knn_prev, knn_curr)


def top_exploration(dist_prev, dist_curr):
    """Mean shrinkage of the test-to-nearest-labeled distance between iterations."""
    a, b = _pair(dist_prev, dist_curr)
    delta = a.astype(float) - b.astype(float)
    if np.any(delta < 0):
        raise MetricError("nearest-labeled distance grew: the labeled pool shrank")
    return float(np.mean(delta))


def conformance_violations(test_X, labeled_X, alpha=3.0, min_labeled=None):
    """Mean number of test-set conformance bounds broken per labeled sample.

    Bounds are mean +- alpha*std of the test rows projected on each
    eigenvector of their covariance.  Returns 0 when fewer than
    ``min_labeled`` (default d+1) labeled rows are available.
    """
    T = np.asarray(test_X, dtype=float)
    L = np.asarray(labeled_X, dtype=float)
    if T.ndim != 2 or T.shape[0] == 0:
        raise MetricError("test_X must be a nonempty matrix")
    d = T.shape[1]
    if min_labeled is None:
        min_labeled = d + 1
    if L.shape[0] < min_labeled:
        return 0.0
    if L.ndim != 2 or L.shape[1] != d:
        raise MetricError(f"labeled rows have shape {L.shape}, test rows have {d} columns")
    mu = T.mean(axis=0)
    cov = np.cov(T - mu, rowvar=False, ddof=1) if T.shape[0] > 1 else np.zeros((d, d))
    cov = np.atleast_2d(cov)
    _, V = np.linalg.eigh(cov)
    V = V[:, ::-1]
    proj_ref = (T - mu) @ V
    centre = proj_ref.mean(axis=0)
    spread = proj_ref.std(axis=0, ddof=1) if T.shape[0] > 1 else np.zeros(d)
    half = np.maximum(alpha * spread, ZERO_VARIANCE_HALF_WIDTH)
    proj = (L - mu) @ V
    outside = np.abs(proj - centre) > half
    return float(outside.sum(axis=1).mean())


@dataclass
class IterationSnapshot:
    iteration: int
    model_pred: np.ndarray
    knn_pred: np.ndarray
    nn_dist: np.ndarray
    labeled_X: np.ndarray
    test_X: np.ndarray

    def __post_init__(self):
        m = len(self.test_X)
        for name in ("model_pred", "knn_pred", "nn_dist"):
            if len(getattr(self, name)) != m:
                raise MetricError(f"{name} has {len(getattr(self, name))} entries, test set has {m}")


@dataclass
class MetricRecord:
    accuracy: float
    f_score: float
    agreement: float
    contradictions: float
    hard_exploration: float
    top_exploration: float
    violations: float

    def to_named(self):
        """Metrics keyed by their published names."""
        return {METRIC_NAMES[k]: v for k, v in asdict(self).items()}

    @classmethod
    def from_named(cls, named):
        reverse = {v: k for k, v in METRIC_NAMES.items()}
        return cls(**{reverse[k]: float(v) for k, v in named.items()})


def compute_record(snapshot_prev, snapshot_curr, truth, alpha=3.0):
    """All metrics for ``snapshot_curr``; pass ``snapshot_prev=None`` at iteration 0."""
    cur = snapshot_curr
    if snapshot_prev is None:
        contra = hard = top = 0.0
    else:
        prev = snapshot_prev
        if prev.test_X.shape != cur.test_X.shape or not np.array_equal(prev.test_X, cur.test_X):
            raise MetricError("snapshots were taken on different test sets")
        contra = contradictions(prev.model_pred, cur.model_pred)
        hard = hard_exploration(prev.knn_pred, cur.knn_pred)
        top = top_exploration(prev.nn_dist, cur.nn_dist)
    return MetricRecord(
        accuracy=accuracy(cur.model_pred, truth),
        f_score=f_score(cur.model_pred, truth),
        agreement=agreement(cur.model_pred, cur.knn_pred),
        contradictions=contra,
        hard_exploration=hard,
        top_exploration=top,
        violations=conformance_violations(cur.test_X, cur.labeled_X, alpha=alpha),
    )
