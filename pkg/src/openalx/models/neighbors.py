import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DimensionError

_CHUNK = 2048


def nearest_reference(reference_X, query_X):
    """Index of, and Euclidean distance to, the nearest reference row per query row.

    Ties resolve to the lowest reference index.
    """
    R = np.asarray(reference_X, dtype=float)
    Q = np.asarray(query_X, dtype=float)
    if R.ndim != 2 or Q.ndim != 2 or R.shape[1] != Q.shape[1]:
        raise DimensionError(f"reference {R.shape} and query {Q.shape} disagree on dimension")
    if R.shape[0] == 0:
        raise DimensionError("reference set is empty")
    idx = np.empty(Q.shape[0], dtype=np.int64)
    dist = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], _CHUNK):
        D = cdist(Q[start : start + _CHUNK], R)
        j = np.argmin(D, axis=1)
        idx[start : start + _CHUNK] = j
        dist[start : start + _CHUNK] = D[np.arange(len(j)), j]
    return idx, dist


def predict_1nn(reference_X, reference_y, query_X, return_distance=False):
    idx, dist = nearest_reference(reference_X, query_X)
    labels = np.asarray(reference_y)[idx]
    if return_distance:
        return labels, dist
    return labels
