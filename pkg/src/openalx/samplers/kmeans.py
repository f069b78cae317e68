"""Weighted Lloyd iterations with weighted k-means++ seeding and optional frozen centroids."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .._util import make_rng
from ..errors import SamplerError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d); the first n_frozen rows are the frozen ones
    assignment: np.ndarray  # centroid index per row
    objective: float
    n_iter: int
    restart: int
    n_frozen: int = 0


def _seed_centroids(Z, w, n_free, frozen, rng):
    n = Z.shape[0]
    centers = [c for c in frozen]
    chosen = []
    if centers:
        D2 = cdist(Z, np.asarray(centers), "sqeuclidean").min(axis=1)
    else:
        D2 = None
    for _ in range(n_free):
        if D2 is None:
            p = w / w.sum()
        else:
            p = w * D2
            total = p.sum()
            if total > 0:
                p = p / total
            else:
                # every weighted point already sits on a centre: draw among unused ones
                p = ((w > 0) & ~np.isin(np.arange(n), chosen)).astype(float)
                if p.sum() == 0:
                    p = (w > 0).astype(float)
                p /= p.sum()
        i = int(rng.choice(n, p=p))
        chosen.append(i)
        centers.append(Z[i])
        d_new = cdist(Z, Z[i : i + 1], "sqeuclidean")[:, 0]
        D2 = d_new if D2 is None else np.minimum(D2, d_new)
    return np.asarray(centers, dtype=float)


def _repair_empty(assign, D2, w, n_frozen, k):
    """Give every empty free cluster the point with the largest weighted distance."""
    counts = np.bincount(assign, minlength=k)
    for j in range(n_frozen, k):
        if counts[j]:
            continue
        movable = (counts[assign] > 1) | (assign < n_frozen)
        cost = np.where(movable, w * D2[np.arange(len(assign)), assign], -np.inf)
        if not np.isfinite(cost).any():
            raise SamplerError("cannot repair an empty cluster: too few points")
        i = int(np.argmax(cost))
        counts[assign[i]] -= 1
        assign[i] = j
        counts[j] = 1
    return assign


def _update(Z, w, assign, centroids, n_frozen):
    new = centroids.copy()
    for j in range(n_frozen, len(centroids)):
        members = assign == j
        wj = w[members]
        if wj.sum() > 0:
            new[j] = (wj[:, None] * Z[members]).sum(axis=0) / wj.sum()
        else:
            new[j] = Z[members].mean(axis=0)
    return new


def _lloyd(Z, w, centroids, n_frozen, max_iter, tol):
    k = len(centroids)
    assign = None
    prev_obj = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        D2 = cdist(Z, centroids, "sqeuclidean")
        new_assign = _repair_empty(np.argmin(D2, axis=1), D2, w, n_frozen, k)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centroids = _update(Z, w, assign, centroids, n_frozen)
        obj = float(np.sum(w * ((Z - centroids[assign]) ** 2).sum(axis=1)))
        if prev_obj - obj <= tol * max(abs(prev_obj), 1e-300) and np.isfinite(prev_obj):
            break
        prev_obj = obj
    return centroids, assign, n_iter


def weighted_kmeans(Z, w, k, seed=0, max_iter=100, tol=1e-6, n_init=3, frozen=None):
    """Minimise sum_i w_i ||z_i - c_a(i)||^2 over k centroids.

    ``frozen`` rows (if any) are the first centroids; Lloyd steps never move
    them but points may be assigned to them.  The best of ``n_init`` seeded
    restarts by objective is returned (ties: earliest restart).
    """
    Z = np.asarray(Z, dtype=float)
    w = np.asarray(w, dtype=float)
    if Z.ndim != 2 or len(w) != Z.shape[0]:
        raise SamplerError("weights and rows disagree")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise SamplerError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise SamplerError("all weights are zero")
    frozen = np.zeros((0, Z.shape[1])) if frozen is None else np.asarray(frozen, dtype=float)
    n_frozen = len(frozen)
    n_free = k - n_frozen
    if n_free < 1:
        raise SamplerError("need at least one free centroid")
    if n_free > np.count_nonzero(w > 0):
        raise SamplerError(f"k={n_free} free centroids exceed {np.count_nonzero(w > 0)} positive-weight rows")
    wn = w / w.max()
    best = None
    for r in range(n_init):
        rng = make_rng(seed, "kmeans-restart", r)
        init = _seed_centroids(Z, wn, n_free, frozen, rng)
        centroids, assign, n_iter = _lloyd(Z, wn, init, n_frozen, max_iter, tol)
        obj = float(np.sum(w * ((Z - centroids[assign]) ** 2).sum(axis=1)))
        if best is None or obj < best.objective:
            best = KMeansResult(centroids, assign, obj, n_iter, r, n_frozen)
    return best


def nearest_member(Z, result, cluster, labels):
    """Member of ``cluster`` closest to its centroid; ties go to the smallest label."""
    members = np.flatnonzero(result.assignment == cluster)
    dist = np.sqrt(((Z[members] - result.centroids[cluster]) ** 2).sum(axis=1))
    tied = members[dist == dist.min()]
    return tied[np.argmin(np.asarray(labels)[tied])]
