"""Batch query strategies.

Every selector returns exactly ``ctx.B`` distinct indices drawn from
``ctx.unlabeled_idx`` and is a pure function of its inputs and seed.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, SamplerError
from ..models.neighbors import nearest_reference
from .kmeans import KMeansResult, nearest_member, weighted_kmeans
from .uncertainty import (
    UNCERTAINTY_KINDS,
    check_batch,
    select_random,
    select_uncertainty,
    top_k,
    uncertainty_scores,
)

logger = logging.getLogger(__name__)

SAMPLER_KINDS = ("random", "confidence", "margin", "entropy", "kmeans", "wkmeans", "iwkmeans", "kcenter")
NEEDS_EMBEDDING = ("kmeans", "wkmeans", "iwkmeans", "kcenter")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    beta: float = 10
    uncertainty: str = "margin"
    max_iter: int = 100
    tol: float = 1e-6
    n_init: int = 3

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.kind!r}; valid: {', '.join(SAMPLER_KINDS)}")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.uncertainty not in UNCERTAINTY_KINDS:
            raise ConfigError(f"unknown uncertainty kind {self.uncertainty!r}")
        if self.max_iter < 1 or self.n_init < 1 or self.tol < 0:
            raise ConfigError("kmeans parameters must be positive")

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind in ("kmeans", "wkmeans", "iwkmeans"):
            out.update(max_iter=self.max_iter, tol=self.tol, n_init=self.n_init)
        if self.kind in ("wkmeans", "iwkmeans"):
            out.update(beta=self.beta, uncertainty=self.uncertainty)
        return out

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(kind=d)
        return cls(**d)


@dataclass
class QueryContext:
    unlabeled_idx: np.ndarray
    B: int
    probs: np.ndarray = None
    Z_unlabeled: np.ndarray = None
    Z_labeled: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.unlabeled_idx = np.asarray(self.unlabeled_idx, dtype=np.int64)
        n_u = len(self.unlabeled_idx)
        if self.probs is not None and len(self.probs) != n_u:
            raise SamplerError(f"{len(self.probs)} probability rows for {n_u} candidates")
        if self.Z_unlabeled is not None and len(self.Z_unlabeled) != n_u:
            raise SamplerError(f"{len(self.Z_unlabeled)} embedding rows for {n_u} candidates")


def _require_embedding(ctx):
    if ctx.Z_unlabeled is None:
        raise SamplerError("this sampler needs candidate embeddings")
    return np.asarray(ctx.Z_unlabeled, dtype=float)


def select_kcenter(ctx):
    """Greedy farthest-point selection against the labeled set."""
    check_batch(ctx)
    Z = _require_embedding(ctx)
    if ctx.Z_labeled is None or len(ctx.Z_labeled) == 0:
        raise SamplerError("k-center needs a nonempty labeled set")
    _, min_dist = nearest_reference(ctx.Z_labeled, Z)
    picked = []
    for _ in range(ctx.B):
        j = int(np.argmax(min_dist))
        picked.append(j)
        d_new = np.sqrt(((Z - Z[j]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, d_new)
        min_dist[picked] = -np.inf
    return ctx.unlabeled_idx[picked]


def _representatives(Z, result, labels, n_frozen, B):
    return [nearest_member(Z, result, n_frozen + j, labels) for j in range(B)]


def select_kmeans(ctx, seed, spec=None):
    check_batch(ctx)
    spec = spec or SamplerSpec("kmeans")
    Z = _require_embedding(ctx)
    result = weighted_kmeans(Z, np.ones(len(Z)), ctx.B, seed, spec.max_iter, spec.tol, spec.n_init)
    return ctx.unlabeled_idx[_representatives(Z, result, ctx.unlabeled_idx, 0, ctx.B)]


def _weighted_batch(ctx, seed, spec, frozen):
    check_batch(ctx)
    if ctx.probs is None:
        raise SamplerError(f"{spec.kind} needs class probabilities")
    Z_all = _require_embedding(ctx)
    scores = uncertainty_scores(ctx.probs, spec.uncertainty)
    keep = top_k(scores, min(int(spec.beta * ctx.B), len(scores)))
    w = scores[keep]
    if np.count_nonzero(w > 0) < ctx.B:
        logger.warning(
            "%s: only %d candidates carry positive uncertainty for a batch of %d; "
            "falling back to %s sampling", spec.kind, np.count_nonzero(w > 0), ctx.B, spec.uncertainty,
        )
        return select_uncertainty(ctx, spec.uncertainty)
    Z = Z_all[keep]
    labels = ctx.unlabeled_idx[keep]
    n_frozen = 0 if frozen is None else len(frozen)
    result = weighted_kmeans(
        Z, w, n_frozen + ctx.B, seed, spec.max_iter, spec.tol, spec.n_init, frozen=frozen
    )
    return labels[_representatives(Z, result, labels, n_frozen, ctx.B)]


def select_wkmeans(ctx, beta=10, seed=0, spec=None):
    """Uncertainty prefilter then uncertainty-weighted KMeans, one pick per cluster."""
    spec = spec or SamplerSpec("wkmeans", beta=beta)
    return _weighted_batch(ctx, seed, spec, frozen=None)


def select_iwkmeans(ctx, beta=10, seed=0, spec=None):
    """As select_wkmeans, with the labeled points acting as frozen centroids."""
    spec = spec or SamplerSpec("iwkmeans", beta=beta)
    frozen = None
    if ctx.Z_labeled is not None and len(ctx.Z_labeled):
        frozen = np.asarray(ctx.Z_labeled, dtype=float)
    return _weighted_batch(ctx, seed, spec, frozen=frozen)


def select(spec, ctx, seed):
    """Dispatch a sampler spec to its selector."""
    kind = spec.kind
    if kind == "random":
        out = select_random(ctx, seed)
    elif kind in UNCERTAINTY_KINDS:
        out = select_uncertainty(ctx, kind)
    elif kind == "kmeans":
        out = select_kmeans(ctx, seed, spec)
    elif kind == "wkmeans":
        out = select_wkmeans(ctx, seed=seed, spec=spec)
    elif kind == "iwkmeans":
        out = select_iwkmeans(ctx, seed=seed, spec=spec)
    elif kind == "kcenter":
        out = select_kcenter(ctx)
    else:
        raise SamplerError(f"unknown sampler {kind!r}")
    out = np.asarray(out, dtype=np.int64)
    if len(out) != ctx.B or len(np.unique(out)) != ctx.B:
        raise SamplerError(f"{kind} returned {len(np.unique(out))} distinct indices, expected {ctx.B}")
    return out


__all__ = [
    "KMeansResult",
    "NEEDS_EMBEDDING",
    "QueryContext",
    "SAMPLER_KINDS",
    "SamplerSpec",
    "select",
    "select_iwkmeans",
    "select_kcenter",
    "select_kmeans",
    "select_random",
    "select_uncertainty",
    "select_wkmeans",
    "uncertainty_scores",
    "weighted_kmeans",
]
