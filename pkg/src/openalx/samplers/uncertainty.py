import numpy as np

from .._util import make_rng
from ..errors import SamplerError

UNCERTAINTY_KINDS = ("confidence", "margin", "entropy")


def uncertainty_scores(probs, kind):
    """Per-row uncertainty; larger means less decisive."""
    P = np.asarray(probs, dtype=float)
    if P.ndim != 2 or P.shape[1] < 1:
        raise SamplerError(f"probability matrix expected, got shape {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise SamplerError("probability rows must be nonnegative and sum to 1")
    if kind == "confidence":
        return 1.0 - P.max(axis=1)
    if kind == "margin":
        if P.shape[1] == 1:
            return np.zeros(P.shape[0])
        top2 = np.sort(P, axis=1)[:, -2:]
        return 1.0 - (top2[:, 1] - top2[:, 0])
    if kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(P > 0, P * np.log(P), 0.0)
        return -terms.sum(axis=1)
    raise SamplerError(f"unknown uncertainty kind {kind!r}")


def top_k(scores, k):
    """Positions of the k largest scores; ties go to the lowest position."""
    return np.argsort(-np.asarray(scores), kind="stable")[:k]


def check_batch(ctx):
    n_u = len(ctx.unlabeled_idx)
    if ctx.B < 1:
        raise SamplerError("batch size must be positive")
    if ctx.B > n_u:
        raise SamplerError(f"batch size {ctx.B} exceeds {n_u} unlabeled candidates")


def select_random(ctx, seed):
    check_batch(ctx)
    rng = make_rng(seed, "random")
    return rng.choice(np.asarray(ctx.unlabeled_idx), size=ctx.B, replace=False)


def select_uncertainty(ctx, kind):
    check_batch(ctx)
    if ctx.probs is None:
        raise SamplerError("uncertainty sampling needs class probabilities")
    scores = uncertainty_scores(ctx.probs, kind)
    return np.asarray(ctx.unlabeled_idx)[top_k(scores, ctx.B)]
